#pragma once

#include "phantom/model.hpp"

#include <filesystem>
#include <string>

namespace phantom::dataio {

// A model bundle is a directory holding
//   spec.json          architecture, channels, partition and layer stacks
//   norm.json          input/target standardization statistics
//   pipeline_<i>.phnn  parameters of unit i (binary, see nn::write_parameters)
//   report.json        training history (optional)

inline constexpr int kBundleVersion = 1;

std::string spec_to_json(const model::ModelSpec& spec, const model::PhantomModel* built = nullptr);
/// Throws DataError with a JSON path on schema violations.
model::ModelSpec spec_from_json(const std::string& text);

std::string stats_to_json(const model::FeatureStats& input, const model::FeatureStats& target);

/// Deterministic fields only; timings are added when `include_timing` is set.
std::string report_to_json(const model::TrainReport& report, bool include_timing = false);

void save_bundle(const std::filesystem::path& dir, const model::PhantomModel& model,
                 const model::TrainReport* report = nullptr);
/// Throws DataError if the directory or any required file is missing or
/// inconsistent with the stored spec.
model::PhantomModel load_bundle(const std::filesystem::path& dir);

}  // namespace phantom::dataio
