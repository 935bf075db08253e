#include "phantom/bundle.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace phantom::dataio {

using nlohmann::json;
using model::FeatureStats;
using model::ModelSpec;

namespace {

json layer_to_json(const nn::LayerSpec& l) {
    json j{{"type", nn::to_string(l.kind)}};
    switch (l.kind) {
        case nn::LayerKind::Conv1D:
            j["filters"] = l.filters;
            j["kernel"] = l.kernel;
            j["activation"] = nn::to_string(l.activation);
            break;
        case nn::LayerKind::MaxPool1D: j["pool"] = l.pool; break;
        case nn::LayerKind::Upsample1D: j["size"] = l.size; break;
        case nn::LayerKind::Dropout: j["rate"] = l.rate; break;
        case nn::LayerKind::Dense:
            j["units"] = l.units;
            j["activation"] = nn::to_string(l.activation);
            break;
        case nn::LayerKind::Activation: j["activation"] = nn::to_string(l.activation); break;
    }
    return j;
}

template <class T>
T field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw DataError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(path + ": missing field \"" + key + "\"");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw DataError(path + "." + key + ": wrong type");
    }
}

json stats_json(const FeatureStats& s) { return json{{"mean", s.mean}, {"scale", s.scale}}; }

FeatureStats stats_from(const json& j, const std::string& path) {
    return {field<std::vector<double>>(j, "mean", path), field<std::vector<double>>(j, "scale", path)};
}

json parse(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(what + ": $: " + e.what());
    }
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw DataError(p.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void dump_to(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError(p.string() + ": cannot open for writing");
    os << text;
    if (!os) throw DataError(p.string() + ": write failed");
}

}  // namespace

std::string spec_to_json(const ModelSpec& spec, const model::PhantomModel* built) {
    json j;
    j["format"] = "phantom-model";
    j["version"] = kBundleVersion;
    j["kind"] = model::to_string(spec.kind);
    j["output_mode"] = model::to_string(spec.output_mode);
    j["hidden_activation"] = nn::to_string(spec.hidden_activation);
    j["seed"] = spec.seed;
    j["weight_decay"] = spec.weight_decay;
    j["channels"] = json{{"inputs", spec.channels.inputs}, {"target", spec.channels.target}};
    json wiring = json::array();
    for (const auto& w : spec.wiring) wiring.push_back({w.input, w.output});
    j["partition"] = json{{"subsystems", spec.subsystems}, {"wiring", std::move(wiring)}};
    if (built) {
        json units = json::array();
        for (const auto& u : built->units()) {
            json layers = json::array();
            for (const auto& l : u.layers) layers.push_back(layer_to_json(l));
            units.push_back(json{{"name", u.name}, {"input_shape", {u.in_shape.length, u.in_shape.channels}},
                                 {"layers", std::move(layers)}});
        }
        j["units"] = std::move(units);
    }
    return j.dump(2) + "\n";
}

ModelSpec spec_from_json(const std::string& text) {
    const json j = parse(text, "spec.json");
    if (field<std::string>(j, "format", "$") != "phantom-model") throw DataError("$.format: not a phantom model spec");
    const int version = field<int>(j, "version", "$");
    if (version != kBundleVersion) throw DataError("$.version: unsupported version " + std::to_string(version));
    ModelSpec s;
    try {
        s.kind = model::arch_from_string(field<std::string>(j, "kind", "$"));
        s.output_mode = model::output_mode_from_string(field<std::string>(j, "output_mode", "$"));
        s.hidden_activation = nn::activation_from_string(field<std::string>(j, "hidden_activation", "$"));
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("$: ") + e.what());
    }
    s.seed = field<std::uint64_t>(j, "seed", "$");
    s.weight_decay = field<double>(j, "weight_decay", "$");
    if (!j.contains("channels")) throw DataError("$: missing field \"channels\"");
    const json& ch = j.at("channels");
    s.channels.inputs = field<std::vector<std::vector<std::string>>>(ch, "inputs", "$.channels");
    s.channels.target = field<std::vector<std::string>>(ch, "target", "$.channels");
    if (!j.contains("partition")) throw DataError("$: missing field \"partition\"");
    const json& part = j.at("partition");
    s.subsystems = field<std::vector<std::vector<std::string>>>(part, "subsystems", "$.partition");
    const auto wires = field<std::vector<std::vector<std::size_t>>>(part, "wiring", "$.partition");
    for (std::size_t i = 0; i < wires.size(); ++i) {
        if (wires[i].size() != 2) throw DataError("$.partition.wiring[" + std::to_string(i) + "]: expected [input, output]");
        s.wiring.push_back({wires[i][0], wires[i][1]});
    }
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("$: ") + e.what());
    }
    return s;
}

std::string stats_to_json(const FeatureStats& input, const FeatureStats& target) {
    return json{{"input", stats_json(input)}, {"target", stats_json(target)}}.dump(2) + "\n";
}

std::string report_to_json(const model::TrainReport& r, bool include_timing) {
    json j;
    j["epochs"] = r.train_loss.size();
    j["train_loss"] = r.train_loss;
    j["test_loss"] = r.test_loss;
    j["convergence_epoch"] = r.convergence ? json(*r.convergence) : json(nullptr);
    j["diverged"] = r.diverged;
    if (r.diverged) j["diverged_epoch"] = r.diverged_epoch;
    j["steps"] = r.steps;
    if (include_timing) {
        j["step_us"] = r.step_us;
        j["total_seconds"] = r.total_seconds;
    }
    return j.dump(2) + "\n";
}

void save_bundle(const std::filesystem::path& dir, const model::PhantomModel& m, const model::TrainReport* report) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError(dir.string() + ": cannot create directory: " + ec.message());
    dump_to(dir / "spec.json", spec_to_json(m.spec(), &m));
    dump_to(dir / "norm.json", stats_to_json(m.input_stats(), m.target_stats()));
    for (std::size_t i = 0; i < m.networks().size(); ++i) {
        const auto path = dir / ("pipeline_" + std::to_string(i) + ".phnn");
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError(path.string() + ": cannot open for writing");
        nn::Network copy = m.networks()[i];
        nn::write_parameters(os, copy);
        if (!os) throw DataError(path.string() + ": write failed");
    }
    if (report) dump_to(dir / "report.json", report_to_json(*report));
}

model::PhantomModel load_bundle(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + ": model bundle not found");
    const ModelSpec spec = spec_from_json(slurp(dir / "spec.json"));
    model::PhantomModel m;
    try {
        m = model::build_model(spec);
    } catch (const std::invalid_argument& e) {
        throw DataError((dir / "spec.json").string() + ": " + e.what());
    }
    const json norm = parse(slurp(dir / "norm.json"), "norm.json");
    if (!norm.contains("input") || !norm.contains("target")) throw DataError("norm.json: $: missing input/target");
    try {
        m.set_stats(stats_from(norm.at("input"), "$.input"), stats_from(norm.at("target"), "$.target"));
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("norm.json: ") + e.what());
    }
    for (std::size_t i = 0; i < m.networks().size(); ++i) {
        const auto path = dir / ("pipeline_" + std::to_string(i) + ".phnn");
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError(path.string() + ": missing parameter file");
        try {
            nn::read_parameters(is, m.networks()[i]);
        } catch (const std::runtime_error& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    return m;
}

}  // namespace phantom::dataio
