#pragma once

#include "phantom/dataio.hpp"
#include "phantom/kinematics.hpp"
#include "phantom/musculo.hpp"
#include "phantom/nn/network.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace phantom::model {

enum class ArchKind { MLP, DAE, VHNN2, VHNN4 };

std::string to_string(ArchKind k);
/// Accepts the canonical names (case-insensitive); throws std::invalid_argument.
ArchKind arch_from_string(const std::string& s);

/// How the final conv maps onto the target joints.
///   Default: one filter per coordinate, output (J_out, 3).
///   PaperLiteral: a single filter whose output column holds the target
///   joints' coordinates flattened joint-major, output (3 J_out, 1).
enum class OutputMode { Default, PaperLiteral };

std::string to_string(OutputMode m);
OutputMode output_mode_from_string(const std::string& s);

/// Enabled input channels x1..xn and the disabled target channel, by joint name.
struct ChannelSet {
    std::vector<std::vector<std::string>> inputs;
    std::vector<std::string> target;

    /// Input joints in stacking order (x1, then x2, ...).
    std::vector<std::string> input_joints() const;
    /// Throws std::invalid_argument on empty channels, duplicates, or overlap
    /// between inputs and target.
    void validate() const;
    bool operator==(const ChannelSet&) const = default;
};

/// Synthetic-skeleton channels. Inputs: proximal, middle and distal arm
/// joints (left then right). Target: every leg joint in Default mode, or
/// hips/knees/ankles in PaperLiteral mode.
ChannelSet default_channels(OutputMode mode = OutputMode::Default);

/// One independently trained sub-network.
struct Pipeline {
    std::vector<std::string> inputs;   // channel input order
    std::vector<std::string> outputs;  // channel target order
    bool operator==(const Pipeline&) const = default;
};

struct ModelSpec {
    ArchKind kind = ArchKind::VHNN2;
    ChannelSet channels = default_channels();
    OutputMode output_mode = OutputMode::Default;
    nn::ActivationKind hidden_activation = nn::ActivationKind::Relu;
    std::uint64_t seed = 7;
    double weight_decay = 0.0;

    /// VHNN kinds: joint-name subsystems and input->output wires into them.
    std::vector<std::vector<std::string>> subsystems;
    std::vector<musculo::Wire> wiring;

    /// Pipelines in wiring order (empty for MLP/DAE).
    std::vector<Pipeline> pipelines() const;
    /// Checks channels, wiring shape and pipeline counts; throws std::invalid_argument.
    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

/// Spec with the default weight decay for `kind` (1e-4 for the MLP).
ModelSpec make_spec(ArchKind kind, const ChannelSet& channels = default_channels(),
                    OutputMode mode = OutputMode::Default, std::uint64_t seed = 7);

/// Clusters the input joints and the target joints into two subsystems each
/// by speed correlation, then wires them: one-to-one by strongest correlation
/// (VHNN2) or all pairs (VHNN4). No-op for MLP/DAE.
void derive_partition(ModelSpec& spec, const MotionSequence& seq);

/// Per-feature affine standardization; features are joint-major (j*3 + c).
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> scale;

    void validate() const;
    bool operator==(const FeatureStats&) const = default;
};

/// (J, 3) tensor of positions -> standardized, and back.
nn::Tensor2 standardize(const nn::Tensor2& raw, const FeatureStats& s);
nn::Tensor2 destandardize(const nn::Tensor2& z, const FeatureStats& s);

enum class Layout { Rows, FlatRow, FlatColumn };

/// Where a network reads from and writes to in the (J, 3) model tensors.
struct Unit {
    std::string name;
    std::vector<std::size_t> in_rows;   // indices into the input joints
    std::vector<std::size_t> out_rows;  // indices into the target joints
    Layout in_layout = Layout::Rows;
    Layout out_layout = Layout::Rows;
    nn::Shape in_shape;
    std::vector<nn::LayerSpec> layers;
    std::uint64_t seed = 0;
};

/// Layer stack of one network for `kind` (the whole model for MLP/DAE, one
/// pipeline for VHNN kinds).
std::vector<nn::LayerSpec> architecture_layers(ArchKind kind, nn::ActivationKind hidden, std::size_t output_filters,
                                               std::size_t mlp_outputs = 0);

class PhantomModel {
public:
    PhantomModel() = default;

    const ModelSpec& spec() const { return spec_; }
    const std::vector<Unit>& units() const { return units_; }
    std::vector<nn::Network>& networks() { return networks_; }
    const std::vector<nn::Network>& networks() const { return networks_; }

    const FeatureStats& input_stats() const { return input_stats_; }
    const FeatureStats& target_stats() const { return target_stats_; }
    void set_stats(FeatureStats input, FeatureStats target);

    std::size_t input_joint_count() const { return input_joints_; }
    std::size_t target_joint_count() const { return target_joints_; }
    std::size_t parameter_count() const;

    /// Standardized (J_in, 3) -> standardized (J_out, 3), dropout off.
    nn::Tensor2 predict_standardized(const nn::Tensor2& x) const;
    /// Raw input positions (channel order) -> raw target positions.
    std::vector<Vec3> predict(const std::vector<Vec3>& inputs) const;

    nn::Tensor2 unit_input(std::size_t u, const nn::Tensor2& x) const;
    nn::Tensor2 unit_target(std::size_t u, const nn::Tensor2& y) const;

private:
    friend PhantomModel build_model(const ModelSpec& spec);

    ModelSpec spec_;
    std::vector<Unit> units_;
    std::vector<nn::Network> networks_;
    FeatureStats input_stats_;
    FeatureStats target_stats_;
    std::size_t input_joints_ = 0;
    std::size_t target_joints_ = 0;
    std::vector<std::size_t> coverage_;  // contributing units per target joint
};

/// Builds networks with fresh seeded weights and identity normalization.
/// Throws std::invalid_argument naming the unit and offending dimension when
/// a shape does not fit the layer stack.
PhantomModel build_model(const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<nn::Tensor2> train_x, train_y, test_x, test_y;  // standardized
    FeatureStats input_stats, target_stats;
};

/// Per frame: input (J_in, 3) and target (J_out, 3) positions. The first
/// `train_fraction` of frames form the training block, the rest the test
/// block. Statistics come from the clean training block (scale 1 where the
/// standard deviation is below 1e-12). Seeded Gaussian noise of
/// `noise_sigma` meters is added to the training inputs only.
Dataset make_dataset(const MotionSequence& seq, const ChannelSet& channels, double noise_sigma,
                     std::uint64_t seed = 7, double train_fraction = 0.8);

/// Raw positions of the named joints in one frame as a (J, 3) tensor.
nn::Tensor2 gather_positions(const SkeletonFrame& frame, const std::vector<JointId>& joints);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::size_t epochs = 1000;
    std::size_t batch = 32;
    std::size_t threads = 1;
    nn::OptimizerConfig optimizer{};  // weight_decay is taken from the spec
    bool track_test_loss = true;
    bool record_step_times = false;
};

inline constexpr std::size_t kConvergenceWindow = 50;
inline constexpr double kConvergenceThreshold = 0.01;

/// First 1-based epoch e > window with relative improvement of the loss over
/// the previous `window` epochs below `threshold`.
std::optional<std::size_t> convergence_epoch(const std::vector<double>& losses, std::size_t window = kConvergenceWindow,
                                             double threshold = kConvergenceThreshold);

struct TrainReport {
    std::vector<double> train_loss;  // per epoch, mean over units
    std::vector<double> test_loss;   // per epoch, mean over units (if tracked)
    std::optional<std::size_t> convergence;
    bool diverged = false;
    std::size_t diverged_epoch = 0;  // 1-based
    std::size_t steps = 0;
    // Timing; not part of the deterministic report file.
    double step_us = 0.0;
    double total_seconds = 0.0;
    std::vector<double> step_times_us;
};

struct UnitData {
    std::vector<nn::Tensor2> x, y;
};

struct FitResult {
    std::vector<double> train_loss, test_loss;
    bool diverged = false;
    std::size_t diverged_epoch = 0;
    std::size_t steps = 0;
    double seconds = 0.0;
    std::vector<double> step_times_us;
};

/// Mini-batch MSE training of a single network with its own shuffling
/// stream. On a non-finite loss the parameters of the last finite epoch are
/// restored and training stops.
FitResult fit(nn::Network& net, const UnitData& train, const UnitData* test, const TrainOptions& opts,
              double weight_decay, std::uint64_t seed);

/// Trains every unit of the model (concurrently when opts.threads > 1) and
/// installs the dataset's normalization statistics.
TrainReport train(PhantomModel& model, const Dataset& data, const TrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

struct StreamStats {
    std::size_t processed = 0;
    std::size_t skipped = 0;
    std::vector<double> latency_us;
    double seconds = 0.0;

    double frames_per_second() const { return seconds > 0.0 ? static_cast<double>(processed) / seconds : 0.0; }
};

/// Pulls raw NDJSON lines until the source returns nullopt; each valid frame
/// produces one sink call with the timestamp and generated target positions.
/// Malformed frames are skipped and counted.
StreamStats generate_stream(const PhantomModel& model, const std::function<std::optional<std::string>()>& source,
                            const std::function<void(double, const std::vector<Vec3>&)>& sink);

/// Same, for already-decoded frames.
StreamStats generate_stream(const PhantomModel& model, const std::vector<dataio::NamedFrame>& frames,
                            const std::function<void(double, const std::vector<Vec3>&)>& sink);

struct Metrics {
    double ground_truth_error = 0.0;  // summed squared error, standardized units
    double mse = 0.0;                 // mean squared error, standardized units
    std::vector<double> per_joint_rmse;  // meters
    double baseline_ground_truth_error = 0.0;  // constant-zero predictor
    std::size_t samples = 0;
};

Metrics evaluate(const PhantomModel& model, const std::vector<nn::Tensor2>& x, const std::vector<nn::Tensor2>& y);

struct BenchOptions {
    TrainOptions train{};
    std::size_t timed_steps = 1000;
    std::size_t warmup_steps = 50;
};

struct BenchRow {
    std::string architecture;
    double step_us = 0.0;           // median
    double seconds_per_1k_epochs = 0.0;
    std::optional<std::size_t> convergence;
    double ground_truth_error = 0.0;
};

/// Median time of one mini-batch update of the whole model (units run one
/// after another), measured on a copy.
double median_step_us(const PhantomModel& model, const Dataset& data, std::size_t batch, std::size_t warmup,
                      std::size_t steps);
/// Same for several models. Timed steps run in short alternating blocks per
/// model so that every model sees the same machine conditions.
std::vector<double> median_step_us(const std::vector<const PhantomModel*>& models, const Dataset& data,
                                   std::size_t batch, std::size_t warmup, std::size_t steps);

/// Trains each spec from scratch, then times all of them interleaved.
/// Throws if fewer than 2 specs.
std::vector<BenchRow> bench(const std::vector<ModelSpec>& specs, const Dataset& data, const BenchOptions& opts = {});

}  // namespace phantom::model
