#pragma once

#include "phantom/nn/layers.hpp"
#include "phantom/nn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

namespace phantom::nn {

/// A sequential stack of layers with a fixed input shape.
///
/// Inputs may stack B samples along the length axis, (B * L, C); outputs
/// stack the same way. forward/backward keep per-layer caches and are
/// single-writer; predict() only reads parameters and may be called
/// concurrently on a shared network.
class Network {
public:
    Network() = default;
    /// Validates the shape chain and draws initial weights from `seed`.
    /// Dropout masks use a separate stream derived from the same seed.
    Network(Shape input, const std::vector<LayerSpec>& specs, std::uint64_t seed);

    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    Shape input_shape() const { return input_; }
    Shape output_shape() const { return shapes_.back(); }
    /// Input shape followed by every layer's output shape.
    const std::vector<Shape>& shape_chain() const { return shapes_; }
    std::vector<LayerSpec> specs() const;
    std::size_t layer_count() const { return layers_.size(); }

    const Tensor2& forward(const Tensor2& x, Mode mode);
    /// Accumulates parameter gradients; returns the gradient w.r.t. the input,
    /// which is left uncomputed (and unspecified) when `input_grad` is false.
    const Tensor2& backward(const Tensor2& grad_out, bool input_grad = true);
    Tensor2 predict(const Tensor2& x) const;

    void zero_grad();
    std::vector<ParamRef> parameters();
    std::size_t parameter_count() const;
    /// Concatenated parameter values in layer order.
    std::vector<double> flat_parameters() const;

    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

private:
    void check_input(const Tensor2& x) const;

    Shape input_;
    std::vector<Shape> shapes_;
    std::vector<std::unique_ptr<Layer>> layers_;
    Rng dropout_rng_;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossResult {
    double value = 0.0;
    Tensor2 grad;
};

/// Mean squared error with gradient 2 (pred - target) / N.
LossResult mse_loss(const Tensor2& pred, const Tensor2& target);

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { Adam, SGD };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // L2 coefficient on weights (not biases)
};

struct OptimizerState {
    OptimizerConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;

    explicit OptimizerState(OptimizerConfig c = {}) : config(c) {}
};

/// One update of every parameter tensor from its accumulated gradient.
/// Weight decay adds `weight_decay * w` to the gradient of weight tensors.
void optimizer_step(std::vector<ParamRef>& params, OptimizerState& state);
/// Single flat parameter vector (treated as a weight tensor).
void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    double step = 1e-5;
    bool include_input = true;
    /// Called with the analytic parameter gradients before comparison;
    /// used to inject faults when testing the checker itself.
    std::function<void(std::vector<ParamRef>&)> corrupt;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

/// Compares backprop gradients of mse_loss(net(input), target) with central
/// differences over every parameter (and input element). Relative error is
/// |analytic - numeric| / max(1, |analytic|). Runs in infer mode.
GradCheckResult grad_check(Network& net, const Tensor2& input, const Tensor2& target, const GradCheckOptions& opts = {});

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Little-endian "PHNN" parameter layout:
///   magic "PHNN", u32 version, u32 layer count, then per layer
///   u32 kind, u32 rank, rank x u32 weight dims, u32 bias length,
///   weights (f64), bias (f64).
inline constexpr std::uint32_t kParameterFormatVersion = 1;

void write_parameters(std::ostream& os, Network& net);
/// Loads values into a network of identical architecture; throws
/// std::runtime_error on any layout mismatch.
void read_parameters(std::istream& is, Network& net);

}  // namespace phantom::nn
