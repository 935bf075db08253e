#pragma once

#include "phantom/nn/tensor.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace phantom::nn {

enum class LayerKind : std::uint32_t { Conv1D = 1, MaxPool1D = 2, Upsample1D = 3, Dropout = 4, Dense = 5, Activation = 6 };
enum class ActivationKind : std::uint32_t { Linear = 0, Relu = 1 };
enum class Mode { Train, Infer };

std::string to_string(LayerKind k);
std::string to_string(ActivationKind a);
LayerKind layer_kind_from_string(const std::string& s);
ActivationKind activation_from_string(const std::string& s);

/// Declarative layer description. Only the fields relevant to `kind` are used.
struct LayerSpec {
    LayerKind kind = LayerKind::Activation;
    std::size_t filters = 0;  // Conv1D
    std::size_t kernel = 0;   // Conv1D, always "same" zero padding
    std::size_t pool = 0;     // MaxPool1D
    std::size_t size = 0;     // Upsample1D
    double rate = 0.0;        // Dropout
    std::size_t units = 0;    // Dense
    ActivationKind activation = ActivationKind::Linear;  // Conv1D, Dense, Activation

    static LayerSpec conv1d(std::size_t filters, std::size_t kernel, ActivationKind act = ActivationKind::Linear);
    static LayerSpec maxpool1d(std::size_t pool);
    static LayerSpec upsample1d(std::size_t size);
    static LayerSpec dropout(double rate);
    static LayerSpec dense(std::size_t units, ActivationKind act = ActivationKind::Linear);
    static LayerSpec activation_layer(ActivationKind act);

    /// Throws std::invalid_argument for out-of-range hyperparameters.
    void validate() const;
    bool operator==(const LayerSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Kernels. Weight layouts: conv (K, Cin, Cout), dense (n, m), both row-major.
// ---------------------------------------------------------------------------

/// out[i,o] = b[o] + sum_{k,c} x[i+k-(K-1)/2, c] * w[k,c,o], zero outside x.
///
/// `segment` > 0 treats x as samples of `segment` rows stacked along the
/// length axis, each padded independently; 0 means one sample.
void conv1d_forward(const Tensor2& x, std::span<const double> w, std::span<const double> b, std::size_t kernel,
                    Tensor2& out, std::size_t segment = 0);
Tensor2 conv1d_forward(const Tensor2& x, std::span<const double> w, std::span<const double> b, std::size_t kernel,
                       std::size_t segment = 0);

struct ConvGradients {
    Tensor2 grad_x;
    std::vector<double> grad_w;
    std::vector<double> grad_b;
};

/// Gradients of conv1d_forward given the cached input and the upstream gradient.
ConvGradients conv1d_backward(const Tensor2& grad_out, const Tensor2& x, std::span<const double> w, std::size_t kernel,
                              std::size_t segment = 0);

/// Accumulating variant: adds into grad_w/grad_b and overwrites grad_x.
void conv1d_backward_accumulate(const Tensor2& grad_out, const Tensor2& x, std::span<const double> w,
                                std::size_t kernel, Tensor2& grad_x, std::span<double> grad_w,
                                std::span<double> grad_b, std::size_t segment = 0);

struct PoolResult {
    Tensor2 out;
    std::vector<std::uint32_t> argmax;  // input row per output element
};

/// Per-channel max over disjoint windows; ties resolve to the lowest row.
PoolResult maxpool1d(const Tensor2& x, std::size_t pool);
Tensor2 maxpool1d_backward(const Tensor2& grad_out, const std::vector<std::uint32_t>& argmax, Shape input);

/// Nearest-neighbour repetition of every row `size` times.
Tensor2 upsample1d(const Tensor2& x, std::size_t size);
Tensor2 upsample1d_backward(const Tensor2& grad_out, std::size_t size);

struct DropoutResult {
    Tensor2 out;
    std::vector<double> mask;  // 0 or 1/(1-rate) per element; empty in infer mode
};

/// Inverted dropout; infer mode (or rate 0) is the identity.
DropoutResult dropout(const Tensor2& x, double rate, Mode mode, Rng& rng);

/// activation(x W + b) on the flattened input (a single sample).
std::vector<double> dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                                  ActivationKind act);

void apply_activation(ActivationKind act, std::span<double> v);

// ---------------------------------------------------------------------------
// Stateful layers used by Network.
// ---------------------------------------------------------------------------

/// One trainable tensor with its gradient accumulator.
struct ParamRef {
    std::span<double> value;
    std::span<double> grad;
    std::vector<std::size_t> shape;
    bool is_weight = true;  // biases are excluded from weight decay
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerSpec spec() const = 0;
    /// Shape produced for the given input; throws std::invalid_argument.
    virtual Shape output_shape(Shape in) const = 0;
    /// Allocates parameters for the input shape and draws Glorot-uniform weights.
    virtual void build(Shape /*in*/, Rng& /*init*/) {}

    /// Caches what backward needs; `x` must stay alive and unchanged until
    /// backward. It may hold several samples stacked along the length axis;
    /// the sample shape is the one given to build().
    virtual const Tensor2& forward(const Tensor2& x, Mode mode, Rng& rng) = 0;
    /// Accumulates parameter gradients and returns the input gradient. With
    /// `input_grad` false the returned tensor is unspecified and may be skipped.
    virtual const Tensor2& backward(const Tensor2& grad_out, bool input_grad) = 0;
    /// Stateless inference path.
    virtual void infer(const Tensor2& x, Tensor2& out) const = 0;

    virtual std::vector<ParamRef> parameters() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

}  // namespace phantom::nn
