#include "phantom/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <cmath>
#include <stdexcept>

namespace phantom::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

RowMap rows_of(Tensor2& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.length()), static_cast<Eigen::Index>(t.channels())};
}
ConstRowMap rows_of(const Tensor2& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.length()), static_cast<Eigen::Index>(t.channels())};
}

}  // namespace

std::string to_string(Shape s) { return "(" + std::to_string(s.length) + "," + std::to_string(s.channels) + ")"; }

Tensor2 Tensor2::reshaped(Shape s) const {
    if (s.size() != size()) throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    return Tensor2(s.length, s.channels, data_);
}

bool Tensor2::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv1D: return "conv1d";
        case LayerKind::MaxPool1D: return "maxpool1d";
        case LayerKind::Upsample1D: return "upsample1d";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Dense: return "dense";
        case LayerKind::Activation: return "activation";
    }
    return "unknown";
}

std::string to_string(ActivationKind a) { return a == ActivationKind::Relu ? "relu" : "linear"; }

LayerKind layer_kind_from_string(const std::string& s) {
    for (auto k : {LayerKind::Conv1D, LayerKind::MaxPool1D, LayerKind::Upsample1D, LayerKind::Dropout, LayerKind::Dense,
                   LayerKind::Activation}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}

ActivationKind activation_from_string(const std::string& s) {
    if (s == "relu") return ActivationKind::Relu;
    if (s == "linear") return ActivationKind::Linear;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

LayerSpec LayerSpec::conv1d(std::size_t filters, std::size_t kernel, ActivationKind act) {
    LayerSpec s;
    s.kind = LayerKind::Conv1D;
    s.filters = filters;
    s.kernel = kernel;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::maxpool1d(std::size_t pool) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool1D;
    s.pool = pool;
    return s;
}

LayerSpec LayerSpec::upsample1d(std::size_t size) {
    LayerSpec s;
    s.kind = LayerKind::Upsample1D;
    s.size = size;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t units, ActivationKind act) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::activation_layer(ActivationKind act) {
    LayerSpec s;
    s.kind = LayerKind::Activation;
    s.activation = act;
    return s;
}

void LayerSpec::validate() const {
    switch (kind) {
        case LayerKind::Conv1D:
            if (filters == 0) throw std::invalid_argument("conv1d needs at least one filter");
            if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("conv1d 'same' padding needs an odd kernel");
            break;
        case LayerKind::MaxPool1D:
            if (pool == 0) throw std::invalid_argument("pool size must be >= 1");
            break;
        case LayerKind::Upsample1D:
            if (size == 0) throw std::invalid_argument("upsample size must be >= 1");
            break;
        case LayerKind::Dropout:
            if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
            break;
        case LayerKind::Dense:
            if (units == 0) throw std::invalid_argument("dense needs at least one unit");
            break;
        case LayerKind::Activation:
            break;
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

// Rows are samples stacked along the length axis; a tap never reads across a
// segment boundary, which is what "same" zero padding means per sample.
void im2col(const Tensor2& x, std::size_t segment, std::size_t kernel, RowMatrix& col) {
    const std::size_t rows = x.length(), cin = x.channels(), pad = (kernel - 1) / 2;
    col.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(kernel * cin));
    // The taps of one output row are consecutive input rows, so the valid
    // part of each column row is a single contiguous block of x.
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = r % segment;
        const std::size_t lo = i < pad ? pad - i : 0;
        const std::size_t hi = std::min(kernel, segment - i + pad);
        double* dst = col.data() + r * kernel * cin;
        const double* src = x.row(r + lo - pad) - lo * cin;
        if (lo == 0 && hi == kernel) {
            std::memcpy(dst, src, kernel * cin * sizeof(double));
            continue;
        }
        for (std::size_t j = 0; j < kernel * cin; ++j) {
            dst[j] = (j >= lo * cin && j < hi * cin) ? src[j] : 0.0;
        }
    }
}

// Weights of the convolution that maps the output gradient back to the
// input: wt[k, o, c] = w[K-1-k, c, o].
void flip_weights(std::span<const double> w, std::size_t kernel, std::size_t cin, std::size_t cout,
                  std::vector<double>& wt) {
    wt.resize(w.size());
    for (std::size_t k = 0; k < kernel; ++k) {
        const double* src = w.data() + (kernel - 1 - k) * cin * cout;
        double* dst = wt.data() + k * cout * cin;
        for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t o = 0; o < cout; ++o) dst[o * cin + c] = src[c * cout + o];
        }
    }
}

std::size_t check_conv(const Tensor2& x, std::size_t w_size, std::size_t cout, std::size_t kernel, std::size_t segment) {
    if (kernel % 2 == 0) throw std::invalid_argument("conv1d kernel must be odd");
    if (w_size != kernel * x.channels() * cout) {
        throw std::invalid_argument("conv1d weight size " + std::to_string(w_size) + " does not match K*Cin*Cout = " +
                                    std::to_string(kernel * x.channels() * cout));
    }
    if (segment == 0) segment = x.length();
    if (segment == 0 || x.length() % segment != 0) throw std::invalid_argument("conv1d rows are not whole samples");
    return segment;
}

void conv_forward_col(const RowMatrix& col, std::span<const double> w, std::span<const double> b, Tensor2& out) {
    const auto cout = static_cast<Eigen::Index>(b.size());
    out.resize({static_cast<std::size_t>(col.rows()), b.size()});
    auto o = rows_of(out);
    o.rowwise() = ConstRowMap(b.data(), 1, cout).row(0);
    o.noalias() += col * ConstRowMap(w.data(), col.cols(), cout);
}

struct ConvScratch {
    RowMatrix gcol;
    std::vector<double> wt;
};

// Accumulates grad_w/grad_b; when grad_x is given it is overwritten with the
// input gradient, computed as a convolution of grad_out with flipped weights.
void conv_backward_col(const Tensor2& grad_out, const RowMatrix& col, std::span<const double> w,
                       std::span<double> grad_w, std::span<double> grad_b, std::size_t segment, std::size_t kernel,
                       Shape in, Tensor2* grad_x, ConvScratch& scratch) {
    const std::size_t cout = grad_out.channels();
    for (std::size_t r = 0; r < grad_out.length(); ++r) {
        const double* gr = grad_out.row(r);
        for (std::size_t o = 0; o < cout; ++o) grad_b[o] += gr[o];
    }
    RowMap(grad_w.data(), col.cols(), static_cast<Eigen::Index>(cout)).noalias() += col.transpose() * rows_of(grad_out);
    if (!grad_x) return;
    flip_weights(w, kernel, in.channels, grad_out.channels(), scratch.wt);
    im2col(grad_out, segment, kernel, scratch.gcol);
    grad_x->resize(in);
    RowMap(grad_x->data().data(), static_cast<Eigen::Index>(in.length), static_cast<Eigen::Index>(in.channels))
        .noalias() = scratch.gcol * ConstRowMap(scratch.wt.data(), scratch.gcol.cols(),
                                                 static_cast<Eigen::Index>(in.channels));
}

void maxpool_into(const Tensor2& x, std::size_t pool, Tensor2& out, std::vector<std::uint32_t>* argmax) {
    if (pool == 0) throw std::invalid_argument("pool size must be >= 1");
    if (x.length() % pool != 0) {
        throw std::invalid_argument("maxpool: length " + std::to_string(x.length()) + " not divisible by pool " +
                                    std::to_string(pool));
    }
    const std::size_t out_len = x.length() / pool, ch = x.channels();
    out.resize({out_len, ch});
    if (argmax) argmax->resize(out_len * ch);
    for (std::size_t o = 0; o < out_len; ++o) {
        double* dst = out.row(o);
        const double* first = x.row(o * pool);
        std::copy(first, first + ch, dst);
        if (argmax) std::fill_n(argmax->data() + o * ch, ch, static_cast<std::uint32_t>(o * pool));
        for (std::size_t k = 1; k < pool; ++k) {
            const double* xr = x.row(o * pool + k);
            const auto row = static_cast<std::uint32_t>(o * pool + k);
            if (argmax) {
                std::uint32_t* am = argmax->data() + o * ch;
                for (std::size_t c = 0; c < ch; ++c) {
                    const bool gt = xr[c] > dst[c];
                    am[c] = gt ? row : am[c];
                    dst[c] = gt ? xr[c] : dst[c];
                }
            } else {
                for (std::size_t c = 0; c < ch; ++c) dst[c] = xr[c] > dst[c] ? xr[c] : dst[c];
            }
        }
    }
}

void maxpool_backward_into(const Tensor2& grad_out, const std::vector<std::uint32_t>& argmax, Shape input,
                           Tensor2& gx) {
    gx.resize(input, 0.0);
    const std::size_t ch = grad_out.channels();
    for (std::size_t o = 0; o < grad_out.length(); ++o) {
        const double* g = grad_out.row(o);
        const std::uint32_t* a = argmax.data() + o * ch;
        for (std::size_t c = 0; c < ch; ++c) gx(a[c], c) = g[c];
    }
}

void upsample_into(const Tensor2& x, std::size_t size, Tensor2& out) {
    if (size == 0) throw std::invalid_argument("upsample size must be >= 1");
    out.resize({x.length() * size, x.channels()});
    for (std::size_t i = 0; i < x.length(); ++i) {
        for (std::size_t s = 0; s < size; ++s) std::copy(x.row(i), x.row(i) + x.channels(), out.row(i * size + s));
    }
}

void upsample_backward_into(const Tensor2& grad_out, std::size_t size, Tensor2& gx) {
    if (size == 0 || grad_out.length() % size != 0) throw std::invalid_argument("upsample backward shape mismatch");
    const std::size_t ch = grad_out.channels();
    gx.resize({grad_out.length() / size, ch});
    for (std::size_t i = 0; i < gx.length(); ++i) {
        double* d = gx.row(i);
        const double* g = grad_out.row(i * size);
        std::copy(g, g + ch, d);
        for (std::size_t s = 1; s < size; ++s) {
            g += ch;
            for (std::size_t c = 0; c < ch; ++c) d[c] += g[c];
        }
    }
}

}  // namespace

void conv1d_forward(const Tensor2& x, std::span<const double> w, std::span<const double> b, std::size_t kernel,
                    Tensor2& out, std::size_t segment) {
    segment = check_conv(x, w.size(), b.size(), kernel, segment);
    RowMatrix col;
    im2col(x, segment, kernel, col);
    conv_forward_col(col, w, b, out);
}

Tensor2 conv1d_forward(const Tensor2& x, std::span<const double> w, std::span<const double> b, std::size_t kernel,
                       std::size_t segment) {
    Tensor2 out;
    conv1d_forward(x, w, b, kernel, out, segment);
    return out;
}

void conv1d_backward_accumulate(const Tensor2& grad_out, const Tensor2& x, std::span<const double> w,
                                std::size_t kernel, Tensor2& grad_x, std::span<double> grad_w,
                                std::span<double> grad_b, std::size_t segment) {
    const std::size_t cout = grad_out.channels();
    segment = check_conv(x, w.size(), cout, kernel, segment);
    if (grad_out.length() != x.length() || grad_w.size() != w.size() || grad_b.size() != cout) {
        throw std::invalid_argument("conv1d backward shape mismatch");
    }
    RowMatrix col;
    ConvScratch scratch;
    im2col(x, segment, kernel, col);
    conv_backward_col(grad_out, col, w, grad_w, grad_b, segment, kernel, x.shape(), &grad_x, scratch);
}

ConvGradients conv1d_backward(const Tensor2& grad_out, const Tensor2& x, std::span<const double> w, std::size_t kernel,
                              std::size_t segment) {
    ConvGradients g;
    g.grad_w.assign(w.size(), 0.0);
    g.grad_b.assign(grad_out.channels(), 0.0);
    conv1d_backward_accumulate(grad_out, x, w, kernel, g.grad_x, g.grad_w, g.grad_b, segment);
    return g;
}

PoolResult maxpool1d(const Tensor2& x, std::size_t pool) {
    PoolResult r;
    maxpool_into(x, pool, r.out, &r.argmax);
    return r;
}

Tensor2 maxpool1d_backward(const Tensor2& grad_out, const std::vector<std::uint32_t>& argmax, Shape input) {
    Tensor2 gx;
    maxpool_backward_into(grad_out, argmax, input, gx);
    return gx;
}

Tensor2 upsample1d(const Tensor2& x, std::size_t size) {
    Tensor2 out;
    upsample_into(x, size, out);
    return out;
}

Tensor2 upsample1d_backward(const Tensor2& grad_out, std::size_t size) {
    Tensor2 gx;
    upsample_backward_into(grad_out, size, gx);
    return gx;
}

namespace {

// Uniform double in [0, 1) from the top 53 bits.
double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// 32-bit integer finalizer (a bijection); vectorizes well.
std::uint32_t hash32(std::uint32_t x) {
    x ^= x >> 16;
    x *= 0x7feb352dU;
    x ^= x >> 15;
    x *= 0x846ca68bU;
    x ^= x >> 16;
    return x;
}

// One engine draw per mask; element k keeps its value unless
// hash32(key ^ k * golden) falls below rate * 2^32.
void draw_mask(std::vector<double>& mask, std::size_t n, double rate, Rng& rng) {
    mask.resize(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    const auto threshold = static_cast<std::uint32_t>(std::ldexp(rate, 32));
    const std::uint64_t draw = rng();
    const auto key = static_cast<std::uint32_t>(draw ^ (draw >> 32));
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t h = hash32(key ^ (static_cast<std::uint32_t>(k) * 0x9e3779b9U));
        mask[k] = h < threshold ? 0.0 : keep_scale;
    }
}

}  // namespace

DropoutResult dropout(const Tensor2& x, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
    DropoutResult r{x, {}};
    if (mode == Mode::Infer || rate == 0.0) return r;
    draw_mask(r.mask, x.size(), rate, rng);
    for (std::size_t k = 0; k < x.size(); ++k) r.out[k] *= r.mask[k];
    return r;
}

void apply_activation(ActivationKind act, std::span<double> v) {
    if (act == ActivationKind::Relu) {
        for (double& e : v) e = e > 0.0 ? e : 0.0;
    }
}

std::vector<double> dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                                  ActivationKind act) {
    const std::size_t n = x.size(), m = b.size();
    if (w.size() != n * m) {
        throw std::invalid_argument("dense weight size " + std::to_string(w.size()) + " does not match " +
                                    std::to_string(n) + "x" + std::to_string(m));
    }
    std::vector<double> out(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        const double xv = x[i];
        const double* wr = w.data() + i * m;
        for (std::size_t o = 0; o < m; ++o) out[o] += xv * wr[o];
    }
    apply_activation(act, out);
    return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

void glorot_uniform(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = (2.0 * unit_uniform(rng) - 1.0) * limit;
}

// Gradient before the activation. For a linear activation this is
// grad_out itself and `scratch` is left untouched.
const Tensor2& pre_activation_grad(ActivationKind act, const Tensor2& out, const Tensor2& grad_out, Tensor2& scratch) {
    if (act != ActivationKind::Relu) return grad_out;
    scratch.resize(grad_out.shape());
    const double* o = out.data().data();
    const double* g = grad_out.data().data();
    double* d = scratch.data().data();
    for (std::size_t k = 0; k < out.size(); ++k) d[k] = o[k] > 0.0 ? g[k] : 0.0;
    return scratch;
}

class Conv1DLayer final : public Layer {
public:
    explicit Conv1DLayer(LayerSpec s) : spec_(s) {}

    LayerSpec spec() const override { return spec_; }
    Shape output_shape(Shape in) const override { return {in.length, spec_.filters}; }

    void build(Shape in, Rng& init) override {
        cin_ = in.channels;
        segment_ = in.length;
        w_.assign(spec_.kernel * cin_ * spec_.filters, 0.0);
        b_.assign(spec_.filters, 0.0);
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        glorot_uniform(w_, spec_.kernel * cin_, spec_.kernel * spec_.filters, init);
    }

    const Tensor2& forward(const Tensor2& x, Mode, Rng&) override {
        in_shape_ = x.shape();
        check_conv(x, w_.size(), b_.size(), spec_.kernel, segment_);
        im2col(x, segment_, spec_.kernel, col_);
        conv_forward_col(col_, w_, b_, out_);
        apply_activation(spec_.activation, out_.data());
        return out_;
    }

    const Tensor2& backward(const Tensor2& grad_out, bool input_grad) override {
        const Tensor2& g = pre_activation_grad(spec_.activation, out_, grad_out, grad_pre_);
        conv_backward_col(g, col_, w_, gw_, gb_, segment_, spec_.kernel, in_shape_, input_grad ? &grad_x_ : nullptr,
                          scratch_);
        return grad_x_;
    }

    void infer(const Tensor2& x, Tensor2& out) const override {
        conv1d_forward(x, w_, b_, spec_.kernel, out, segment_);
        apply_activation(spec_.activation, out.data());
    }

    std::vector<ParamRef> parameters() override {
        return {{w_, gw_, {spec_.kernel, cin_, spec_.filters}, true}, {b_, gb_, {spec_.filters}, false}};
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1DLayer>(*this); }

private:
    LayerSpec spec_;
    std::size_t cin_ = 0;
    std::size_t segment_ = 0;
    Shape in_shape_;
    std::vector<double> w_, b_, gw_, gb_;
    RowMatrix col_;
    ConvScratch scratch_;
    Tensor2 out_, grad_pre_, grad_x_;
};

class MaxPoolLayer final : public Layer {
public:
    explicit MaxPoolLayer(LayerSpec s) : spec_(s) {}

    LayerSpec spec() const override { return spec_; }
    Shape output_shape(Shape in) const override {
        if (in.length % spec_.pool != 0) {
            throw std::invalid_argument("maxpool: input length " + std::to_string(in.length) +
                                        " not divisible by pool size " + std::to_string(spec_.pool));
        }
        return {in.length / spec_.pool, in.channels};
    }

    const Tensor2& forward(const Tensor2& x, Mode, Rng&) override {
        input_ = &x;
        maxpool_into(x, spec_.pool, out_, nullptr);
        return out_;
    }

    // Routes each gradient to the first row of its window that holds the
    // maximum, matching the tie rule of maxpool1d.
    const Tensor2& backward(const Tensor2& grad_out, bool) override {
        const Tensor2& x = *input_;
        const std::size_t pool = spec_.pool, ch = x.channels();
        grad_x_.resize(x.shape());
        pending_.resize(ch);
        double* rem = pending_.data();
        for (std::size_t o = 0; o < out_.length(); ++o) {
            const double* m = out_.row(o);
            const double* g = grad_out.row(o);
            std::copy(g, g + ch, rem);
            for (std::size_t k = 0; k < pool; ++k) {
                const double* xr = x.row(o * pool + k);
                double* d = grad_x_.row(o * pool + k);
                for (std::size_t c = 0; c < ch; ++c) {
                    const bool hit = xr[c] == m[c];
                    d[c] = hit ? rem[c] : 0.0;
                    rem[c] = hit ? 0.0 : rem[c];
                }
            }
        }
        return grad_x_;
    }

    void infer(const Tensor2& x, Tensor2& out) const override { maxpool_into(x, spec_.pool, out, nullptr); }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }

private:
    LayerSpec spec_;
    const Tensor2* input_ = nullptr;
    Tensor2 out_, grad_x_;
    std::vector<double> pending_;  // gradient not yet routed, per channel
};

class UpsampleLayer final : public Layer {
public:
    explicit UpsampleLayer(LayerSpec s) : spec_(s) {}

    LayerSpec spec() const override { return spec_; }
    Shape output_shape(Shape in) const override { return {in.length * spec_.size, in.channels}; }

    const Tensor2& forward(const Tensor2& x, Mode, Rng&) override {
        upsample_into(x, spec_.size, out_);
        return out_;
    }

    const Tensor2& backward(const Tensor2& grad_out, bool) override {
        upsample_backward_into(grad_out, spec_.size, grad_x_);
        return grad_x_;
    }

    void infer(const Tensor2& x, Tensor2& out) const override { upsample_into(x, spec_.size, out); }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<UpsampleLayer>(*this); }

private:
    LayerSpec spec_;
    Tensor2 out_, grad_x_;
};

class DropoutLayer final : public Layer {
public:
    explicit DropoutLayer(LayerSpec s) : spec_(s) {}

    LayerSpec spec() const override { return spec_; }
    Shape output_shape(Shape in) const override { return in; }

    const Tensor2& forward(const Tensor2& x, Mode mode, Rng& rng) override {
        active_ = mode == Mode::Train && spec_.rate > 0.0;
        if (!active_) return x;
        draw_mask(mask_, x.size(), spec_.rate, rng);
        out_.resize(x.shape());
        for (std::size_t k = 0; k < x.size(); ++k) out_[k] = x[k] * mask_[k];
        return out_;
    }

    const Tensor2& backward(const Tensor2& grad_out, bool) override {
        if (!active_) return grad_out;
        grad_x_.resize(grad_out.shape());
        for (std::size_t k = 0; k < grad_out.size(); ++k) grad_x_[k] = grad_out[k] * mask_[k];
        return grad_x_;
    }

    void infer(const Tensor2& x, Tensor2& out) const override { out = x; }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<DropoutLayer>(*this); }

private:
    LayerSpec spec_;
    bool active_ = false;
    std::vector<double> mask_;
    Tensor2 out_, grad_x_;
};

// Dense consumes each sample flattened and emits one (1, units) row per sample.
class DenseLayer final : public Layer {
public:
    explicit DenseLayer(LayerSpec s) : spec_(s) {}

    LayerSpec spec() const override { return spec_; }
    Shape output_shape(Shape) const override { return {1, spec_.units}; }

    void build(Shape in, Rng& init) override {
        n_ = in.size();
        w_.assign(n_ * spec_.units, 0.0);
        b_.assign(spec_.units, 0.0);
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        glorot_uniform(w_, n_, spec_.units, init);
    }

    const Tensor2& forward(const Tensor2& x, Mode, Rng&) override {
        x_ = x;
        infer(x, out_);
        return out_;
    }

    const Tensor2& backward(const Tensor2& grad_out, bool input_grad) override {
        const Tensor2& gp = pre_activation_grad(spec_.activation, out_, grad_out, grad_pre_);
        const auto m = static_cast<Eigen::Index>(spec_.units), n = static_cast<Eigen::Index>(n_);
        const auto batch = static_cast<Eigen::Index>(x_.size() / n_);
        const ConstRowMap g(gp.data().data(), batch, m);
        const ConstRowMap xm(x_.data().data(), batch, n);
        RowMap(gb_.data(), 1, m).row(0) += g.colwise().sum();
        RowMap(gw_.data(), n, m).noalias() += xm.transpose() * g;
        if (!input_grad) return grad_x_;
        grad_x_.resize(x_.shape());
        RowMap(grad_x_.data().data(), batch, n).noalias() = g * ConstRowMap(w_.data(), n, m).transpose();
        return grad_x_;
    }

    void infer(const Tensor2& x, Tensor2& out) const override {
        if (x.size() == 0 || x.size() % n_ != 0) throw std::invalid_argument("dense input size mismatch");
        const auto m = static_cast<Eigen::Index>(spec_.units), n = static_cast<Eigen::Index>(n_);
        const auto batch = static_cast<Eigen::Index>(x.size() / n_);
        out.resize({static_cast<std::size_t>(batch), spec_.units});
        RowMap o(out.data().data(), batch, m);
        o.rowwise() = ConstRowMap(b_.data(), 1, m).row(0);
        o.noalias() += ConstRowMap(x.data().data(), batch, n) * ConstRowMap(w_.data(), n, m);
        apply_activation(spec_.activation, out.data());
    }

    std::vector<ParamRef> parameters() override {
        return {{w_, gw_, {n_, spec_.units}, true}, {b_, gb_, {spec_.units}, false}};
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }

private:
    LayerSpec spec_;
    std::size_t n_ = 0;
    std::vector<double> w_, b_, gw_, gb_;
    Tensor2 x_, out_, grad_pre_, grad_x_;
};

class ActivationLayer final : public Layer {
public:
    explicit ActivationLayer(LayerSpec s) : spec_(s) {}

    LayerSpec spec() const override { return spec_; }
    Shape output_shape(Shape in) const override { return in; }

    const Tensor2& forward(const Tensor2& x, Mode, Rng&) override {
        infer(x, out_);
        return out_;
    }

    const Tensor2& backward(const Tensor2& grad_out, bool) override {
        return pre_activation_grad(spec_.activation, out_, grad_out, grad_x_);
    }

    void infer(const Tensor2& x, Tensor2& out) const override {
        out = x;
        apply_activation(spec_.activation, out.data());
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<ActivationLayer>(*this); }

private:
    LayerSpec spec_;
    Tensor2 out_, grad_x_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case LayerKind::Conv1D: return std::make_unique<Conv1DLayer>(spec);
        case LayerKind::MaxPool1D: return std::make_unique<MaxPoolLayer>(spec);
        case LayerKind::Upsample1D: return std::make_unique<UpsampleLayer>(spec);
        case LayerKind::Dropout: return std::make_unique<DropoutLayer>(spec);
        case LayerKind::Dense: return std::make_unique<DenseLayer>(spec);
        case LayerKind::Activation: return std::make_unique<ActivationLayer>(spec);
    }
    throw std::invalid_argument("unknown layer kind");
}

}  // namespace phantom::nn
