#include "phantom/nn/network.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace phantom::nn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Network::Network(Shape input, const std::vector<LayerSpec>& specs, std::uint64_t seed) : input_(input) {
    if (input.size() == 0) throw std::invalid_argument("network input shape must be non-empty");
    Rng init(splitmix64(seed));
    dropout_rng_.seed(splitmix64(seed ^ 0xd1b54a32d192ed03ULL));
    shapes_.push_back(input);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto layer = make_layer(specs[i]);
        Shape out;
        try {
            out = layer->output_shape(shapes_.back());
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("layer " + std::to_string(i) + " (" + to_string(specs[i].kind) +
                                        ") on input " + to_string(shapes_.back()) + ": " + e.what());
        }
        layer->build(shapes_.back(), init);
        shapes_.push_back(out);
        layers_.push_back(std::move(layer));
    }
}

Network::Network(const Network& other) : input_(other.input_), shapes_(other.shapes_), dropout_rng_(other.dropout_rng_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        Network tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

std::vector<LayerSpec> Network::specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
}

void Network::check_input(const Tensor2& x) const {
    if (x.channels() != input_.channels || x.length() == 0 || x.length() % input_.length != 0) {
        throw std::invalid_argument("network expects input " + to_string(input_) + " or a stack of them, got " +
                                    to_string(x.shape()));
    }
}

const Tensor2& Network::forward(const Tensor2& x, Mode mode) {
    check_input(x);
    const Tensor2* cur = &x;
    for (auto& l : layers_) cur = &l->forward(*cur, mode, dropout_rng_);
    return *cur;
}

const Tensor2& Network::backward(const Tensor2& grad_out, bool input_grad) {
    const Tensor2* cur = &grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) cur = &layers_[i]->backward(*cur, input_grad || i > 0);
    return *cur;
}

Tensor2 Network::predict(const Tensor2& x) const {
    check_input(x);
    Tensor2 a = x, b;
    for (const auto& l : layers_) {
        l->infer(a, b);
        std::swap(a, b);
    }
    return a;
}

void Network::zero_grad() {
    for (auto& l : layers_) {
        for (auto& p : l->parameters()) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> out;
    for (auto& l : layers_) {
        for (auto& p : l->parameters()) out.push_back(std::move(p));
    }
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        for (const auto& p : l->parameters()) n += p.value.size();
    }
    return n;
}

std::vector<double> Network::flat_parameters() const {
    std::vector<double> out;
    for (const auto& l : layers_) {
        for (const auto& p : l->parameters()) out.insert(out.end(), p.value.begin(), p.value.end());
    }
    return out;
}

// ---------------------------------------------------------------------------

LossResult mse_loss(const Tensor2& pred, const Tensor2& target) {
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("mse: prediction " + to_string(pred.shape()) + " vs target " +
                                    to_string(target.shape()));
    }
    LossResult r{0.0, Tensor2(pred.shape())};
    const double n = static_cast<double>(pred.size());
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = pred[k] - target[k];
        r.value += d * d;
        r.grad[k] = 2.0 * d / n;
    }
    r.value /= n;
    return r;
}

// ---------------------------------------------------------------------------

namespace {

void step_tensor(std::span<double> value, std::span<const double> grad, bool is_weight, std::vector<double>& m,
                 std::vector<double>& v, const OptimizerConfig& c, std::uint64_t t) {
    const double decay = is_weight ? c.weight_decay : 0.0;
    if (c.kind == OptimizerKind::SGD) {
        for (std::size_t k = 0; k < value.size(); ++k) value[k] -= c.learning_rate * (grad[k] + decay * value[k]);
        return;
    }
    if (m.size() != value.size()) {
        m.assign(value.size(), 0.0);
        v.assign(value.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    const double b1 = c.beta1, b2 = c.beta2, lr = c.learning_rate, eps = c.epsilon;
    double* __restrict p = value.data();
    const double* __restrict gr = grad.data();
    double* __restrict mp = m.data();
    double* __restrict vp = v.data();
    const double step = lr / bc1, inv_bc2 = 1.0 / bc2;
    for (std::size_t k = 0; k < value.size(); ++k) {
        const double g = gr[k] + decay * p[k];
        mp[k] = b1 * mp[k] + (1.0 - b1) * g;
        vp[k] = b2 * vp[k] + (1.0 - b2) * g * g;
        p[k] -= step * mp[k] / (std::sqrt(vp[k] * inv_bc2) + eps);
    }
}

}  // namespace

void optimizer_step(std::vector<ParamRef>& params, OptimizerState& state) {
    ++state.step;
    if (state.m.size() != params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].value.size() != params[i].grad.size()) throw std::invalid_argument("gradient shape mismatch");
        step_tensor(params[i].value, params[i].grad, params[i].is_weight, state.m[i], state.v[i], state.config,
                    state.step);
    }
}

void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state) {
    if (params.size() != grads.size()) throw std::invalid_argument("gradient shape mismatch");
    ++state.step;
    state.m.resize(1);
    state.v.resize(1);
    step_tensor(params, grads, true, state.m[0], state.v[0], state.config, state.step);
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(Network& net, const Tensor2& input, const Tensor2& target, const GradCheckOptions& opts) {
    auto loss_at = [&](const Tensor2& x) { return mse_loss(net.forward(x, Mode::Infer), target).value; };

    net.zero_grad();
    const LossResult base = mse_loss(net.forward(input, Mode::Infer), target);
    const Tensor2 grad_input = net.backward(base.grad);
    auto params = net.parameters();

    // Snapshot the analytic gradients before finite differencing disturbs caches.
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) analytic.emplace_back(p.grad.begin(), p.grad.end());
    if (opts.corrupt) {
        std::vector<ParamRef> views;
        for (std::size_t i = 0; i < params.size(); ++i) {
            views.push_back({params[i].value, analytic[i], params[i].shape, params[i].is_weight});
        }
        opts.corrupt(views);
    }

    GradCheckResult res;
    auto record = [&](double a, double numeric) {
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        res.max_relative_error = std::max(res.max_relative_error, err);
        ++res.checked;
    };

    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t k = 0; k < params[i].value.size(); ++k) {
            double& w = params[i].value[k];
            const double saved = w;
            w = saved + opts.step;
            const double up = loss_at(input);
            w = saved - opts.step;
            const double down = loss_at(input);
            w = saved;
            record(analytic[i][k], (up - down) / (2.0 * opts.step));
        }
    }
    if (opts.include_input) {
        Tensor2 x = input;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double saved = x[k];
            x[k] = saved + opts.step;
            const double up = loss_at(x);
            x[k] = saved - opts.step;
            const double down = loss_at(x);
            x[k] = saved;
            record(grad_input[k], (up - down) / (2.0 * opts.step));
        }
    }
    return res;
}

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("parameter file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("parameter file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

constexpr char kMagic[4] = {'P', 'H', 'N', 'N'};

}  // namespace

// Each layer contributes a (weights, bias) pair; parameterless layers write
// rank 0 and bias length 0.
void write_parameters(std::ostream& os, Network& net) {
    os.write(kMagic, 4);
    put_u32(os, kParameterFormatVersion);
    const auto specs = net.specs();
    put_u32(os, static_cast<std::uint32_t>(specs.size()));
    auto params = net.parameters();
    std::size_t next = 0;
    for (const auto& spec : specs) {
        put_u32(os, static_cast<std::uint32_t>(spec.kind));
        const bool trainable = spec.kind == LayerKind::Conv1D || spec.kind == LayerKind::Dense;
        if (!trainable) {
            put_u32(os, 0);
            put_u32(os, 0);
            continue;
        }
        const ParamRef& w = params[next++];
        const ParamRef& b = params[next++];
        put_u32(os, static_cast<std::uint32_t>(w.shape.size()));
        for (std::size_t d : w.shape) put_u32(os, static_cast<std::uint32_t>(d));
        put_u32(os, static_cast<std::uint32_t>(b.value.size()));
        for (double v : w.value) put_f64(os, v);
        for (double v : b.value) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("failed to write parameters");
}

void read_parameters(std::istream& is, Network& net) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw std::runtime_error("not a PHNN parameter file");
    }
    const std::uint32_t version = get_u32(is);
    if (version != kParameterFormatVersion) {
        throw std::runtime_error("unsupported parameter format version " + std::to_string(version));
    }
    const auto specs = net.specs();
    const std::uint32_t count = get_u32(is);
    if (count != specs.size()) {
        throw std::runtime_error("parameter file has " + std::to_string(count) + " layers, network has " +
                                 std::to_string(specs.size()));
    }
    auto params = net.parameters();
    std::size_t next = 0;
    for (std::size_t li = 0; li < specs.size(); ++li) {
        const auto kind = get_u32(is);
        if (kind != static_cast<std::uint32_t>(specs[li].kind)) {
            throw std::runtime_error("layer " + std::to_string(li) + " kind mismatch");
        }
        const std::uint32_t rank = get_u32(is);
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = get_u32(is);
        const std::uint32_t bias_len = get_u32(is);
        const bool trainable = specs[li].kind == LayerKind::Conv1D || specs[li].kind == LayerKind::Dense;
        if (!trainable) {
            if (rank != 0 || bias_len != 0) throw std::runtime_error("unexpected parameters for layer " + std::to_string(li));
            continue;
        }
        ParamRef& w = params[next++];
        ParamRef& b = params[next++];
        if (dims != w.shape || bias_len != b.value.size()) {
            throw std::runtime_error("layer " + std::to_string(li) + " shape mismatch");
        }
        for (double& v : w.value) v = get_f64(is);
        for (double& v : b.value) v = get_f64(is);
    }
}

}  // namespace phantom::nn
