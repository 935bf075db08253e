#include "oracles.hpp"
#include "phantom/nn/layers.hpp"
#include "phantom/nn/network.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

using namespace phantom::nn;

namespace {

Tensor2 random_tensor(std::size_t L, std::size_t C, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Tensor2 t(L, C);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = n(rng);
    return t;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

// Central difference of sum(g .* f(x)) with respect to x[k].
template <typename F>
double directional_fd(F&& f, std::vector<double>& x, std::size_t k, const Tensor2& g, double h = 1e-5) {
    const double keep = x[k];
    x[k] = keep + h;
    const Tensor2 up = f();
    x[k] = keep - h;
    const Tensor2 dn = f();
    x[k] = keep;
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * (up[i] - dn[i]);
    return s / (2 * h);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

TEST(Conv1D, HandComputedExample) {
    const Tensor2 x(3, 1, {1, 2, 3});
    const Tensor2 y = conv1d_forward(x, std::vector<double>{1, 0, -1}, std::vector<double>{0}, 3);
    EXPECT_EQ(y, Tensor2(3, 1, {-2, -2, 2}));
}

TEST(Conv1D, DeltaKernelIsIdentityAndZeroInputGivesBias) {
    std::mt19937_64 rng(1);
    const Tensor2 x = random_tensor(7, 2, rng);
    std::vector<double> w(5 * 2 * 2, 0.0);
    w[(2 * 2 + 0) * 2 + 0] = 1.0;
    w[(2 * 2 + 1) * 2 + 1] = 1.0;
    EXPECT_EQ(conv1d_forward(x, w, std::vector<double>{0, 0}, 5), x);

    const Tensor2 y = conv1d_forward(Tensor2(4, 2), random_vec(18, rng), std::vector<double>{0.5, -1.5, 2.0}, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(y(i, 0), 0.5);
        EXPECT_EQ(y(i, 1), -1.5);
        EXPECT_EQ(y(i, 2), 2.0);
    }
}

TEST(Conv1D, MatchesNaiveLoopIncludingStackedSamples) {
    std::mt19937_64 rng(2);
    for (std::size_t kernel : {1u, 3u, 5u}) {
        const Tensor2 x = random_tensor(9, 4, rng);
        const auto w = random_vec(kernel * 4 * 6, rng), b = random_vec(6, rng);
        const Tensor2 got = conv1d_forward(x, w, b, kernel);
        const Tensor2 want = oracle::naive_conv(x, w, b, kernel);
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12);

        // Three samples of length 3 stacked along the length axis are padded independently.
        const Tensor2 stacked = conv1d_forward(x, w, b, kernel, 3);
        for (std::size_t s = 0; s < 3; ++s) {
            Tensor2 part(3, 4);
            std::copy(x.row(3 * s), x.row(3 * s + 3), part.data().begin());
            const Tensor2 ref = oracle::naive_conv(part, w, b, kernel);
            for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(stacked[3 * s * 6 + k], ref[k], 1e-12);
        }
    }
}

TEST(Conv1D, RejectsBadShapes) {
    const Tensor2 x(4, 2);
    EXPECT_THROW(conv1d_forward(x, std::vector<double>(8, 0.0), std::vector<double>(2, 0.0), 2), std::invalid_argument);
    EXPECT_THROW(conv1d_forward(x, std::vector<double>(5, 0.0), std::vector<double>(1, 0.0), 3), std::invalid_argument);
    EXPECT_THROW(conv1d_forward(x, std::vector<double>(6, 0.0), std::vector<double>(1, 0.0), 3, 3), std::invalid_argument);
}

TEST(Conv1D, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor2 x = random_tensor(5, 2, rng);
        auto w = random_vec(3 * 2 * 4, rng), b = random_vec(4, rng);
        const Tensor2 g = random_tensor(5, 4, rng);
        const ConvGradients grads = conv1d_backward(g, x, w, 3);

        std::vector<double> xv(x.data().begin(), x.data().end());
        auto fx = [&] { return conv1d_forward(Tensor2(5, 2, xv), w, b, 3); };
        auto fp = [&] { return conv1d_forward(x, w, b, 3); };
        for (std::size_t k = 0; k < xv.size(); ++k) EXPECT_LT(rel(grads.grad_x[k], directional_fd(fx, xv, k, g)), 1e-6);
        for (std::size_t k = 0; k < w.size(); ++k) EXPECT_LT(rel(grads.grad_w[k], directional_fd(fp, w, k, g)), 1e-6);
        for (std::size_t k = 0; k < b.size(); ++k) EXPECT_LT(rel(grads.grad_b[k], directional_fd(fp, b, k, g)), 1e-6);

        for (std::size_t o = 0; o < 4; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < 5; ++i) s += g(i, o);
            EXPECT_NEAR(grads.grad_b[o], s, 1e-14);
        }
    }
}

TEST(Conv1D, ZeroUpstreamGradientGivesZeroGradients) {
    std::mt19937_64 rng(4);
    const Tensor2 x = random_tensor(6, 3, rng);
    const ConvGradients g = conv1d_backward(Tensor2(6, 2), x, random_vec(18, rng), 3);
    for (double v : g.grad_x.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_w) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_b) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// Pooling and upsampling

TEST(MaxPool, ExampleAndTieBreak) {
    const PoolResult r = maxpool1d(Tensor2(6, 1, {1, 5, 2, 0, 3, 4}), 3);
    EXPECT_EQ(r.out, Tensor2(2, 1, {5, 4}));
    EXPECT_EQ(r.argmax, (std::vector<std::uint32_t>{1, 5}));

    const PoolResult c = maxpool1d(Tensor2(6, 2, 7.0), 3);
    EXPECT_EQ(c.out, Tensor2(2, 2, 7.0));
    EXPECT_EQ(c.argmax, (std::vector<std::uint32_t>{0, 0, 3, 3}));

    const Tensor2 g = maxpool1d_backward(Tensor2(2, 2, {1, 2, 3, 4}), c.argmax, {6, 2});
    EXPECT_EQ(g, Tensor2(6, 2, {1, 2, 0, 0, 0, 0, 3, 4, 0, 0, 0, 0}));
}

TEST(MaxPool, ShapeChainAndDivisibility) {
    const Tensor2 x(18, 3, 1.0);
    const Tensor2 a = maxpool1d(x, 3).out;
    EXPECT_EQ(a.shape(), (Shape{6, 3}));
    EXPECT_EQ(maxpool1d(a, 2).out.shape(), (Shape{3, 3}));
    EXPECT_THROW(maxpool1d(Tensor2(7, 1), 3), std::invalid_argument);
}

TEST(Upsample, ExampleIdentityAndBackward) {
    EXPECT_EQ(upsample1d(Tensor2(2, 1, {1, 2}), 3), Tensor2(6, 1, {1, 1, 1, 2, 2, 2}));
    std::mt19937_64 rng(5);
    const Tensor2 x = random_tensor(4, 3, rng);
    EXPECT_EQ(upsample1d(x, 1), x);
    EXPECT_EQ(upsample1d_backward(Tensor2(6, 1, {1, 2, 3, 4, 5, 6}), 3), Tensor2(2, 1, {6, 15}));
}

TEST(Upsample, PoolingUndoesUpsampling) {
    std::mt19937_64 rng(6);
    for (std::size_t s = 1; s <= 4; ++s) {
        const Tensor2 x = random_tensor(5, 3, rng);
        EXPECT_EQ(maxpool1d(upsample1d(x, s), s).out, x);
    }
}

// ---------------------------------------------------------------------------
// Dropout

TEST(Dropout, InferModeAndZeroRateAreIdentity) {
    std::mt19937_64 rng(7);
    Rng r(1);
    const Tensor2 x = random_tensor(10, 4, rng);
    for (double rate : {0.0, 0.2, 0.5, 0.9}) EXPECT_EQ(dropout(x, rate, Mode::Infer, r).out, x);
    EXPECT_EQ(dropout(x, 0.0, Mode::Train, r).out, x);
    EXPECT_THROW(dropout(x, 1.0, Mode::Train, r), std::invalid_argument);
}

TEST(Dropout, KeepsExpectedFractionAndMean) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    Tensor2 x(100000, 1);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = u(rng);
    Rng r(123);
    const DropoutResult d = dropout(x, 0.5, Mode::Train, r);
    std::size_t kept = 0;
    double in_sum = 0.0, out_sum = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        kept += d.out[k] != 0.0;
        in_sum += x[k];
        out_sum += d.out[k];
        EXPECT_TRUE(d.mask[k] == 0.0 || d.mask[k] == 2.0);
        EXPECT_EQ(d.out[k], x[k] * d.mask[k]);
    }
    EXPECT_NEAR(static_cast<double>(kept) / 1e5, 0.5, 0.01);
    EXPECT_NEAR(out_sum / in_sum, 1.0, 0.02);

    Rng r2(123);
    EXPECT_EQ(dropout(x, 0.5, Mode::Train, r2).mask, d.mask);
}

// ---------------------------------------------------------------------------
// Dense, activations, loss

TEST(Dense, IdentityAndRelu) {
    const std::vector<double> x{0.5, -1.0, 2.0};
    std::vector<double> eye(9, 0.0);
    eye[0] = eye[4] = eye[8] = 1.0;
    EXPECT_EQ(dense_forward(x, eye, std::vector<double>(3, 0.0), ActivationKind::Linear), x);
    const std::vector<double> neg{-1.0, -2.0, -3.0};
    for (double v : dense_forward(neg, eye, std::vector<double>(3, 0.0), ActivationKind::Relu)) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(dense_forward(x, std::vector<double>(4, 0.0), std::vector<double>(2, 0.0), ActivationKind::Linear),
                 std::invalid_argument);
}

TEST(Dense, GradientCheckFourToThree) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Network net({4, 1}, {LayerSpec::dense(3, ActivationKind::Relu)}, seed);
        std::mt19937_64 rng(seed);
        const auto r = grad_check(net, random_tensor(4, 1, rng), random_tensor(1, 3, rng));
        EXPECT_LT(r.max_relative_error, 1e-6);
    }
}

TEST(Loss, ValuesAndGradient) {
    std::mt19937_64 rng(9);
    const Tensor2 p = random_tensor(4, 3, rng);
    EXPECT_EQ(mse_loss(p, p).value, 0.0);
    Tensor2 q = p;
    for (std::size_t k = 0; k < q.size(); ++k) q[k] += 1.0;
    EXPECT_NEAR(mse_loss(q, p).value, 1.0, 1e-15);

    const Tensor2 t = random_tensor(4, 3, rng);
    const LossResult l = mse_loss(p, t);
    std::vector<double> pv(p.data().begin(), p.data().end());
    for (std::size_t k = 0; k < pv.size(); ++k) {
        const double keep = pv[k];
        pv[k] = keep + 1e-5;
        const double up = mse_loss(Tensor2(4, 3, pv), t).value;
        pv[k] = keep - 1e-5;
        const double dn = mse_loss(Tensor2(4, 3, pv), t).value;
        pv[k] = keep;
        EXPECT_NEAR(l.grad[k], (up - dn) / 2e-5, 1e-8);
    }
    EXPECT_THROW(mse_loss(p, Tensor2(3, 4)), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Optimizers

TEST(Optimizer, SgdWithZeroGradientKeepsParameters) {
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.0, 0.0};
    OptimizerState s({OptimizerKind::SGD, 0.1});
    optimizer_step(p, g, s);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Optimizer, AdamSolvesOneDimensionalQuadratic) {
    std::vector<double> p{0.0};
    OptimizerState s({OptimizerKind::Adam, 0.1});
    for (int i = 0; i < 500; ++i) {
        const std::vector<double> g{2.0 * (p[0] - 3.0)};
        optimizer_step(p, g, s);
        EXPECT_EQ(s.step, static_cast<std::uint64_t>(i + 1));
    }
    EXPECT_LT(std::abs(p[0] - 3.0), 1e-3);
}

TEST(Optimizer, SingleStepDecreasesConvexQuadratic) {
    // f(p) = sum a_i p_i^2 with curvature 2 a_i <= 2; any lr < 1 is below the bound.
    const std::vector<double> a{1.0, 0.3, 0.7};
    auto f = [&](const std::vector<double>& p) {
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += a[i] * p[i] * p[i];
        return s;
    };
    for (OptimizerKind kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
        std::vector<double> p{1.0, -2.0, 0.5};
        std::vector<double> g(3);
        for (std::size_t i = 0; i < 3; ++i) g[i] = 2 * a[i] * p[i];
        OptimizerState s({kind, 0.05});
        const double before = f(p);
        optimizer_step(p, g, s);
        EXPECT_LT(f(p), before);
    }
}

TEST(Optimizer, WeightDecaySkipsBiases) {
    Network net({2, 1}, {LayerSpec::dense(2)}, 3);
    net.zero_grad();
    auto params = net.parameters();
    const std::vector<double> w0(params[0].value.begin(), params[0].value.end());
    const std::vector<double> b0(params[1].value.begin(), params[1].value.end());
    OptimizerConfig c{OptimizerKind::SGD, 0.1};
    c.weight_decay = 0.5;
    OptimizerState s(c);
    optimizer_step(params, s);
    for (std::size_t k = 0; k < w0.size(); ++k) EXPECT_NEAR(params[0].value[k], w0[k] * (1 - 0.05), 1e-15);
    for (std::size_t k = 0; k < b0.size(); ++k) EXPECT_EQ(params[1].value[k], b0[k]);
}

// ---------------------------------------------------------------------------
// Networks and the gradient checker

namespace {

std::vector<LayerSpec> dae_layers(ActivationKind hidden) {
    return {LayerSpec::conv1d(32, 3, hidden), LayerSpec::maxpool1d(3), LayerSpec::conv1d(32, 3, hidden),
            LayerSpec::maxpool1d(2), LayerSpec::conv1d(32, 3, hidden), LayerSpec::upsample1d(2),
            LayerSpec::conv1d(32, 3, hidden), LayerSpec::upsample1d(3), LayerSpec::conv1d(3, 3)};
}

}  // namespace

TEST(GradCheck, LinearDenseIsExact) {
    Network net({5, 1}, {LayerSpec::dense(3)}, 1);
    std::mt19937_64 rng(10);
    EXPECT_LT(grad_check(net, random_tensor(5, 1, rng), random_tensor(1, 3, rng)).max_relative_error, 1e-9);
}

TEST(GradCheck, ClassicalAutoencoder) {
    Network net({18, 3}, dae_layers(ActivationKind::Relu), 2);
    std::mt19937_64 rng(11);
    const auto r = grad_check(net, random_tensor(18, 3, rng), random_tensor(18, 3, rng));
    EXPECT_LT(r.max_relative_error, 1e-5);
    EXPECT_EQ(r.checked, net.parameter_count() + 54);
}

TEST(GradCheck, DetectsCorruptedGradient) {
    Network net({6, 2}, {LayerSpec::conv1d(4, 3, ActivationKind::Relu), LayerSpec::conv1d(2, 3)}, 3);
    std::mt19937_64 rng(12);
    GradCheckOptions o;
    o.corrupt = [](std::vector<ParamRef>& p) { p[0].grad[0] += 1e-3; };
    EXPECT_GT(grad_check(net, random_tensor(6, 2, rng), random_tensor(6, 2, rng), o).max_relative_error, 1e-4);
}

TEST(GradCheck, EveryLayerKindOverSeeds) {
    const std::vector<std::vector<LayerSpec>> stacks{
        {LayerSpec::conv1d(4, 3, ActivationKind::Relu)},
        {LayerSpec::conv1d(3, 5), LayerSpec::maxpool1d(3)},
        {LayerSpec::upsample1d(2), LayerSpec::conv1d(2, 3)},
        {LayerSpec::dropout(0.5), LayerSpec::conv1d(2, 1)},
        {LayerSpec::dense(5, ActivationKind::Relu), LayerSpec::dense(4)},
        {LayerSpec::conv1d(3, 3), LayerSpec::activation_layer(ActivationKind::Relu)},
    };
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (const auto& layers : stacks) {
            Network net({6, 2}, layers, seed);
            std::mt19937_64 rng(seed * 31);
            const Shape out = net.output_shape();
            const auto r = grad_check(net, random_tensor(6, 2, rng), random_tensor(out.length, out.channels, rng));
            EXPECT_LT(r.max_relative_error, 1e-5) << "seed " << seed << " first layer " << to_string(layers[0].kind);
        }
    }
}

TEST(Network, ShapeChainOfClassicalAutoencoder) {
    const Network net({18, 3}, dae_layers(ActivationKind::Relu), 1);
    std::vector<std::size_t> lengths;
    for (const Shape& s : net.shape_chain()) lengths.push_back(s.length);
    EXPECT_EQ(lengths, (std::vector<std::size_t>{18, 18, 6, 6, 3, 3, 6, 6, 18, 18}));
    EXPECT_EQ(net.output_shape(), (Shape{18, 3}));
    EXPECT_THROW(Network({16, 3}, dae_layers(ActivationKind::Relu), 1), std::invalid_argument);
}

TEST(Network, ParameterCountMatchesClosedForm) {
    const Network net({18, 3}, dae_layers(ActivationKind::Relu), 1);
    const std::size_t conv_in[] = {3, 32, 32, 32, 32}, conv_out[] = {32, 32, 32, 32, 3};
    std::size_t expected = 0;
    for (int i = 0; i < 5; ++i) expected += 3 * conv_in[i] * conv_out[i] + conv_out[i];
    EXPECT_EQ(net.parameter_count(), expected);
}

TEST(Network, LinearAutoencoderIsAffineWhilePoolingSelectionsHold) {
    // Max pooling is piecewise linear, so the all-linear stack is affine only
    // on regions where every window keeps its argmax. A short segment around
    // a random input stays inside one such region.
    Network net({18, 3}, dae_layers(ActivationKind::Linear), 4);
    std::mt19937_64 rng(13);
    const Tensor2 x = random_tensor(18, 3, rng);
    Tensor2 y = x;
    const Tensor2 d = random_tensor(18, 3, rng, 1e-3);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += d[k];
    const Tensor2 fx = net.predict(x), fy = net.predict(y);
    for (double a : {0.25, 0.5, 0.75}) {
        Tensor2 m(18, 3);
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = a * x[k] + (1 - a) * y[k];
        const Tensor2 fm = net.predict(m);
        for (std::size_t k = 0; k < fm.size(); ++k) EXPECT_NEAR(fm[k], a * fx[k] + (1 - a) * fy[k], 1e-6);
    }
}

TEST(Network, ForwardIsDeterministicAndPredictMatchesInferForward) {
    std::mt19937_64 rng(14);
    const Tensor2 x = random_tensor(9, 3, rng);
    const std::vector<LayerSpec> vh{LayerSpec::conv1d(32, 3, ActivationKind::Relu), LayerSpec::dropout(0.5),
                                    LayerSpec::maxpool1d(3), LayerSpec::conv1d(32, 3, ActivationKind::Relu),
                                    LayerSpec::upsample1d(3), LayerSpec::conv1d(3, 3)};
    Network a({9, 3}, vh, 5), b({9, 3}, vh, 5);
    EXPECT_EQ(a.forward(x, Mode::Train), b.forward(x, Mode::Train));
    EXPECT_EQ(a.forward(x, Mode::Infer), a.predict(x));
    EXPECT_EQ(a.predict(x), b.predict(x));
}

TEST(Network, StackedBatchEqualsPerSampleForward) {
    std::mt19937_64 rng(15);
    Network net({18, 3}, dae_layers(ActivationKind::Relu), 6);
    const Tensor2 a = random_tensor(18, 3, rng), b = random_tensor(18, 3, rng);
    Tensor2 both(36, 3);
    std::copy(a.data().begin(), a.data().end(), both.data().begin());
    std::copy(b.data().begin(), b.data().end(), both.data().begin() + 54);
    const Tensor2 out = net.forward(both, Mode::Infer);
    const Tensor2 pa = net.predict(a), pb = net.predict(b);
    for (std::size_t k = 0; k < 54; ++k) {
        EXPECT_NEAR(out[k], pa[k], 1e-12);
        EXPECT_NEAR(out[54 + k], pb[k], 1e-12);
    }
}

TEST(Serialization, RoundTripAndMismatch) {
    Network a({18, 3}, dae_layers(ActivationKind::Relu), 7);
    Network b({18, 3}, dae_layers(ActivationKind::Relu), 8);
    std::stringstream ss;
    write_parameters(ss, a);
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 4), "PHNN");
    read_parameters(ss, b);
    EXPECT_EQ(a.flat_parameters(), b.flat_parameters());

    Network c({9, 3}, {LayerSpec::conv1d(4, 3), LayerSpec::conv1d(3, 3)}, 1);
    std::stringstream s2(bytes);
    EXPECT_THROW(read_parameters(s2, c), std::runtime_error);
    std::stringstream s3(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_parameters(s3, b), std::runtime_error);
}
