#include "phantom/model.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>

namespace phantom::model {

using nn::ActivationKind;
using nn::LayerSpec;
using nn::Shape;
using nn::Tensor2;

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::size_t index_in(const std::vector<std::string>& v, const std::string& name) {
    auto it = std::find(v.begin(), v.end(), name);
    if (it == v.end()) throw std::invalid_argument("joint '" + name + "' is not part of the channel set");
    return static_cast<std::size_t>(it - v.begin());
}

bool is_vhnn(ArchKind k) { return k == ArchKind::VHNN2 || k == ArchKind::VHNN4; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid))) / 2.0;
    }
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

std::string to_string(ArchKind k) {
    switch (k) {
        case ArchKind::MLP: return "MLP";
        case ArchKind::DAE: return "DAE";
        case ArchKind::VHNN2: return "VHNN2";
        case ArchKind::VHNN4: return "VHNN4";
    }
    return "?";
}

ArchKind arch_from_string(const std::string& s) {
    const std::string l = lower(s);
    if (l == "mlp") return ArchKind::MLP;
    if (l == "dae") return ArchKind::DAE;
    if (l == "vhnn2" || l == "vhnn-2") return ArchKind::VHNN2;
    if (l == "vhnn4" || l == "vhnn-4") return ArchKind::VHNN4;
    throw std::invalid_argument("unknown architecture '" + s + "' (expected MLP, DAE, VHNN2 or VHNN4)");
}

std::string to_string(OutputMode m) { return m == OutputMode::Default ? "default" : "paper-literal"; }

OutputMode output_mode_from_string(const std::string& s) {
    const std::string l = lower(s);
    if (l == "default") return OutputMode::Default;
    if (l == "paper-literal" || l == "literal") return OutputMode::PaperLiteral;
    throw std::invalid_argument("unknown output mode '" + s + "' (expected default or paper-literal)");
}

// ---------------------------------------------------------------------------
// Channels and specs
// ---------------------------------------------------------------------------

std::vector<std::string> ChannelSet::input_joints() const {
    std::vector<std::string> out;
    for (const auto& ch : inputs) out.insert(out.end(), ch.begin(), ch.end());
    return out;
}

void ChannelSet::validate() const {
    if (inputs.empty()) throw std::invalid_argument("channel set has no input channels");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].empty()) throw std::invalid_argument("input channel x" + std::to_string(i + 1) + " is empty");
    }
    if (target.empty()) throw std::invalid_argument("target channel is empty");
    std::set<std::string> seen;
    for (const auto& n : input_joints()) {
        if (!seen.insert(n).second) throw std::invalid_argument("joint '" + n + "' appears twice in the input channels");
    }
    std::set<std::string> tseen;
    for (const auto& n : target) {
        if (seen.contains(n)) throw std::invalid_argument("joint '" + n + "' is both an input and a target");
        if (!tseen.insert(n).second) throw std::invalid_argument("joint '" + n + "' appears twice in the target channel");
    }
}

ChannelSet default_channels(OutputMode mode) {
    ChannelSet c;
    const std::vector<std::vector<std::string>> groups = {
        {"clavicle", "shoulder", "upperarm"}, {"elbow", "forearm", "wrist"}, {"hand", "handtip", "thumb"}};
    for (const auto& g : groups) {
        std::vector<std::string> ch;
        for (const char* side : {"_l", "_r"}) {
            for (const auto& n : g) ch.push_back(n + side);
        }
        c.inputs.push_back(std::move(ch));
    }
    const std::vector<std::string> legs = mode == OutputMode::Default ? dataio::gait_leg_joints()
                                                                      : std::vector<std::string>{"hip", "knee", "ankle"};
    for (const char* side : {"_l", "_r"}) {
        for (const auto& n : legs) c.target.push_back(n + side);
    }
    return c;
}

std::vector<Pipeline> ModelSpec::pipelines() const {
    const std::vector<std::string> in = channels.input_joints();
    auto ordered = [](std::vector<std::string> names, const std::vector<std::string>& order) {
        std::sort(names.begin(), names.end(), [&](const std::string& a, const std::string& b) {
            return index_in(order, a) < index_in(order, b);
        });
        return names;
    };
    std::vector<Pipeline> out;
    for (const musculo::Wire& w : wiring) {
        out.push_back({ordered(subsystems.at(w.input), in), ordered(subsystems.at(w.output), channels.target)});
    }
    return out;
}

void ModelSpec::validate() const {
    channels.validate();
    if (!is_vhnn(kind)) {
        if (!subsystems.empty() || !wiring.empty()) {
            throw std::invalid_argument(to_string(kind) + " does not take a subsystem partition");
        }
        return;
    }
    const std::vector<std::string> in = channels.input_joints();
    for (const auto& s : subsystems) {
        if (s.empty()) throw std::invalid_argument("empty subsystem");
    }
    for (const musculo::Wire& w : wiring) {
        if (w.input >= subsystems.size() || w.output >= subsystems.size()) {
            throw std::invalid_argument("wire references a missing subsystem");
        }
    }
    const std::vector<Pipeline> ps = pipelines();  // also checks joint membership
    for (const Pipeline& p : ps) {
        for (const auto& n : p.outputs) {
            if (std::find(channels.target.begin(), channels.target.end(), n) == channels.target.end()) {
                throw std::invalid_argument("pipeline output '" + n + "' is not a target joint");
            }
        }
    }
    std::set<std::vector<std::string>> ins, outs;
    std::set<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
    for (const Pipeline& p : ps) {
        ins.insert(p.inputs);
        outs.insert(p.outputs);
        pairs.insert({p.inputs, p.outputs});
    }
    auto covers = [](const std::set<std::vector<std::string>>& sets, const std::vector<std::string>& all) {
        std::multiset<std::string> m;
        for (const auto& s : sets) m.insert(s.begin(), s.end());
        return m == std::multiset<std::string>(all.begin(), all.end());
    };
    const std::string k = to_string(kind);
    if (kind == ArchKind::VHNN2) {
        if (ps.size() != 2 || ins.size() != 2 || outs.size() != 2) {
            throw std::invalid_argument("VHNN2 needs exactly 2 pipelines wired one-to-one, got " +
                                        std::to_string(ps.size()));
        }
    } else {
        if (ps.size() != 4 || ins.size() != 2 || outs.size() != 2 || pairs.size() != 4) {
            throw std::invalid_argument("VHNN4 needs exactly 4 pipelines covering every input x output pair, got " +
                                        std::to_string(ps.size()));
        }
    }
    if (!covers(ins, in)) throw std::invalid_argument(k + " input subsystems must partition the input joints");
    if (!covers(outs, channels.target)) {
        throw std::invalid_argument(k + " output subsystems must partition the target joints");
    }
}

ModelSpec make_spec(ArchKind kind, const ChannelSet& channels, OutputMode mode, std::uint64_t seed) {
    ModelSpec s;
    s.kind = kind;
    s.channels = channels;
    s.output_mode = mode;
    s.seed = seed;
    s.weight_decay = kind == ArchKind::MLP ? 1e-4 : 0.0;
    return s;
}

void derive_partition(ModelSpec& spec, const MotionSequence& seq) {
    if (!is_vhnn(spec.kind)) return;
    spec.channels.validate();
    const SkeletonTopology& topo = seq.topology();
    std::vector<JointId> in_ids, out_ids;
    try {
        for (const auto& n : spec.channels.input_joints()) in_ids.push_back(topo.find(n));
        for (const auto& n : spec.channels.target) out_ids.push_back(topo.find(n));
    } catch (const std::out_of_range& e) {
        throw std::invalid_argument(std::string("channel joint missing from the motion data: ") + e.what());
    }
    std::vector<JointId> all = in_ids;
    all.insert(all.end(), out_ids.begin(), out_ids.end());
    const musculo::CorrelationGraph g = musculo::correlation_from_motion(seq, all);
    const auto in_part = musculo::hierarchical_cluster(g.subgraph(in_ids), 2);
    const auto out_part = musculo::hierarchical_cluster(g.subgraph(out_ids), 2);
    const auto wired = musculo::derive_wiring(musculo::merge_partitions(in_part, out_part), g, in_ids, out_ids,
                                              spec.kind == ArchKind::VHNN4);
    spec.subsystems.clear();
    for (const auto& members : wired.subsystems) {
        std::vector<std::string> names;
        for (JointId j : members) names.push_back(topo.name(j));
        spec.subsystems.push_back(std::move(names));
    }
    spec.wiring = wired.wiring;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

void FeatureStats::validate() const {
    if (mean.size() != scale.size()) throw std::invalid_argument("normalization mean/scale length mismatch");
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (!std::isfinite(mean[i]) || !std::isfinite(scale[i]) || !(scale[i] > 0.0)) {
            throw std::invalid_argument("normalization statistics must be finite with positive scale (feature " +
                                        std::to_string(i) + ")");
        }
    }
}

Tensor2 standardize(const Tensor2& raw, const FeatureStats& s) {
    if (raw.size() != s.mean.size()) throw std::invalid_argument("standardize: feature count mismatch");
    Tensor2 z(raw.shape());
    for (std::size_t k = 0; k < raw.size(); ++k) z[k] = (raw[k] - s.mean[k]) / s.scale[k];
    return z;
}

Tensor2 destandardize(const Tensor2& z, const FeatureStats& s) {
    if (z.size() != s.mean.size()) throw std::invalid_argument("destandardize: feature count mismatch");
    Tensor2 raw(z.shape());
    for (std::size_t k = 0; k < z.size(); ++k) raw[k] = z[k] * s.scale[k] + s.mean[k];
    return raw;
}

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

std::vector<LayerSpec> architecture_layers(ArchKind kind, ActivationKind hidden, std::size_t output_filters,
                                           std::size_t mlp_outputs) {
    constexpr std::size_t kFilters = 32, kKernel = 3;
    std::vector<LayerSpec> l;
    switch (kind) {
        case ArchKind::MLP:
            for (int i = 0; i < 7; ++i) l.push_back(LayerSpec::dense(18, hidden));
            l.push_back(LayerSpec::dense(mlp_outputs, ActivationKind::Linear));
            break;
        case ArchKind::DAE:
            l = {LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::maxpool1d(3),
                 LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::maxpool1d(2),
                 LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::upsample1d(2),
                 LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::upsample1d(3),
                 LayerSpec::conv1d(output_filters, kKernel, ActivationKind::Linear)};
            break;
        case ArchKind::VHNN2:
            l = {LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::dropout(0.5), LayerSpec::maxpool1d(3),
                 LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::upsample1d(3),
                 LayerSpec::conv1d(output_filters, kKernel, ActivationKind::Linear)};
            break;
        case ArchKind::VHNN4:
            l = {LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::dropout(0.5), LayerSpec::maxpool1d(3),
                 LayerSpec::conv1d(kFilters, kKernel, hidden), LayerSpec::dropout(0.2), LayerSpec::upsample1d(3),
                 LayerSpec::conv1d(output_filters, kKernel, ActivationKind::Linear)};
            break;
    }
    return l;
}

PhantomModel build_model(const ModelSpec& spec) {
    spec.validate();
    PhantomModel m;
    m.spec_ = spec;
    const std::vector<std::string> in = spec.channels.input_joints();
    const std::vector<std::string>& out = spec.channels.target;
    m.input_joints_ = in.size();
    m.target_joints_ = out.size();
    const bool literal = spec.output_mode == OutputMode::PaperLiteral;

    auto conv_unit = [&](std::string name, std::vector<std::size_t> in_rows, std::vector<std::size_t> out_rows) {
        Unit u;
        u.name = std::move(name);
        u.in_rows = std::move(in_rows);
        u.out_rows = std::move(out_rows);
        u.in_shape = {u.in_rows.size(), 3};
        u.out_layout = literal ? Layout::FlatColumn : Layout::Rows;
        const std::size_t out_len = literal ? 3 * u.out_rows.size() : u.out_rows.size();
        if (out_len != u.in_rows.size()) {
            throw std::invalid_argument(u.name + ": " + std::to_string(u.in_rows.size()) + " input joints cannot produce " +
                                        std::to_string(u.out_rows.size()) + " target joints in " +
                                        to_string(spec.output_mode) + " output mode (length " +
                                        std::to_string(u.in_rows.size()) + " vs " + std::to_string(out_len) + ")");
        }
        u.layers = architecture_layers(spec.kind, spec.hidden_activation, literal ? 1 : 3);
        u.seed = mix64(spec.seed ^ fnv1a(u.name));
        return u;
    };

    std::vector<std::size_t> all_in(in.size()), all_out(out.size());
    std::iota(all_in.begin(), all_in.end(), std::size_t{0});
    std::iota(all_out.begin(), all_out.end(), std::size_t{0});

    switch (spec.kind) {
        case ArchKind::MLP: {
            Unit u;
            u.name = "MLP";
            u.in_rows = all_in;
            u.out_rows = all_out;
            u.in_layout = Layout::FlatRow;
            u.out_layout = Layout::FlatRow;
            u.in_shape = {1, 3 * in.size()};
            u.layers = architecture_layers(ArchKind::MLP, spec.hidden_activation, 0, 3 * out.size());
            u.seed = mix64(spec.seed ^ fnv1a(u.name));
            m.units_.push_back(std::move(u));
            break;
        }
        case ArchKind::DAE:
            m.units_.push_back(conv_unit("DAE", all_in, all_out));
            break;
        case ArchKind::VHNN2:
        case ArchKind::VHNN4:
            for (const Pipeline& p : spec.pipelines()) {
                std::vector<std::size_t> ir, orow;
                std::string name;
                for (const auto& n : p.inputs) {
                    ir.push_back(index_in(in, n));
                    name += n + ",";
                }
                name.back() = '>';
                for (const auto& n : p.outputs) {
                    orow.push_back(index_in(out, n));
                    name += n + ",";
                }
                name.pop_back();
                m.units_.push_back(conv_unit(std::move(name), std::move(ir), std::move(orow)));
            }
            break;
    }

    m.coverage_.assign(out.size(), 0);
    for (const Unit& u : m.units_) {
        for (std::size_t r : u.out_rows) ++m.coverage_[r];
        try {
            m.networks_.emplace_back(u.in_shape, u.layers, u.seed);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("pipeline '" + u.name + "': " + e.what());
        }
    }
    for (std::size_t r = 0; r < out.size(); ++r) {
        if (m.coverage_[r] == 0) throw std::invalid_argument("target joint '" + out[r] + "' is produced by no pipeline");
    }

    FeatureStats in_id{std::vector<double>(3 * in.size(), 0.0), std::vector<double>(3 * in.size(), 1.0)};
    FeatureStats out_id{std::vector<double>(3 * out.size(), 0.0), std::vector<double>(3 * out.size(), 1.0)};
    m.set_stats(std::move(in_id), std::move(out_id));
    return m;
}

void PhantomModel::set_stats(FeatureStats input, FeatureStats target) {
    input.validate();
    target.validate();
    if (input.mean.size() != 3 * input_joints_ || target.mean.size() != 3 * target_joints_) {
        throw std::invalid_argument("normalization statistics do not match the channel set");
    }
    input_stats_ = std::move(input);
    target_stats_ = std::move(target);
}

std::size_t PhantomModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& net : networks_) n += net.parameter_count();
    return n;
}

Tensor2 PhantomModel::unit_input(std::size_t ui, const Tensor2& x) const {
    const Unit& u = units_.at(ui);
    Tensor2 t(u.in_shape);
    std::size_t k = 0;
    for (std::size_t r : u.in_rows) {
        for (std::size_t c = 0; c < 3; ++c) t[k++] = x(r, c);
    }
    return t;
}

Tensor2 PhantomModel::unit_target(std::size_t ui, const Tensor2& y) const {
    const Unit& u = units_.at(ui);
    const std::size_t m = u.out_rows.size();
    Tensor2 t;
    switch (u.out_layout) {
        case Layout::Rows: t = Tensor2(m, 3); break;
        case Layout::FlatRow: t = Tensor2(1, 3 * m); break;
        case Layout::FlatColumn: t = Tensor2(3 * m, 1); break;
    }
    std::size_t k = 0;
    for (std::size_t r : u.out_rows) {
        for (std::size_t c = 0; c < 3; ++c) t[k++] = y(r, c);
    }
    return t;
}

Tensor2 PhantomModel::predict_standardized(const Tensor2& x) const {
    if (x.length() != input_joints_ || x.channels() != 3) {
        throw std::invalid_argument("model expects input (" + std::to_string(input_joints_) + ", 3), got " +
                                    nn::to_string(x.shape()));
    }
    Tensor2 y(target_joints_, 3, 0.0);
    for (std::size_t ui = 0; ui < units_.size(); ++ui) {
        const Tensor2 out = networks_[ui].predict(unit_input(ui, x));
        // All layouts are joint-major, so element k maps to row k / 3.
        std::size_t k = 0;
        for (std::size_t r : units_[ui].out_rows) {
            for (std::size_t c = 0; c < 3; ++c) y(r, c) += out[k++];
        }
    }
    for (std::size_t r = 0; r < target_joints_; ++r) {
        if (coverage_[r] > 1) {
            for (std::size_t c = 0; c < 3; ++c) y(r, c) /= static_cast<double>(coverage_[r]);
        }
    }
    return y;
}

std::vector<Vec3> PhantomModel::predict(const std::vector<Vec3>& inputs) const {
    if (inputs.size() != input_joints_) {
        throw std::invalid_argument("expected " + std::to_string(input_joints_) + " input joints, got " +
                                    std::to_string(inputs.size()));
    }
    Tensor2 raw(input_joints_, 3);
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        for (int c = 0; c < 3; ++c) raw(j, static_cast<std::size_t>(c)) = inputs[j][c];
    }
    const Tensor2 y = destandardize(predict_standardized(standardize(raw, input_stats_)), target_stats_);
    std::vector<Vec3> out(target_joints_);
    for (std::size_t j = 0; j < target_joints_; ++j) out[j] = Vec3(y(j, 0), y(j, 1), y(j, 2));
    return out;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

Tensor2 gather_positions(const SkeletonFrame& frame, const std::vector<JointId>& joints) {
    Tensor2 t(joints.size(), 3);
    for (std::size_t r = 0; r < joints.size(); ++r) {
        const Vec3& p = frame.joints.at(joints[r]).position;
        for (std::size_t c = 0; c < 3; ++c) t(r, c) = p[static_cast<Eigen::Index>(c)];
    }
    return t;
}

Dataset make_dataset(const MotionSequence& seq, const ChannelSet& channels, double noise_sigma, std::uint64_t seed,
                     double train_fraction) {
    channels.validate();
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw std::invalid_argument("noise sigma must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw std::invalid_argument("train fraction must be in (0, 1]");
    const SkeletonTopology& topo = seq.topology();
    std::vector<JointId> in_ids, out_ids;
    std::vector<std::string> missing;
    for (const auto& n : channels.input_joints()) {
        if (topo.contains(n)) in_ids.push_back(topo.find(n));
        else missing.push_back(n);
    }
    for (const auto& n : channels.target) {
        if (topo.contains(n)) out_ids.push_back(topo.find(n));
        else missing.push_back(n);
    }
    if (!missing.empty()) {
        std::string msg = "motion data lacks channel joints:";
        for (const auto& n : missing) msg += " " + n;
        throw std::invalid_argument(msg);
    }

    const std::size_t n = seq.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
    if (n_train == 0) throw std::invalid_argument("training split is empty");

    std::vector<Tensor2> xs, ys;
    for (const SkeletonFrame& f : seq.frames()) {
        xs.push_back(gather_positions(f, in_ids));
        ys.push_back(gather_positions(f, out_ids));
    }

    auto stats_of = [&](const std::vector<Tensor2>& v) {
        const std::size_t d = v.front().size();
        FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        for (std::size_t i = 0; i < n_train; ++i) {
            for (std::size_t k = 0; k < d; ++k) s.mean[k] += v[i][k];
        }
        for (double& m : s.mean) m /= static_cast<double>(n_train);
        for (std::size_t i = 0; i < n_train; ++i) {
            for (std::size_t k = 0; k < d; ++k) s.scale[k] += (v[i][k] - s.mean[k]) * (v[i][k] - s.mean[k]);
        }
        for (double& sc : s.scale) {
            sc = std::sqrt(sc / static_cast<double>(n_train));
            if (!(sc > 1e-12)) sc = 1.0;
        }
        return s;
    };

    Dataset d;
    d.input_stats = stats_of(xs);
    d.target_stats = stats_of(ys);

    std::mt19937_64 rng(mix64(seed ^ 0x6e6f697365ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor2 x = xs[i];
        if (i < n_train && noise_sigma > 0.0) {
            for (std::size_t k = 0; k < x.size(); ++k) x[k] += noise_sigma * gauss(rng);
        }
        Tensor2 zx = standardize(x, d.input_stats);
        Tensor2 zy = standardize(ys[i], d.target_stats);
        if (i < n_train) {
            d.train_x.push_back(std::move(zx));
            d.train_y.push_back(std::move(zy));
        } else {
            d.test_x.push_back(std::move(zx));
            d.test_y.push_back(std::move(zy));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::optional<std::size_t> convergence_epoch(const std::vector<double>& losses, std::size_t window, double threshold) {
    for (std::size_t i = window; i < losses.size(); ++i) {
        const double ref = losses[i - window];
        if (!(ref > 0.0)) return i + 1;
        if ((ref - losses[i]) / ref < threshold) return i + 1;
    }
    return std::nullopt;
}

namespace {

// Copies the selected samples into one tensor stacked along the length axis.
void stack(const std::vector<Tensor2>& src, const std::size_t* idx, std::size_t count, Tensor2& out) {
    const Shape one = src[idx[0]].shape();
    out.resize({one.length * count, one.channels});
    double* dst = out.data().data();
    for (std::size_t b = 0; b < count; ++b) {
        const auto d = src[idx[b]].data();
        dst = std::copy(d.begin(), d.end(), dst);
    }
}

struct BatchBuffers {
    Tensor2 x, y;
};

double batch_step(nn::Network& net, const UnitData& data, const std::size_t* idx, std::size_t count,
                  nn::OptimizerState& opt, BatchBuffers& buf) {
    net.zero_grad();
    stack(data.x, idx, count, buf.x);
    stack(data.y, idx, count, buf.y);
    // Every sample has the same size, so the stacked MSE is the batch mean
    // of the per-sample losses.
    const nn::LossResult lr = nn::mse_loss(net.forward(buf.x, nn::Mode::Train), buf.y);
    net.backward(lr.grad, false);
    auto params = net.parameters();
    nn::optimizer_step(params, opt);
    return lr.value;
}

double dataset_loss(const nn::Network& net, const UnitData& data) {
    if (data.x.empty()) return 0.0;
    std::vector<std::size_t> all(data.x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    BatchBuffers buf;
    stack(data.x, all.data(), all.size(), buf.x);
    stack(data.y, all.data(), all.size(), buf.y);
    return nn::mse_loss(net.predict(buf.x), buf.y).value;
}

std::vector<std::vector<double>> snapshot(nn::Network& net) {
    std::vector<std::vector<double>> s;
    for (auto& p : net.parameters()) s.emplace_back(p.value.begin(), p.value.end());
    return s;
}

void restore(nn::Network& net, const std::vector<std::vector<double>>& s) {
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) std::copy(s[i].begin(), s[i].end(), params[i].value.begin());
}

}  // namespace

FitResult fit(nn::Network& net, const UnitData& train, const UnitData* test, const TrainOptions& opts,
              double weight_decay, std::uint64_t seed) {
    if (train.x.empty() || train.x.size() != train.y.size()) {
        throw std::invalid_argument("training data must be non-empty with matching inputs and targets");
    }
    if (opts.batch == 0) throw std::invalid_argument("batch size must be positive");
    FitResult r;
    nn::OptimizerConfig cfg = opts.optimizer;
    cfg.weight_decay = weight_decay;
    nn::OptimizerState opt(cfg);
    std::mt19937_64 shuffle_rng(mix64(seed ^ 0x73687566666c65ULL));
    net.reseed_dropout(mix64(seed ^ 0x64726f706f7574ULL));

    std::vector<std::size_t> order(train.x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    BatchBuffers buf;
    const auto t0 = Clock::now();
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto last_good = snapshot(net);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double sum = 0.0;
        bool finite = true;
        for (std::size_t start = 0; start < order.size(); start += opts.batch) {
            const std::size_t count = std::min(opts.batch, order.size() - start);
            const auto s0 = opts.record_step_times ? Clock::now() : Clock::time_point{};
            const double l = batch_step(net, train, order.data() + start, count, opt, buf);
            if (opts.record_step_times) {
                r.step_times_us.push_back(std::chrono::duration<double, std::micro>(Clock::now() - s0).count());
            }
            ++r.steps;
            if (!std::isfinite(l)) {
                finite = false;
                break;
            }
            sum += l * static_cast<double>(count);
        }
        if (finite) {
            for (auto& p : net.parameters()) {
                if (!std::all_of(p.value.begin(), p.value.end(), [](double v) { return std::isfinite(v); })) {
                    finite = false;
                }
            }
        }
        if (!finite) {
            restore(net, last_good);
            r.diverged = true;
            r.diverged_epoch = epoch + 1;
            break;
        }
        r.train_loss.push_back(sum / static_cast<double>(order.size()));
        if (test && !test->x.empty()) r.test_loss.push_back(dataset_loss(net, *test));
    }
    r.seconds = seconds_since(t0);
    return r;
}

TrainReport train(PhantomModel& model, const Dataset& data, const TrainOptions& opts) {
    if (data.train_x.empty()) throw std::invalid_argument("dataset has no training samples");
    model.set_stats(data.input_stats, data.target_stats);
    const std::size_t nu = model.units().size();

    std::vector<UnitData> train_sets(nu), test_sets(nu);
    for (std::size_t u = 0; u < nu; ++u) {
        for (std::size_t i = 0; i < data.train_x.size(); ++i) {
            train_sets[u].x.push_back(model.unit_input(u, data.train_x[i]));
            train_sets[u].y.push_back(model.unit_target(u, data.train_y[i]));
        }
        if (opts.track_test_loss) {
            for (std::size_t i = 0; i < data.test_x.size(); ++i) {
                test_sets[u].x.push_back(model.unit_input(u, data.test_x[i]));
                test_sets[u].y.push_back(model.unit_target(u, data.test_y[i]));
            }
        }
    }

    std::vector<FitResult> results(nu);
    auto run = [&](std::size_t u) {
        results[u] = fit(model.networks()[u], train_sets[u], opts.track_test_loss ? &test_sets[u] : nullptr, opts,
                         model.spec().weight_decay, model.units()[u].seed);
    };
    const auto t0 = Clock::now();
    const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, nu));
    if (threads == 1) {
        for (std::size_t u = 0; u < nu; ++u) run(u);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t u = next++; u < nu; u = next++) run(u);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    TrainReport rep;
    rep.total_seconds = seconds_since(t0);
    // Combine per-unit histories weighted by output size. A diverged unit
    // truncates the combined history at its last finite epoch.
    std::size_t epochs = opts.epochs;
    double weight_total = 0.0;
    for (std::size_t u = 0; u < nu; ++u) {
        const FitResult& r = results[u];
        epochs = std::min(epochs, r.train_loss.size());
        if (r.diverged && (!rep.diverged || r.diverged_epoch < rep.diverged_epoch)) {
            rep.diverged = true;
            rep.diverged_epoch = r.diverged_epoch;
        }
        rep.steps += r.steps;
        rep.step_times_us.insert(rep.step_times_us.end(), r.step_times_us.begin(), r.step_times_us.end());
        weight_total += static_cast<double>(model.units()[u].out_rows.size());
    }
    rep.train_loss.assign(epochs, 0.0);
    if (opts.track_test_loss && !data.test_x.empty()) rep.test_loss.assign(epochs, 0.0);
    for (std::size_t u = 0; u < nu; ++u) {
        const double w = static_cast<double>(model.units()[u].out_rows.size()) / weight_total;
        for (std::size_t e = 0; e < epochs; ++e) {
            rep.train_loss[e] += w * results[u].train_loss[e];
            if (!rep.test_loss.empty()) rep.test_loss[e] += w * results[u].test_loss[e];
        }
    }
    rep.convergence = convergence_epoch(rep.train_loss);
    // Units run one after another on a single thread, so a whole-model step
    // costs the sum of one step per unit.
    const std::size_t per_unit_steps = nu ? rep.steps / nu : 0;
    rep.step_us = per_unit_steps ? rep.total_seconds * 1e6 / static_cast<double>(per_unit_steps) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

namespace {

// Raises DataError / std::invalid_argument for frames that do not fit the model.
std::vector<Vec3> generate_frame(const PhantomModel& model, const std::vector<std::string>& in,
                                 const dataio::NamedFrame& f) {
    std::vector<Vec3> inputs;
    inputs.reserve(in.size());
    for (const auto& n : in) inputs.push_back(f.at(n).position);
    return model.predict(inputs);
}

template <class Next>
StreamStats run_stream(const PhantomModel& model, Next&& next,
                       const std::function<void(double, const std::vector<Vec3>&)>& sink) {
    StreamStats st;
    const std::vector<std::string> in = model.spec().channels.input_joints();
    const auto t0 = Clock::now();
    while (true) {
        const auto f0 = Clock::now();
        std::optional<dataio::NamedFrame> frame;
        try {
            if (!next(frame)) break;
            if (!frame) continue;
            const std::vector<Vec3> out = generate_frame(model, in, *frame);
            sink(frame->timestamp, out);
            ++st.processed;
            st.latency_us.push_back(std::chrono::duration<double, std::micro>(Clock::now() - f0).count());
        } catch (const dataio::DataError&) {
            ++st.skipped;
        } catch (const std::invalid_argument&) {
            ++st.skipped;
        }
    }
    st.seconds = seconds_since(t0);
    return st;
}

}  // namespace

StreamStats generate_stream(const PhantomModel& model, const std::vector<dataio::NamedFrame>& frames,
                            const std::function<void(double, const std::vector<Vec3>&)>& sink) {
    std::size_t i = 0;
    return run_stream(
        model,
        [&](std::optional<dataio::NamedFrame>& out) {
            if (i >= frames.size()) return false;
            out = frames[i++];
            return true;
        },
        sink);
}

StreamStats generate_stream(const PhantomModel& model, const std::function<std::optional<std::string>()>& source,
                            const std::function<void(double, const std::vector<Vec3>&)>& sink) {
    return run_stream(
        model,
        [&](std::optional<dataio::NamedFrame>& out) {
            const std::optional<std::string> line = source();
            if (!line) return false;
            if (line->find_first_not_of(" \t\r\n") != std::string::npos) out = dataio::parse_frame_line(*line);
            return true;
        },
        sink);
}

Metrics evaluate(const PhantomModel& model, const std::vector<Tensor2>& x, const std::vector<Tensor2>& y) {
    if (x.empty()) throw std::invalid_argument("evaluation set is empty");
    if (x.size() != y.size()) throw std::invalid_argument("evaluation inputs and targets differ in count");
    Metrics m;
    m.samples = x.size();
    const std::size_t jout = model.target_joint_count();
    m.per_joint_rmse.assign(jout, 0.0);
    const FeatureStats& ts = model.target_stats();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Tensor2 p = model.predict_standardized(x[i]);
        if (p.shape() != y[i].shape()) throw std::invalid_argument("target shape does not match the model output");
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double d = p[k] - y[i][k];
            m.ground_truth_error += d * d;
            m.baseline_ground_truth_error += y[i][k] * y[i][k];
            const double dm = d * ts.scale[k];
            m.per_joint_rmse[k / 3] += dm * dm;
        }
    }
    m.mse = m.ground_truth_error / static_cast<double>(x.size() * 3 * jout);
    for (double& r : m.per_joint_rmse) r = std::sqrt(r / static_cast<double>(x.size()));
    return m;
}

namespace {

// Repeated whole-model updates on a private copy, walking the training set
// in order.
class StepTimer {
public:
    StepTimer(const PhantomModel& model, const Dataset& data, std::size_t batch) : model_(model) {
        const std::size_t nu = model_.units().size();
        n_ = data.train_x.size();
        batch_ = std::max<std::size_t>(1, std::min(batch, n_));
        sets_.resize(nu);
        bufs_.resize(nu);
        for (std::size_t u = 0; u < nu; ++u) {
            for (std::size_t i = 0; i < n_; ++i) {
                sets_[u].x.push_back(model_.unit_input(u, data.train_x[i]));
                sets_[u].y.push_back(model_.unit_target(u, data.train_y[i]));
            }
            nn::OptimizerConfig cfg;
            cfg.weight_decay = model_.spec().weight_decay;
            opts_.emplace_back(cfg);
        }
        idx_.resize(n_);
        std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    }

    double step() {
        if (offset_ + batch_ > n_) offset_ = 0;
        const auto t0 = Clock::now();
        for (std::size_t u = 0; u < sets_.size(); ++u) {
            batch_step(model_.networks()[u], sets_[u], idx_.data() + offset_, batch_, opts_[u], bufs_[u]);
        }
        const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
        offset_ += batch_;
        return us;
    }

private:
    PhantomModel model_;
    std::vector<UnitData> sets_;
    std::vector<nn::OptimizerState> opts_;
    std::vector<BatchBuffers> bufs_;
    std::vector<std::size_t> idx_;
    std::size_t n_ = 0, batch_ = 1, offset_ = 0;
};

}  // namespace

std::vector<double> median_step_us(const std::vector<const PhantomModel*>& models, const Dataset& data,
                                   std::size_t batch, std::size_t warmup, std::size_t steps) {
    if (data.train_x.empty()) throw std::invalid_argument("dataset has no training samples");
    std::vector<StepTimer> timers;
    timers.reserve(models.size());
    for (const PhantomModel* m : models) timers.emplace_back(*m, data, batch);
    std::vector<std::vector<double>> times(models.size());
    for (auto& t : times) t.reserve(steps);
    // Blocks keep each model's buffers warm in cache; alternating them keeps
    // slow phases of the machine from landing on one model only.
    constexpr std::size_t kBlock = 25;
    for (std::size_t i = 0; i < timers.size(); ++i) {
        for (std::size_t s = 0; s < warmup; ++s) timers[i].step();
    }
    for (std::size_t done = 0; done < steps;) {
        const std::size_t n = std::min(kBlock, steps - done);
        for (std::size_t i = 0; i < timers.size(); ++i) {
            timers[i].step();  // re-warm after the previous model's block
            for (std::size_t s = 0; s < n; ++s) times[i].push_back(timers[i].step());
        }
        done += n;
    }
    std::vector<double> out;
    for (auto& t : times) out.push_back(median(std::move(t)));
    return out;
}

double median_step_us(const PhantomModel& model, const Dataset& data, std::size_t batch, std::size_t warmup,
                      std::size_t steps) {
    return median_step_us(std::vector<const PhantomModel*>{&model}, data, batch, warmup, steps).front();
}

std::vector<BenchRow> bench(const std::vector<ModelSpec>& specs, const Dataset& data, const BenchOptions& opts) {
    if (specs.size() < 2) throw std::invalid_argument("bench needs at least two models");
    std::vector<PhantomModel> models;
    std::vector<BenchRow> rows;
    for (const ModelSpec& s : specs) {
        PhantomModel& m = models.emplace_back(build_model(s));
        TrainOptions to = opts.train;
        to.track_test_loss = false;
        const TrainReport rep = train(m, data, to);
        BenchRow row;
        row.architecture = to_string(s.kind);
        const double epochs = static_cast<double>(std::max<std::size_t>(1, rep.train_loss.size()));
        row.seconds_per_1k_epochs = rep.total_seconds * 1000.0 / epochs;
        row.convergence = rep.convergence;
        row.ground_truth_error = evaluate(m, data.test_x, data.test_y).ground_truth_error;
        rows.push_back(row);
    }
    std::vector<const PhantomModel*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    const std::vector<double> us = median_step_us(ptrs, data, opts.train.batch, opts.warmup_steps, opts.timed_steps);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].step_us = us[i];
    return rows;
}

}  // namespace phantom::model
