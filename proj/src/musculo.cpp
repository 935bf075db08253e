#include "phantom/musculo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace phantom::musculo {

namespace {

std::size_t position_of(const std::vector<JointId>& joints, JointId j) {
    auto it = std::find(joints.begin(), joints.end(), j);
    if (it == joints.end()) throw std::invalid_argument("joint " + std::to_string(j) + " not in correlation graph");
    return static_cast<std::size_t>(it - joints.begin());
}

bool contains(const std::vector<JointId>& set, JointId j) { return std::find(set.begin(), set.end(), j) != set.end(); }

}  // namespace

CorrelationGraph CorrelationGraph::subgraph(const std::vector<JointId>& members) const {
    CorrelationGraph g;
    g.joints = members;
    g.weights.resize(members.size(), members.size());
    std::vector<std::size_t> idx;
    for (JointId j : members) idx.push_back(position_of(joints, j));
    for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t b = 0; b < idx.size(); ++b) g.weights(a, b) = weights(idx[a], idx[b]);
    }
    return g;
}

double CorrelationGraph::between(JointId a, JointId b) const {
    return weights(position_of(joints, a), position_of(joints, b));
}

CorrelationGraph correlation_from_motion(const MotionSequence& seq) {
    std::vector<JointId> all(seq.topology().joint_count());
    std::iota(all.begin(), all.end(), JointId{0});
    return correlation_from_motion(seq, all);
}

CorrelationGraph correlation_from_motion(const MotionSequence& seq, const std::vector<JointId>& joints) {
    if (seq.size() < 2) throw std::invalid_argument("correlation needs at least two frames");
    const std::size_t n = seq.size() - 1;
    const std::size_t m = joints.size();

    Eigen::MatrixXd speed(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = seq[i + 1].timestamp - seq[i].timestamp;
        for (std::size_t c = 0; c < m; ++c) {
            const JointId j = joints[c];
            speed(i, c) = (seq[i + 1].joints[j].position - seq[i].joints[j].position).norm() / dt;
        }
    }
    Eigen::MatrixXd centred = speed.rowwise() - speed.colwise().mean();
    Eigen::VectorXd norms = centred.colwise().norm();

    CorrelationGraph g;
    g.joints = joints;
    g.weights = Eigen::MatrixXd::Identity(m, m);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
            double r = 0.0;
            if (norms(a) > 0.0 && norms(b) > 0.0) {
                r = centred.col(a).dot(centred.col(b)) / (norms(a) * norms(b));
                r = std::clamp(r, -1.0, 1.0);
            }
            g.weights(a, b) = r;
            g.weights(b, a) = r;
        }
    }
    return g;
}

SubsystemPartition hierarchical_cluster(const CorrelationGraph& g, std::size_t k) {
    const std::size_t n = g.size();
    if (k < 1 || k > n) {
        throw std::invalid_argument("cluster count " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }

    std::vector<std::vector<JointId>> clusters;
    for (JointId j : g.joints) clusters.push_back({j});

    auto distance = [&](JointId a, JointId b) { return 1.0 - std::abs(g.between(a, b)); };
    // Members are kept sorted and the lower-led cluster is always summed
    // first, so results do not depend on the graph's joint ordering.
    auto linkage = [&](const std::vector<JointId>& a, const std::vector<JointId>& b) {
        double sum = 0.0;
        for (JointId x : a) {
            for (JointId y : b) sum += distance(x, y);
        }
        return sum / static_cast<double>(a.size() * b.size());
    };

    while (clusters.size() > k) {
        std::size_t best_a = 0, best_b = 1;
        double best = std::numeric_limits<double>::infinity();
        std::pair<JointId, JointId> best_key{};
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                const bool a_first = clusters[a].front() < clusters[b].front();
                const double d = a_first ? linkage(clusters[a], clusters[b]) : linkage(clusters[b], clusters[a]);
                const std::pair<JointId, JointId> key = std::minmax(clusters[a].front(), clusters[b].front());
                if (d < best || (d == best && key < best_key)) {
                    best = d;
                    best_a = a;
                    best_b = b;
                    best_key = key;
                }
            }
        }
        std::vector<JointId> merged;
        std::merge(clusters[best_a].begin(), clusters[best_a].end(), clusters[best_b].begin(), clusters[best_b].end(),
                   std::back_inserter(merged));
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
        clusters[best_a] = std::move(merged);
    }

    std::sort(clusters.begin(), clusters.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });
    return SubsystemPartition{std::move(clusters), {}};
}

double subsystem_correlation(const CorrelationGraph& g, const std::vector<JointId>& a, const std::vector<JointId>& b) {
    if (a.empty() || b.empty()) return 0.0;
    double sum = 0.0;
    for (JointId x : a) {
        for (JointId y : b) sum += std::abs(g.between(x, y));
    }
    return sum / static_cast<double>(a.size() * b.size());
}

SubsystemPartition derive_wiring(const SubsystemPartition& p, const CorrelationGraph& g,
                                 const std::vector<JointId>& inputs, const std::vector<JointId>& outputs, bool multi) {
    std::vector<std::size_t> in_subs, out_subs;
    for (std::size_t s = 0; s < p.subsystems.size(); ++s) {
        const auto& members = p.subsystems[s];
        const bool any_in = std::any_of(members.begin(), members.end(), [&](JointId j) { return contains(inputs, j); });
        const bool all_in = std::all_of(members.begin(), members.end(), [&](JointId j) { return contains(inputs, j); });
        const bool any_out = std::any_of(members.begin(), members.end(), [&](JointId j) { return contains(outputs, j); });
        const bool all_out = std::all_of(members.begin(), members.end(), [&](JointId j) { return contains(outputs, j); });
        if (any_out && any_in) {
            throw std::invalid_argument("subsystem " + std::to_string(s) + " mixes input and output joints");
        }
        if (all_in) {
            in_subs.push_back(s);
        } else if (all_out) {
            out_subs.push_back(s);
        }
    }
    auto covered = [&](const std::vector<JointId>& set) {
        return std::all_of(set.begin(), set.end(), [&](JointId j) {
            return std::any_of(p.subsystems.begin(), p.subsystems.end(),
                               [&](const auto& members) { return contains(members, j); });
        });
    };
    if (!covered(inputs) || !covered(outputs)) throw std::invalid_argument("partition does not cover all channel joints");
    if (in_subs.empty() || out_subs.empty()) throw std::invalid_argument("wiring needs input and output subsystems");

    SubsystemPartition result{p.subsystems, {}};
    for (std::size_t o : out_subs) {
        if (multi) {
            for (std::size_t i : in_subs) result.wiring.push_back({i, o});
            continue;
        }
        std::size_t best = in_subs.front();
        double best_corr = -1.0;
        for (std::size_t i : in_subs) {
            const double c = subsystem_correlation(g, p.subsystems[i], p.subsystems[o]);
            if (c > best_corr) {
                best_corr = c;
                best = i;
            }
        }
        result.wiring.push_back({best, o});
    }
    return result;
}

SubsystemPartition merge_partitions(const SubsystemPartition& a, const SubsystemPartition& b) {
    std::vector<std::vector<JointId>> all = a.subsystems;
    all.insert(all.end(), b.subsystems.begin(), b.subsystems.end());
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });
    return SubsystemPartition{std::move(all), {}};
}

}  // namespace phantom::musculo
