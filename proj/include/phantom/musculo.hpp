#pragma once

#include "phantom/kinematics.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <utility>
#include <vector>

namespace phantom::musculo {

/// Symmetric joint-to-joint correlation with unit diagonal.
struct CorrelationGraph {
    std::vector<JointId> joints;
    Eigen::MatrixXd weights;

    std::size_t size() const { return joints.size(); }
    /// Restriction to the given joints (must be members), in the given order.
    CorrelationGraph subgraph(const std::vector<JointId>& members) const;
    double between(JointId a, JointId b) const;
};

/// A wire feeds the joints of subsystem `input` into the pipeline that
/// produces subsystem `output` (indices into `subsystems`).
struct Wire {
    std::size_t input;
    std::size_t output;
    bool operator==(const Wire&) const = default;
};

struct SubsystemPartition {
    std::vector<std::vector<JointId>> subsystems;  // each sorted; ordered by first member
    std::vector<Wire> wiring;

    bool operator==(const SubsystemPartition&) const = default;
};

/// Pearson correlation of per-joint speed series |dp|/dt over all joints of
/// the topology (or only `joints` when given). Zero-variance joints correlate
/// 0 with every other joint.
CorrelationGraph correlation_from_motion(const MotionSequence& seq);
CorrelationGraph correlation_from_motion(const MotionSequence& seq, const std::vector<JointId>& joints);

/// Average-linkage agglomerative clustering on d = 1 - |corr|, stopped at k
/// clusters. Ties merge the pair with the lowest (first, second) leader ids.
SubsystemPartition hierarchical_cluster(const CorrelationGraph& g, std::size_t k);

/// Mean absolute pairwise correlation between two joint sets.
double subsystem_correlation(const CorrelationGraph& g, const std::vector<JointId>& a, const std::vector<JointId>& b);

/// Wires output subsystems to input subsystems. Subsystems wholly inside
/// `inputs` are input subsystems; those inside `outputs` are output
/// subsystems. multi=false picks the single most-correlated input per output;
/// multi=true wires every input to every output.
SubsystemPartition derive_wiring(const SubsystemPartition& p, const CorrelationGraph& g,
                                 const std::vector<JointId>& inputs, const std::vector<JointId>& outputs, bool multi);

/// Union of two partitions over disjoint joint sets, re-sorted by first member.
SubsystemPartition merge_partitions(const SubsystemPartition& a, const SubsystemPartition& b);

}  // namespace phantom::musculo
