#pragma once

#include "phantom/kinematics.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace phantom::preprocess {

// ---------------------------------------------------------------------------
// Occlusion repair
// ---------------------------------------------------------------------------

/// Replaces Invisible/Referred samples between Observable ones: positions by
/// linear interpolation, rotations by slerp, both parameterized by timestamp.
/// Repaired samples are marked Referred. Leading and trailing gaps hold the
/// nearest Observable sample. Throws std::invalid_argument naming any joint
/// that is never Observable.
MotionSequence fill_gaps(const MotionSequence& seq);

/// Scalar constant-velocity Kalman filter with state [value, velocity].
/// Process noise is continuous white acceleration with spectral density q.
class ConstantVelocityKalman {
public:
    ConstantVelocityKalman(double q, double r);

    void reset(double measurement);
    void predict(double dt);
    void update(double measurement);

    bool initialized() const { return initialized_; }
    double value() const { return x_(0); }
    double velocity() const { return x_(1); }
    const Eigen::Matrix2d& covariance() const { return p_; }

private:
    double q_;
    double r_;
    bool initialized_ = false;
    Eigen::Vector2d x_ = Eigen::Vector2d::Zero();
    Eigen::Matrix2d p_ = Eigen::Matrix2d::Zero();
};

inline constexpr double kDefaultProcessNoise = 1e-4;
inline constexpr double kDefaultMeasurementNoise = 2.5e-3;

/// Filters every position coordinate and quaternion component of every joint.
/// Invisible samples are predicted but never used as measurements.
/// Throws std::invalid_argument if any frame interval deviates more than 5%
/// from the median interval, or if q or r is not positive.
MotionSequence kalman_smooth(const MotionSequence& seq, double q = kDefaultProcessNoise,
                             double r = kDefaultMeasurementNoise);

// ---------------------------------------------------------------------------
// Spatial normalization
// ---------------------------------------------------------------------------

struct NormalizationParams {
    std::vector<double> reference_lengths;  // one per bone, topology order
    Vec3 facing = Vec3::UnitZ();
    Vec3 up = Vec3::UnitY();
    JointId origin = 0;
    JointId left_shoulder = 0;
    JointId right_shoulder = 0;
};

/// Reference lengths taken from the first frame; origin = topology root;
/// shoulders looked up by the names `shoulder_l` / `shoulder_r`.
NormalizationParams default_normalization(const MotionSequence& reference);

/// Facing direction of a frame: up x (right_shoulder - left_shoulder),
/// projected onto the horizontal plane.
Vec3 facing_direction(const SkeletonFrame& frame, const NormalizationParams& params);

/// Bone scaling (root to leaf), rotation about `up` so the facing direction
/// matches `params.facing`, then translation of the origin joint to zero.
MotionSequence normalize_spatial(const MotionSequence& seq, const NormalizationParams& params);

// ---------------------------------------------------------------------------
// Smoothing
// ---------------------------------------------------------------------------

inline constexpr int kDefaultSavgolWindow = 9;
inline constexpr int kDefaultSavgolOrder = 3;

/// Least-squares local polynomial smoothing. Samples within half a window of
/// either end are evaluated on the full-width window shifted inside the series.
std::vector<double> savitzky_golay(std::span<const double> series, int window = kDefaultSavgolWindow,
                                   int order = kDefaultSavgolOrder);

/// Applies savitzky_golay to every position coordinate of every joint.
MotionSequence savitzky_golay(const MotionSequence& seq, int window = kDefaultSavgolWindow,
                              int order = kDefaultSavgolOrder);

// ---------------------------------------------------------------------------
// Temporal alignment
// ---------------------------------------------------------------------------

struct DtwResult {
    double cost = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> path;
};

/// Classic DTW with Euclidean local cost. `band` enables a Sakoe-Chiba window
/// of the given half-width (measured along the rescaled diagonal).
DtwResult dtw_align(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                    std::optional<std::size_t> band = std::nullopt);

// ---------------------------------------------------------------------------
// Modal decomposition
// ---------------------------------------------------------------------------

struct ModeDecomposition {
    Eigen::VectorXd singular_values;  // descending
    Eigen::MatrixXd left;             // time x k
    Eigen::MatrixXd right;            // features x k

    Eigen::MatrixXd reconstruct() const;
};

/// Top-k singular triplets by one-sided Jacobi. Throws std::invalid_argument
/// unless 1 <= k <= min(rows, cols).
ModeDecomposition svd_modes(const Eigen::MatrixXd& motion, int k);

/// Frames x (3 * joints) matrix of positions.
Eigen::MatrixXd position_matrix(const MotionSequence& seq);

/// Replaces positions by their rank-k reconstruction about the per-column mean.
MotionSequence svd_truncate(const MotionSequence& seq, int k);

}  // namespace phantom::preprocess
