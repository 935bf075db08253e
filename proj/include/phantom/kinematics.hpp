#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace phantom {

using Vec3 = Eigen::Vector3d;
using JointId = std::size_t;

/// Unit quaternion (w, x, y, z) = (cos(theta/2), sin(theta/2) * axis).
///
/// Every constructed value is normalized and carries the canonical sign
/// w >= 0, so q and -q (the same rotation) compare equal.
class Quaternion {
public:
    Quaternion() = default;
    Quaternion(double w, double x, double y, double z);

    static Quaternion identity() { return {}; }
    static Quaternion from_axis_angle(const Vec3& axis, double angle);

    double w() const { return w_; }
    double x() const { return x_; }
    double y() const { return y_; }
    double z() const { return z_; }

    double norm() const;
    double dot(const Quaternion& o) const;
    Quaternion conjugate() const { return {w_, -x_, -y_, -z_}; }
    Quaternion operator*(const Quaternion& rhs) const;

    Vec3 rotate(const Vec3& v) const;
    Eigen::Matrix3d to_matrix() const;

    /// Rotation angle in [0, pi] between two orientations.
    double angle_to(const Quaternion& o) const;

    bool operator==(const Quaternion&) const = default;

private:
    double w_ = 1.0;
    double x_ = 0.0;
    double y_ = 0.0;
    double z_ = 0.0;
};

/// Intrinsic Z-X-Y Euler angles: R = Rz(alpha) * Rx(beta) * Ry(gamma).
struct EulerAngle {
    double alpha = 0.0;  // about Z
    double beta = 0.0;   // about X
    double gamma = 0.0;  // about Y
    // Set when |sin(beta)| is within 1e-7 of 1; gamma is then 0 and alpha
    // carries the combined Z/Y rotation.
    bool gimbal_locked = false;
};

enum class TrackingStatus : std::uint8_t { Invisible = 0, Referred = 1, Observable = 2 };

struct JointFrame {
    Vec3 position = Vec3::Zero();
    Quaternion rotation;
    TrackingStatus status = TrackingStatus::Observable;
};

struct SkeletonFrame {
    double timestamp = 0.0;
    std::vector<JointFrame> joints;
};

struct Bone {
    JointId parent;
    JointId child;
    bool operator==(const Bone&) const = default;
};

class SkeletonTopology {
public:
    SkeletonTopology() = default;
    /// Throws std::invalid_argument unless bones form a spanning tree.
    SkeletonTopology(std::vector<std::string> joint_names, std::vector<Bone> bones);

    std::size_t joint_count() const { return names_.size(); }
    const std::vector<std::string>& joint_names() const { return names_; }
    const std::vector<Bone>& bones() const { return bones_; }
    const std::string& name(JointId j) const { return names_.at(j); }
    JointId root() const { return root_; }

    /// Throws std::out_of_range for unknown names.
    JointId find(const std::string& name) const;
    bool contains(const std::string& name) const;

    /// Bone indices ordered so every parent is visited before its children.
    const std::vector<std::size_t>& root_to_leaf_order() const { return order_; }

    bool operator==(const SkeletonTopology& o) const { return names_ == o.names_ && bones_ == o.bones_; }

private:
    std::vector<std::string> names_;
    std::vector<Bone> bones_;
    JointId root_ = 0;
    std::vector<std::size_t> order_;
};

class MotionSequence {
public:
    MotionSequence() = default;
    /// Validates joint counts, finite positions and strictly increasing timestamps.
    MotionSequence(SkeletonTopology topology, std::vector<SkeletonFrame> frames);

    const SkeletonTopology& topology() const { return topology_; }
    const std::vector<SkeletonFrame>& frames() const { return frames_; }
    std::size_t size() const { return frames_.size(); }
    const SkeletonFrame& operator[](std::size_t i) const { return frames_[i]; }

private:
    SkeletonTopology topology_;
    std::vector<SkeletonFrame> frames_;
};

EulerAngle quat_to_euler(const Quaternion& q);
Quaternion euler_to_quat(const EulerAngle& e);
Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double t);

std::vector<double> bone_lengths(const SkeletonFrame& frame, const SkeletonTopology& topo);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

}  // namespace phantom
