#include "phantom/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace phantom {

namespace {

constexpr double kGimbalTolerance = 1e-7;
constexpr double kSlerpLinearThreshold = 1.0 - 1e-9;

}  // namespace

Quaternion::Quaternion(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw std::invalid_argument("quaternion must have finite nonzero norm");
    }
    // Already-unit input is only sign-adjusted so normalization is idempotent
    // bit for bit.
    const double sign = w < 0.0 ? -1.0 : 1.0;
    const double s = std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() ? sign : sign / n;
    w_ = w * s;
    x_ = x * s;
    y_ = y * s;
    z_ = z * s;
}

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 u = axis.normalized();
    const double s = std::sin(angle / 2.0);
    return {std::cos(angle / 2.0), s * u.x(), s * u.y(), s * u.z()};
}

double Quaternion::norm() const { return std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_); }

double Quaternion::dot(const Quaternion& o) const { return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_; }

Quaternion Quaternion::operator*(const Quaternion& r) const {
    return {w_ * r.w_ - x_ * r.x_ - y_ * r.y_ - z_ * r.z_,
            w_ * r.x_ + x_ * r.w_ + y_ * r.z_ - z_ * r.y_,
            w_ * r.y_ - x_ * r.z_ + y_ * r.w_ + z_ * r.x_,
            w_ * r.z_ + x_ * r.y_ - y_ * r.x_ + z_ * r.w_};
}

Eigen::Matrix3d Quaternion::to_matrix() const {
    const double w = w_, x = x_, y = y_, z = z_;
    Eigen::Matrix3d m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return m;
}

Vec3 Quaternion::rotate(const Vec3& v) const { return to_matrix() * v; }

double Quaternion::angle_to(const Quaternion& o) const {
    // atan2 form keeps precision for nearly equal orientations.
    const double c = std::abs(dot(o));
    const Quaternion d = conjugate() * o;
    const double s = std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
    return 2.0 * std::atan2(s, std::min(c, 1.0));
}

SkeletonTopology::SkeletonTopology(std::vector<std::string> joint_names, std::vector<Bone> bones)
    : names_(std::move(joint_names)), bones_(std::move(bones)) {
    const std::size_t n = names_.size();
    if (n == 0) throw std::invalid_argument("topology needs at least one joint");
    if (bones_.size() != n - 1) {
        throw std::invalid_argument("topology must have exactly joint_count - 1 bones");
    }
    std::vector<int> parent_of(n, -1);
    for (const Bone& b : bones_) {
        if (b.parent >= n || b.child >= n || b.parent == b.child) {
            throw std::invalid_argument("bone references an invalid joint");
        }
        if (parent_of[b.child] != -1) {
            throw std::invalid_argument("joint '" + names_[b.child] + "' has two parents");
        }
        parent_of[b.child] = static_cast<int>(b.parent);
    }
    std::size_t roots = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (parent_of[j] == -1) {
            root_ = j;
            ++roots;
        }
    }
    if (roots != 1) throw std::invalid_argument("bones must form a single tree");

    // Breadth-first from the root; every joint must be reached.
    std::vector<bool> seen(n, false);
    std::vector<JointId> frontier{root_};
    seen[root_] = true;
    while (!frontier.empty()) {
        std::vector<JointId> next;
        for (JointId p : frontier) {
            for (std::size_t bi = 0; bi < bones_.size(); ++bi) {
                if (bones_[bi].parent != p) continue;
                order_.push_back(bi);
                seen[bones_[bi].child] = true;
                next.push_back(bones_[bi].child);
            }
        }
        frontier = std::move(next);
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw std::invalid_argument("bones contain a cycle or disconnected joint");
    }
}

JointId SkeletonTopology::find(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::out_of_range("unknown joint '" + name + "'");
    return static_cast<JointId>(it - names_.begin());
}

bool SkeletonTopology::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

MotionSequence::MotionSequence(SkeletonTopology topology, std::vector<SkeletonFrame> frames)
    : topology_(std::move(topology)), frames_(std::move(frames)) {
    if (frames_.empty()) throw std::invalid_argument("motion sequence must be non-empty");
    for (std::size_t i = 0; i < frames_.size(); ++i) {
        const SkeletonFrame& f = frames_[i];
        if (f.joints.size() != topology_.joint_count()) {
            throw std::invalid_argument("frame " + std::to_string(i) + " has " + std::to_string(f.joints.size()) +
                                        " joints, topology has " + std::to_string(topology_.joint_count()));
        }
        if (!std::isfinite(f.timestamp)) {
            throw std::invalid_argument("frame " + std::to_string(i) + " has a non-finite timestamp");
        }
        if (i > 0 && !(f.timestamp > frames_[i - 1].timestamp)) {
            throw std::invalid_argument("timestamps must be strictly increasing (frame " + std::to_string(i) + ")");
        }
        for (std::size_t j = 0; j < f.joints.size(); ++j) {
            if (!f.joints[j].position.allFinite()) {
                throw std::invalid_argument("non-finite position for joint '" + topology_.name(j) + "' in frame " +
                                            std::to_string(i));
            }
        }
    }
}

double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    a = std::remainder(a, 2.0 * pi);
    if (a <= -pi) a += 2.0 * pi;
    return a;
}

EulerAngle quat_to_euler(const Quaternion& q) {
    // R = Rz(a) Rx(b) Ry(c):
    //   R01 = -sa cb, R11 = ca cb, R21 = sb, R20 = -cb sc, R22 = cb cc
    const Eigen::Matrix3d r = q.to_matrix();
    EulerAngle e;
    const double cb = std::hypot(r(0, 1), r(1, 1));
    e.beta = std::atan2(r(2, 1), cb);
    if (std::abs(std::abs(r(2, 1)) - 1.0) < kGimbalTolerance) {
        // gamma := 0 leaves R = Rz(a) Rx(+-pi/2): R00 = ca, R10 = sa.
        e.gimbal_locked = true;
        e.gamma = 0.0;
        e.alpha = std::atan2(r(1, 0), r(0, 0));
    } else {
        e.alpha = std::atan2(-r(0, 1), r(1, 1));
        e.gamma = std::atan2(-r(2, 0), r(2, 2));
    }
    e.alpha = wrap_angle(e.alpha);
    e.beta = wrap_angle(e.beta);
    e.gamma = wrap_angle(e.gamma);
    return e;
}

Quaternion euler_to_quat(const EulerAngle& e) {
    const Quaternion qz = Quaternion::from_axis_angle(Vec3::UnitZ(), e.alpha);
    const Quaternion qx = Quaternion::from_axis_angle(Vec3::UnitX(), e.beta);
    const Quaternion qy = Quaternion::from_axis_angle(Vec3::UnitY(), e.gamma);
    return qz * qx * qy;
}

Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double t) {
    double w1 = q1.w(), x1 = q1.x(), y1 = q1.y(), z1 = q1.z();
    double d = q0.dot(q1);
    if (d < 0.0) {
        d = -d;
        w1 = -w1;
        x1 = -x1;
        y1 = -y1;
        z1 = -z1;
    }
    double a, b;
    if (d > kSlerpLinearThreshold) {
        a = 1.0 - t;
        b = t;
    } else {
        const double omega = std::acos(d);
        const double s = std::sin(omega);
        a = std::sin((1.0 - t) * omega) / s;
        b = std::sin(t * omega) / s;
    }
    return {a * q0.w() + b * w1, a * q0.x() + b * x1, a * q0.y() + b * y1, a * q0.z() + b * z1};
}

std::vector<double> bone_lengths(const SkeletonFrame& frame, const SkeletonTopology& topo) {
    if (frame.joints.size() != topo.joint_count()) {
        throw std::invalid_argument("frame does not conform to topology");
    }
    std::vector<double> out;
    out.reserve(topo.bones().size());
    for (const Bone& b : topo.bones()) {
        out.push_back((frame.joints[b.child].position - frame.joints[b.parent].position).norm());
    }
    return out;
}

}  // namespace phantom
