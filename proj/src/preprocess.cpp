#include "phantom/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace phantom::preprocess {

namespace {

constexpr double kSamplingJitter = 0.05;
constexpr double kInitialVelocityVariance = 1e4;

std::vector<SkeletonFrame> copy_frames(const MotionSequence& seq) { return seq.frames(); }

}  // namespace

// ---------------------------------------------------------------------------
// fill_gaps
// ---------------------------------------------------------------------------

MotionSequence fill_gaps(const MotionSequence& seq) {
    const auto& topo = seq.topology();
    std::vector<SkeletonFrame> frames = copy_frames(seq);
    const std::size_t n = frames.size();

    for (JointId j = 0; j < topo.joint_count(); ++j) {
        std::vector<std::size_t> observed;
        for (std::size_t i = 0; i < n; ++i) {
            if (frames[i].joints[j].status == TrackingStatus::Observable) observed.push_back(i);
        }
        if (observed.empty()) {
            throw std::invalid_argument("joint '" + topo.name(j) + "' is never observable");
        }

        std::size_t next = 0;  // index into observed of the first observation at or after i
        for (std::size_t i = 0; i < n; ++i) {
            while (next < observed.size() && observed[next] < i) ++next;
            JointFrame& cur = frames[i].joints[j];
            if (cur.status == TrackingStatus::Observable) continue;

            if (next == 0) {
                const JointFrame& src = seq[observed.front()].joints[j];
                cur.position = src.position;
                cur.rotation = src.rotation;
            } else if (next == observed.size()) {
                const JointFrame& src = seq[observed.back()].joints[j];
                cur.position = src.position;
                cur.rotation = src.rotation;
            } else {
                const std::size_t a = observed[next - 1];
                const std::size_t b = observed[next];
                const JointFrame& ja = seq[a].joints[j];
                const JointFrame& jb = seq[b].joints[j];
                const double t = (seq[i].timestamp - seq[a].timestamp) / (seq[b].timestamp - seq[a].timestamp);
                cur.position = ja.position + t * (jb.position - ja.position);
                cur.rotation = slerp(ja.rotation, jb.rotation, t);
            }
            cur.status = TrackingStatus::Referred;
        }
    }
    return MotionSequence(topo, std::move(frames));
}

// ---------------------------------------------------------------------------
// Kalman
// ---------------------------------------------------------------------------

ConstantVelocityKalman::ConstantVelocityKalman(double q, double r) : q_(q), r_(r) {
    if (!(q > 0.0) || !(r > 0.0)) throw std::invalid_argument("kalman noise parameters must be positive");
}

void ConstantVelocityKalman::reset(double measurement) {
    x_ << measurement, 0.0;
    p_ << r_, 0.0, 0.0, kInitialVelocityVariance;
    initialized_ = true;
}

void ConstantVelocityKalman::predict(double dt) {
    Eigen::Matrix2d f;
    f << 1.0, dt, 0.0, 1.0;
    Eigen::Matrix2d q;
    q << dt * dt * dt / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt;
    x_ = f * x_;
    p_ = f * p_ * f.transpose() + q_ * q;
    p_ = 0.5 * (p_ + p_.transpose());
}

void ConstantVelocityKalman::update(double measurement) {
    const double s = p_(0, 0) + r_;
    const Eigen::Vector2d k = p_.col(0) / s;
    x_ += k * (measurement - x_(0));
    // Joseph form keeps P symmetric positive semi-definite.
    Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
    ikh.col(0) -= k;
    p_ = ikh * p_ * ikh.transpose() + (k * k.transpose()) * r_;
    p_ = 0.5 * (p_ + p_.transpose());
}

namespace {

void check_uniform_sampling(const MotionSequence& seq) {
    if (seq.size() < 3) return;
    std::vector<double> dts;
    for (std::size_t i = 1; i < seq.size(); ++i) dts.push_back(seq[i].timestamp - seq[i - 1].timestamp);
    std::vector<double> sorted = dts;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    for (std::size_t i = 0; i < dts.size(); ++i) {
        if (std::abs(dts[i] - median) > kSamplingJitter * median) {
            throw std::invalid_argument("non-uniform sampling at frame " + std::to_string(i + 1) +
                                        " (interval " + std::to_string(dts[i]) + " s vs median " +
                                        std::to_string(median) + " s)");
        }
    }
}

// Runs one scalar filter over a channel. Values with visible[i] == false are
// predicted only; frames before the first visible value copy its estimate.
void filter_channel(std::span<double> values, const std::vector<bool>& visible, const std::vector<double>& times,
                    double q, double r) {
    const std::size_t n = values.size();
    std::size_t first = 0;
    while (first < n && !visible[first]) ++first;
    if (first == n) return;

    ConstantVelocityKalman kf(q, r);
    kf.reset(values[first]);
    std::vector<double> out(n);
    out[first] = kf.value();
    for (std::size_t i = first + 1; i < n; ++i) {
        kf.predict(times[i] - times[i - 1]);
        if (visible[i]) kf.update(values[i]);
        out[i] = kf.value();
    }
    for (std::size_t i = 0; i < first; ++i) out[i] = out[first];
    std::copy(out.begin(), out.end(), values.begin());
}

}  // namespace

MotionSequence kalman_smooth(const MotionSequence& seq, double q, double r) {
    if (!(q > 0.0) || !(r > 0.0)) throw std::invalid_argument("kalman noise parameters must be positive");
    check_uniform_sampling(seq);

    const std::size_t n = seq.size();
    std::vector<double> times(n);
    for (std::size_t i = 0; i < n; ++i) times[i] = seq[i].timestamp;

    std::vector<SkeletonFrame> frames = copy_frames(seq);
    std::vector<double> channel(n);
    std::vector<bool> visible(n);

    for (JointId j = 0; j < seq.topology().joint_count(); ++j) {
        for (std::size_t i = 0; i < n; ++i) visible[i] = seq[i].joints[j].status != TrackingStatus::Invisible;

        for (int c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < n; ++i) channel[i] = seq[i].joints[j].position[c];
            filter_channel(channel, visible, times, q, r);
            for (std::size_t i = 0; i < n; ++i) frames[i].joints[j].position[c] = channel[i];
        }

        // Sign-continuous components so the filter never sees a q / -q jump.
        std::vector<std::array<double, 4>> comps(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Quaternion& rq = seq[i].joints[j].rotation;
            comps[i] = {rq.w(), rq.x(), rq.y(), rq.z()};
            if (i > 0) {
                const auto& p = comps[i - 1];
                const double d = p[0] * comps[i][0] + p[1] * comps[i][1] + p[2] * comps[i][2] + p[3] * comps[i][3];
                if (d < 0.0) {
                    for (double& v : comps[i]) v = -v;
                }
            }
        }
        for (int c = 0; c < 4; ++c) {
            for (std::size_t i = 0; i < n; ++i) channel[i] = comps[i][c];
            filter_channel(channel, visible, times, q, r);
            for (std::size_t i = 0; i < n; ++i) comps[i][c] = channel[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto& v = comps[i];
            frames[i].joints[j].rotation = Quaternion(v[0], v[1], v[2], v[3]);
        }
    }
    return MotionSequence(seq.topology(), std::move(frames));
}

// ---------------------------------------------------------------------------
// Spatial normalization
// ---------------------------------------------------------------------------

NormalizationParams default_normalization(const MotionSequence& reference) {
    const auto& topo = reference.topology();
    NormalizationParams p;
    p.reference_lengths = bone_lengths(reference[0], topo);
    p.origin = topo.root();
    p.left_shoulder = topo.find("shoulder_l");
    p.right_shoulder = topo.find("shoulder_r");
    return p;
}

Vec3 facing_direction(const SkeletonFrame& frame, const NormalizationParams& params) {
    const Vec3 up = params.up.normalized();
    const Vec3 line = frame.joints.at(params.right_shoulder).position - frame.joints.at(params.left_shoulder).position;
    Vec3 f = up.cross(line);
    f -= up * up.dot(f);
    return f;
}

MotionSequence normalize_spatial(const MotionSequence& seq, const NormalizationParams& params) {
    const auto& topo = seq.topology();
    if (params.reference_lengths.size() != topo.bones().size()) {
        throw std::invalid_argument("normalization has " + std::to_string(params.reference_lengths.size()) +
                                    " reference lengths, topology has " + std::to_string(topo.bones().size()) +
                                    " bones");
    }
    for (double len : params.reference_lengths) {
        if (!(len > 0.0)) throw std::invalid_argument("reference bone lengths must be positive");
    }
    const Vec3 up = params.up.normalized();
    Vec3 target = params.facing - up * up.dot(params.facing);
    if (target.norm() == 0.0) throw std::invalid_argument("facing axis must not be vertical");
    target.normalize();

    std::vector<SkeletonFrame> frames = copy_frames(seq);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        SkeletonFrame& out = frames[i];
        const SkeletonFrame& in = seq[i];

        for (std::size_t bi : topo.root_to_leaf_order()) {
            const Bone& b = topo.bones()[bi];
            const Vec3 v = in.joints[b.child].position - in.joints[b.parent].position;
            const double len = v.norm();
            if (len == 0.0) {
                throw std::invalid_argument("zero-length bone " + topo.name(b.parent) + "->" + topo.name(b.child) +
                                            " in frame " + std::to_string(i));
            }
            out.joints[b.child].position = out.joints[b.parent].position + v * (params.reference_lengths[bi] / len);
        }

        const Vec3 f = facing_direction(out, params);
        if (f.norm() > 0.0) {
            const Vec3 fu = f.normalized();
            const double angle = std::atan2(up.dot(fu.cross(target)), fu.dot(target));
            const Quaternion yaw = Quaternion::from_axis_angle(up, angle);
            const Eigen::Matrix3d rot = yaw.to_matrix();
            for (JointFrame& jf : out.joints) {
                jf.position = rot * jf.position;
                jf.rotation = yaw * jf.rotation;
            }
        }

        const Vec3 origin = out.joints[params.origin].position;
        for (JointFrame& jf : out.joints) jf.position -= origin;
    }
    return MotionSequence(topo, std::move(frames));
}

// ---------------------------------------------------------------------------
// Savitzky-Golay
// ---------------------------------------------------------------------------

namespace {

// Weights evaluating, at offset 0, the least-squares polynomial fitted to
// `window` consecutive samples starting at `first_offset`.
Eigen::VectorXd savgol_weights(int first_offset, int window, int order) {
    Eigen::MatrixXd v(window, order + 1);
    for (int r = 0; r < window; ++r) {
        const double x = first_offset + r;
        double p = 1.0;
        for (int c = 0; c <= order; ++c) {
            v(r, c) = p;
            p *= x;
        }
    }
    // Row 0 of the pseudo-inverse: (V^T V)^-1 V^T.
    const Eigen::MatrixXd pinv = v.completeOrthogonalDecomposition().pseudoInverse();
    return pinv.row(0).transpose();
}

}  // namespace

std::vector<double> savitzky_golay(std::span<const double> series, int window, int order) {
    if (window <= 0 || window % 2 == 0) throw std::invalid_argument("savitzky-golay window must be a positive odd number");
    if (order < 0 || order >= window) throw std::invalid_argument("savitzky-golay order must satisfy 0 <= order < window");
    const auto n = static_cast<std::ptrdiff_t>(series.size());
    if (n < window) {
        throw std::invalid_argument("series of length " + std::to_string(n) + " is shorter than window " +
                                    std::to_string(window));
    }
    const int half = window / 2;

    const Eigen::VectorXd centre = savgol_weights(-half, window, order);
    std::vector<Eigen::VectorXd> head(half), tail(half);
    for (int i = 0; i < half; ++i) {
        head[i] = savgol_weights(-i, window, order);
        tail[i] = savgol_weights(-(window - 1 - i), window, order);
    }

    std::vector<double> out(series.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Eigen::VectorXd* w;
        std::ptrdiff_t start;
        if (i < half) {
            w = &head[i];
            start = 0;
        } else if (i >= n - half) {
            w = &tail[n - 1 - i];
            start = n - window;
        } else {
            w = &centre;
            start = i - half;
        }
        double acc = 0.0;
        for (int k = 0; k < window; ++k) acc += (*w)(k) * series[start + k];
        out[i] = acc;
    }
    return out;
}

MotionSequence savitzky_golay(const MotionSequence& seq, int window, int order) {
    std::vector<SkeletonFrame> frames = copy_frames(seq);
    std::vector<double> channel(seq.size());
    for (JointId j = 0; j < seq.topology().joint_count(); ++j) {
        for (int c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < seq.size(); ++i) channel[i] = seq[i].joints[j].position[c];
            const auto smooth = savitzky_golay(channel, window, order);
            for (std::size_t i = 0; i < seq.size(); ++i) frames[i].joints[j].position[c] = smooth[i];
        }
    }
    return MotionSequence(seq.topology(), std::move(frames));
}

// ---------------------------------------------------------------------------
// DTW
// ---------------------------------------------------------------------------

DtwResult dtw_align(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b,
                    std::optional<std::size_t> band) {
    if (a.empty() || b.empty()) throw std::invalid_argument("dtw inputs must be non-empty");
    const std::size_t n = a.size(), m = b.size();
    constexpr double inf = std::numeric_limits<double>::infinity();

    auto in_band = [&](std::size_t i, std::size_t j) {
        if (!band) return true;
        // Distance from the straight line joining (0,0) and (n-1,m-1).
        const double scaled = m > 1 && n > 1 ? static_cast<double>(j) * (n - 1) / (m - 1) : static_cast<double>(j);
        return std::abs(static_cast<double>(i) - scaled) <= static_cast<double>(*band);
    };

    // acc(i+1, j+1) = accumulated cost ending at (i, j).
    Eigen::MatrixXd acc = Eigen::MatrixXd::Constant(n + 1, m + 1, inf);
    acc(0, 0) = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (!in_band(i, j)) continue;
            const double local = (a[i] - b[j]).norm();
            const double best = std::min({acc(i, j), acc(i, j + 1), acc(i + 1, j)});
            acc(i + 1, j + 1) = local + best;
        }
    }

    DtwResult res;
    res.cost = acc(n, m);
    if (!std::isfinite(res.cost)) throw std::invalid_argument("dtw band too narrow to connect the endpoints");

    std::size_t i = n, j = m;
    res.path.emplace_back(n - 1, m - 1);
    while (i > 1 || j > 1) {
        const double diag = acc(i - 1, j - 1);
        const double up = acc(i - 1, j);
        const double left = acc(i, j - 1);
        if (diag <= up && diag <= left) {
            --i;
            --j;
        } else if (up <= left) {
            --i;
        } else {
            --j;
        }
        res.path.emplace_back(i - 1, j - 1);
    }
    std::reverse(res.path.begin(), res.path.end());
    return res;
}

// ---------------------------------------------------------------------------
// SVD
// ---------------------------------------------------------------------------

Eigen::MatrixXd ModeDecomposition::reconstruct() const {
    return left * singular_values.asDiagonal() * right.transpose();
}

namespace {

constexpr double kJacobiTolerance = 1e-12;
constexpr int kMaxJacobiSweeps = 100;

// Extends the orthonormal columns [0, filled) of q to a full orthonormal set.
void complete_basis(Eigen::MatrixXd& q, Eigen::Index filled) {
    const Eigen::Index rows = q.rows();
    Eigen::Index e = 0;
    for (Eigen::Index c = filled; c < q.cols(); ++c) {
        while (e < rows) {
            Eigen::VectorXd v = Eigen::VectorXd::Unit(rows, e++);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index k = 0; k < c; ++k) v -= q.col(k).dot(v) * q.col(k);
            }
            if (v.norm() > 1e-6) {
                q.col(c) = v.normalized();
                break;
            }
        }
    }
}

// Full thin SVD of a tall (rows >= cols) matrix: a = u diag(s) v^T.
void jacobi_svd_tall(const Eigen::MatrixXd& a, Eigen::MatrixXd& u, Eigen::VectorXd& s, Eigen::MatrixXd& v) {
    const Eigen::Index n = a.cols();
    Eigen::MatrixXd w = a;
    v = Eigen::MatrixXd::Identity(n, n);

    for (int sweep = 0; sweep < kMaxJacobiSweeps; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = w.col(p).squaredNorm();
                const double beta = w.col(q).squaredNorm();
                const double gamma = w.col(p).dot(w.col(q));
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = c * t;
                for (Eigen::Index r = 0; r < w.rows(); ++r) {
                    const double wp = w(r, p), wq = w(r, q);
                    w(r, p) = c * wp - sn * wq;
                    w(r, q) = sn * wp + c * wq;
                }
                for (Eigen::Index r = 0; r < n; ++r) {
                    const double vp = v(r, p), vq = v(r, q);
                    v(r, p) = c * vp - sn * vq;
                    v(r, q) = sn * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<Eigen::Index> order(n);
    Eigen::VectorXd norms(n);
    for (Eigen::Index c = 0; c < n; ++c) {
        order[c] = c;
        norms(c) = w.col(c).norm();
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

    s.resize(n);
    u = Eigen::MatrixXd::Zero(a.rows(), n);
    Eigen::MatrixXd v_sorted(n, n);
    const double cutoff = (norms.size() ? norms.maxCoeff() : 0.0) * 1e-14;
    Eigen::Index filled = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
        const Eigen::Index src = order[c];
        v_sorted.col(c) = v.col(src);
        if (norms(src) > cutoff && norms(src) > 0.0) {
            s(c) = norms(src);
            u.col(c) = w.col(src) / norms(src);
            filled = c + 1;
        } else {
            s(c) = 0.0;
        }
    }
    complete_basis(u, filled);
    v = std::move(v_sorted);
}

}  // namespace

ModeDecomposition svd_modes(const Eigen::MatrixXd& motion, int k) {
    const Eigen::Index rows = motion.rows(), cols = motion.cols();
    if (k < 1 || k > std::min(rows, cols)) {
        throw std::invalid_argument("svd_modes: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(std::min(rows, cols)) + "]");
    }
    Eigen::MatrixXd u, v;
    Eigen::VectorXd s;
    if (rows >= cols) {
        jacobi_svd_tall(motion, u, s, v);
    } else {
        jacobi_svd_tall(motion.transpose(), v, s, u);
    }
    ModeDecomposition d;
    d.singular_values = s.head(k);
    d.left = u.leftCols(k);
    d.right = v.leftCols(k);
    return d;
}

Eigen::MatrixXd position_matrix(const MotionSequence& seq) {
    const std::size_t joints = seq.topology().joint_count();
    Eigen::MatrixXd m(seq.size(), 3 * joints);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        for (std::size_t j = 0; j < joints; ++j) m.block<1, 3>(i, 3 * j) = seq[i].joints[j].position.transpose();
    }
    return m;
}

MotionSequence svd_truncate(const MotionSequence& seq, int k) {
    Eigen::MatrixXd m = position_matrix(seq);
    const Eigen::RowVectorXd mean = m.colwise().mean();
    m.rowwise() -= mean;
    const ModeDecomposition d = svd_modes(m, k);
    Eigen::MatrixXd rec = d.reconstruct();
    rec.rowwise() += mean;

    std::vector<SkeletonFrame> frames = copy_frames(seq);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        for (std::size_t j = 0; j < frames[i].joints.size(); ++j) {
            frames[i].joints[j].position = rec.block<1, 3>(i, 3 * j).transpose();
        }
    }
    return MotionSequence(seq.topology(), std::move(frames));
}

}  // namespace phantom::preprocess
