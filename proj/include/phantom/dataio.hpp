#pragma once

#include "phantom/kinematics.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace phantom::dataio {

/// Malformed or schema-violating input. The message starts with the JSON
/// path (e.g. `$.frames[3].joints[1].status`) or the CSV line number.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-fatal findings while decoding (currently: renormalized quaternions).
struct ReadDiagnostics {
    std::vector<std::string> warnings;
};

/// Quaternions whose norm is further than this from 1 are renormalized on
/// read and reported as a warning.
inline constexpr double kQuaternionNormTolerance = 1e-6;

// ---------------------------------------------------------------------------
// JSON
//
// {
//   "topology": {"joints": ["name", ...], "bones": [["parent", "child"], ...]},
//   "frames": [
//     {"t": 0.0, "joints": [{"name": "...", "pos": [x, y, z],
//                            "rot": [w, x, y, z], "status": 2}, ...]}
//   ]
// }
//
// Joint entries appear in topology order. The optional per-joint keys
// "force" and "momentum" are reserved: accepted and ignored on read, never
// written.
// ---------------------------------------------------------------------------

MotionSequence read_json(std::istream& is, ReadDiagnostics* diag = nullptr);
MotionSequence read_json(const std::filesystem::path& path, ReadDiagnostics* diag = nullptr);
void write_json(std::ostream& os, const MotionSequence& seq);
void write_json(const std::filesystem::path& path, const MotionSequence& seq);

/// One frame addressed by joint name, as used by the streaming interface
/// (one JSON object per line, same layout as an entry of "frames").
struct NamedFrame {
    double timestamp = 0.0;
    std::vector<std::pair<std::string, JointFrame>> joints;

    /// Throws DataError if the joint is absent.
    const JointFrame& at(const std::string& name) const;
};

NamedFrame parse_frame_line(std::string_view line, ReadDiagnostics* diag = nullptr);
std::string frame_to_line(const SkeletonFrame& frame, const SkeletonTopology& topo);

// ---------------------------------------------------------------------------
// CSV
//
// Optional first line "# bones: parent>child;parent>child;...", then a header
// "timestamp,<j>.x,<j>.y,<j>.z,<j>.qw,<j>.qx,<j>.qy,<j>.qz,<j>.status,..."
// and one row per frame. Numbers use '.' and the shortest representation
// that reads back to the same double.
// ---------------------------------------------------------------------------

std::vector<std::string> csv_header(const SkeletonTopology& topo);

/// The bones line is required unless `topology` is supplied, in which case
/// the header joint names must match it.
MotionSequence read_csv(std::istream& is, const SkeletonTopology* topology = nullptr,
                        ReadDiagnostics* diag = nullptr);
MotionSequence read_csv(const std::filesystem::path& path, const SkeletonTopology* topology = nullptr,
                        ReadDiagnostics* diag = nullptr);
void write_csv(std::ostream& os, const MotionSequence& seq);
void write_csv(const std::filesystem::path& path, const MotionSequence& seq);

/// Dispatches on the extension (.json or .csv).
MotionSequence read_motion(const std::filesystem::path& path, ReadDiagnostics* diag = nullptr);
void write_motion(const std::filesystem::path& path, const MotionSequence& seq);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);
/// Locale-independent full-string parse; throws DataError with `where`.
double parse_double(std::string_view s, const std::string& where);

// ---------------------------------------------------------------------------
// Synthetic gait
// ---------------------------------------------------------------------------

/// 41-joint skeleton rooted at spine_base: a 5-joint spine, and nine joints
/// per arm and per leg with suffixes _l / _r.
SkeletonTopology gait_topology();
/// Arm joint base names, proximal to distal (without side suffix).
const std::vector<std::string>& gait_arm_joints();
/// Leg joint base names, proximal to distal (without side suffix).
const std::vector<std::string>& gait_leg_joints();

/// Default swing amplitude in meters for every arm and leg joint.
std::map<std::string, double> default_amplitudes();

struct SynthSpec {
    std::size_t frames = 500;
    double sample_rate = 10.0;   // Hz
    double arm_frequency = 0.8;  // Hz, left arm; the right arm runs at a seeded multiple
    double phase_lag = 3.141592653589793;  // leg phase behind the ipsilateral arm, radians
    std::map<std::string, double> amplitude = default_amplitudes();
    double noise_sigma = 0.01;  // meters, added to leg positions only
    std::uint64_t seed = 7;

    /// Throws std::invalid_argument for a non-positive rate/frequency,
    /// negative sigma, zero frames or an amplitude for an unknown joint.
    void validate() const;
};

/// Seed-derived quantities shared by the generator and the oracle map.
struct GaitPhaseParams {
    double rate_multiplier[2];     // per arm (left, right)
    double initial_phase[2];
    double wander_amplitude[2][2];  // radians
    double wander_frequency[2][2];  // Hz
    double wander_phase[2][2];
};

GaitPhaseParams gait_phase_params(const SynthSpec& spec);

/// Arm phase angle of side 0 (left) or 1 (right) at time t.
double arm_phase(const GaitPhaseParams& p, const SynthSpec& spec, int side, double t);

/// Deterministic gait: arm joints swing on their arm's phase; every leg joint
/// is a closed-form function of both arm phases (see leg_map) plus Gaussian
/// position noise. All joints are Observable.
MotionSequence synthesize_gait(const SynthSpec& spec);

/// Noise-free leg joints (left leg, then right leg, proximal to distal)
/// computed from the arm joints of `frame` alone. Arm phases are recovered
/// from the hand tip displacement.
std::vector<JointFrame> leg_map(const SkeletonFrame& frame, const SkeletonTopology& topo, const SynthSpec& spec);

}  // namespace phantom::dataio
