#include "phantom/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace phantom::dataio {

using nlohmann::json;

namespace {

std::string at_index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

const json& require(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw DataError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(path + ": missing field \"" + key + "\"");
    return *it;
}

double number_at(const json& v, const std::string& path) {
    if (!v.is_number()) throw DataError(path + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw DataError(path + ": non-finite number");
    return d;
}

template <std::size_t N>
std::array<double, N> numbers_at(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != N) {
        throw DataError(path + ": expected an array of " + std::to_string(N) + " numbers");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = number_at(v[i], at_index(path, i));
    return out;
}

TrackingStatus status_from_int(long long s, const std::string& where) {
    if (s < 0 || s > 2) throw DataError(where + ": invalid tracking status " + std::to_string(s) + " (expected 0, 1 or 2)");
    return static_cast<TrackingStatus>(s);
}

Quaternion quaternion_from(const std::array<double, 4>& q, const std::string& path, ReadDiagnostics* diag) {
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (!(n > 0.0)) throw DataError(path + ": zero quaternion");
    if (std::abs(n - 1.0) > kQuaternionNormTolerance && diag) {
        diag->warnings.push_back(path + ": quaternion norm " + format_double(n) + " renormalized");
    }
    return {q[0], q[1], q[2], q[3]};
}

// Parses one entry of a "joints" array. `frame_index` < 0 means stream mode.
std::pair<std::string, JointFrame> joint_from_json(const json& j, const std::string& path, long frame_index,
                                                   ReadDiagnostics* diag) {
    const json& name = require(j, "name", path);
    if (!name.is_string()) throw DataError(path + ".name: expected a string");
    std::pair<std::string, JointFrame> out{name.get<std::string>(), {}};
    const auto pos = numbers_at<3>(require(j, "pos", path), path + ".pos");
    out.second.position = Vec3(pos[0], pos[1], pos[2]);
    out.second.rotation = quaternion_from(numbers_at<4>(require(j, "rot", path), path + ".rot"), path + ".rot", diag);
    const json& st = require(j, "status", path);
    if (!st.is_number_integer()) throw DataError(path + ".status: expected an integer");
    std::string where = path + ".status";
    where += " (joint '" + out.first + "'";
    if (frame_index >= 0) where += ", frame " + std::to_string(frame_index);
    where += ")";
    out.second.status = status_from_int(st.get<long long>(), where);
    return out;
}

NamedFrame frame_from_json(const json& f, const std::string& path, long frame_index, ReadDiagnostics* diag) {
    NamedFrame out;
    out.timestamp = number_at(require(f, "t", path), path + ".t");
    const json& joints = require(f, "joints", path);
    if (!joints.is_array()) throw DataError(path + ".joints: expected an array");
    for (std::size_t i = 0; i < joints.size(); ++i) {
        out.joints.push_back(joint_from_json(joints[i], at_index(path + ".joints", i), frame_index, diag));
    }
    return out;
}

json joint_to_json(const std::string& name, const JointFrame& jf) {
    const Quaternion& q = jf.rotation;
    return json{{"name", name},
                {"pos", {jf.position.x(), jf.position.y(), jf.position.z()}},
                {"rot", {q.w(), q.x(), q.y(), q.z()}},
                {"status", static_cast<int>(jf.status)}};
}

json frame_to_json(const SkeletonFrame& f, const SkeletonTopology& topo) {
    json joints = json::array();
    for (std::size_t j = 0; j < f.joints.size(); ++j) joints.push_back(joint_to_json(topo.name(j), f.joints[j]));
    return json{{"t", f.timestamp}, {"joints", std::move(joints)}};
}

SkeletonTopology topology_from_names(std::vector<std::string> names,
                                     const std::vector<std::pair<std::string, std::string>>& named_bones,
                                     const std::string& where) {
    auto index = [&](const std::string& n) -> JointId {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == n) return i;
        }
        throw DataError(where + ": bone references unknown joint '" + n + "'");
    };
    std::vector<Bone> bones;
    for (const auto& [p, c] : named_bones) bones.push_back({index(p), index(c)});
    try {
        return SkeletonTopology(std::move(names), std::move(bones));
    } catch (const std::invalid_argument& e) {
        throw DataError(where + ": " + e.what());
    }
}

MotionSequence make_sequence(SkeletonTopology topo, std::vector<SkeletonFrame> frames, const std::string& where) {
    try {
        return MotionSequence(std::move(topo), std::move(frames));
    } catch (const std::invalid_argument& e) {
        throw DataError(where + ": " + e.what());
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError(path.string() + ": cannot open for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError(path.string() + ": cannot open for reading");
    return is;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view chomp(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

constexpr std::string_view kBonesPrefix = "# bones: ";
constexpr std::array<const char*, 8> kColumnSuffixes = {"x", "y", "z", "qw", "qx", "qy", "qz", "status"};

}  // namespace

// ---------------------------------------------------------------------------
// Numbers
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
    return {buf, end};
}

double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || s.empty()) {
        throw DataError(where + ": not a number: '" + std::string(s) + "'");
    }
    if (!std::isfinite(v)) throw DataError(where + ": non-finite number");
    return v;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

const JointFrame& NamedFrame::at(const std::string& name) const {
    for (const auto& [n, jf] : joints) {
        if (n == name) return jf;
    }
    throw DataError("frame at t=" + format_double(timestamp) + " lacks joint '" + name + "'");
}

MotionSequence read_json(std::istream& is, ReadDiagnostics* diag) {
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("$: ") + e.what());
    }

    const json& topo = require(doc, "topology", "$");
    const json& jnames = require(topo, "joints", "$.topology");
    if (!jnames.is_array() || jnames.empty()) throw DataError("$.topology.joints: expected a non-empty array");
    std::vector<std::string> names;
    for (std::size_t i = 0; i < jnames.size(); ++i) {
        if (!jnames[i].is_string()) throw DataError(at_index("$.topology.joints", i) + ": expected a string");
        names.push_back(jnames[i].get<std::string>());
    }
    const json& jbones = require(topo, "bones", "$.topology");
    if (!jbones.is_array()) throw DataError("$.topology.bones: expected an array");
    std::vector<std::pair<std::string, std::string>> named_bones;
    for (std::size_t i = 0; i < jbones.size(); ++i) {
        const json& b = jbones[i];
        if (!b.is_array() || b.size() != 2 || !b[0].is_string() || !b[1].is_string()) {
            throw DataError(at_index("$.topology.bones", i) + ": expected [parent, child] names");
        }
        named_bones.emplace_back(b[0].get<std::string>(), b[1].get<std::string>());
    }
    SkeletonTopology topology = topology_from_names(names, named_bones, "$.topology");

    const json& jframes = require(doc, "frames", "$");
    if (!jframes.is_array()) throw DataError("$.frames: expected an array");
    std::vector<SkeletonFrame> frames;
    frames.reserve(jframes.size());
    for (std::size_t i = 0; i < jframes.size(); ++i) {
        const std::string path = at_index("$.frames", i);
        NamedFrame nf = frame_from_json(jframes[i], path, static_cast<long>(i), diag);
        if (nf.joints.size() != names.size()) {
            throw DataError(path + ".joints: expected " + std::to_string(names.size()) + " joints, got " +
                            std::to_string(nf.joints.size()));
        }
        SkeletonFrame f;
        f.timestamp = nf.timestamp;
        for (std::size_t j = 0; j < nf.joints.size(); ++j) {
            if (nf.joints[j].first != names[j]) {
                throw DataError(at_index(path + ".joints", j) + ".name: expected '" + names[j] + "', got '" +
                                nf.joints[j].first + "'");
            }
            f.joints.push_back(nf.joints[j].second);
        }
        frames.push_back(std::move(f));
    }
    return make_sequence(std::move(topology), std::move(frames), "$.frames");
}

MotionSequence read_json(const std::filesystem::path& path, ReadDiagnostics* diag) {
    std::ifstream is = open_in(path);
    return read_json(is, diag);
}

void write_json(std::ostream& os, const MotionSequence& seq) {
    const SkeletonTopology& topo = seq.topology();
    json bones = json::array();
    for (const Bone& b : topo.bones()) bones.push_back({topo.name(b.parent), topo.name(b.child)});
    const json jt{{"joints", topo.joint_names()}, {"bones", std::move(bones)}};

    // One frame per line keeps large recordings diffable.
    os << "{\"topology\":" << jt.dump() << ",\n\"frames\":[";
    for (std::size_t i = 0; i < seq.size(); ++i) {
        os << (i == 0 ? "\n" : ",\n") << frame_to_json(seq[i], topo).dump();
    }
    os << "\n]}\n";
    if (!os) throw DataError("write failed");
}

void write_json(const std::filesystem::path& path, const MotionSequence& seq) {
    std::ofstream os = open_out(path);
    write_json(os, seq);
}

NamedFrame parse_frame_line(std::string_view line, ReadDiagnostics* diag) {
    json doc;
    try {
        doc = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("$: ") + e.what());
    }
    return frame_from_json(doc, "$", -1, diag);
}

std::string frame_to_line(const SkeletonFrame& frame, const SkeletonTopology& topo) {
    return frame_to_json(frame, topo).dump();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::vector<std::string> csv_header(const SkeletonTopology& topo) {
    std::vector<std::string> cols{"timestamp"};
    for (const std::string& n : topo.joint_names()) {
        for (const char* s : kColumnSuffixes) cols.push_back(n + "." + s);
    }
    return cols;
}

MotionSequence read_csv(std::istream& is, const SkeletonTopology* topology, ReadDiagnostics* diag) {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(is, line)) return false;
        ++line_no;
        return true;
    };
    auto where = [&]() { return "line " + std::to_string(line_no); };

    if (!next_line()) throw DataError("line 1: empty CSV input");
    std::vector<std::pair<std::string, std::string>> named_bones;
    bool have_bones = false;
    if (std::string_view(line).starts_with(kBonesPrefix)) {
        have_bones = true;
        std::string_view rest = chomp(std::string_view(line).substr(kBonesPrefix.size()));
        if (!rest.empty()) {
            for (std::string_view b : split(rest, ';')) {
                const auto parts = split(b, '>');
                if (parts.size() != 2) throw DataError(where() + ": malformed bone '" + std::string(b) + "'");
                named_bones.emplace_back(std::string(parts[0]), std::string(parts[1]));
            }
        }
        if (!next_line()) throw DataError(where() + ": missing header row");
    }

    const auto header = split(chomp(line), ',');
    if (header.empty() || header[0] != "timestamp" || (header.size() - 1) % kColumnSuffixes.size() != 0) {
        throw DataError(where() + ": header must be 'timestamp' followed by 8 columns per joint, got " +
                        std::to_string(header.size()) + " columns");
    }
    std::vector<std::string> names;
    for (std::size_t c = 1; c < header.size(); c += kColumnSuffixes.size()) {
        const std::string_view col = header[c];
        const std::size_t dot = col.rfind('.');
        if (dot == std::string_view::npos) throw DataError(where() + ": bad column name '" + std::string(col) + "'");
        names.emplace_back(col.substr(0, dot));
    }
    SkeletonTopology topo;
    if (topology) {
        if (names != topology->joint_names()) throw DataError(where() + ": header joints do not match the topology");
        topo = *topology;
    } else if (have_bones) {
        topo = topology_from_names(names, named_bones, "line 1");
    } else {
        throw DataError("line 1: missing '# bones:' line and no topology supplied");
    }
    const std::vector<std::string> expected = csv_header(topo);
    for (std::size_t c = 0; c < expected.size(); ++c) {
        if (header[c] != expected[c]) {
            throw DataError(where() + ": column " + std::to_string(c + 1) + " should be '" + expected[c] + "', got '" +
                            std::string(header[c]) + "'");
        }
    }

    std::vector<SkeletonFrame> frames;
    while (next_line()) {
        const std::string_view row = chomp(line);
        if (row.empty()) continue;
        const auto cells = split(row, ',');
        if (cells.size() != expected.size()) {
            throw DataError(where() + ": expected " + std::to_string(expected.size()) + " columns, got " +
                            std::to_string(cells.size()));
        }
        SkeletonFrame f;
        f.timestamp = parse_double(cells[0], where() + ", column timestamp");
        for (std::size_t j = 0; j < names.size(); ++j) {
            const std::size_t base = 1 + j * kColumnSuffixes.size();
            auto num = [&](std::size_t k) { return parse_double(cells[base + k], where() + ", column " + expected[base + k]); };
            JointFrame jf;
            jf.position = Vec3(num(0), num(1), num(2));
            const std::string qwhere = where() + ", joint '" + names[j] + "'";
            jf.rotation = quaternion_from({num(3), num(4), num(5), num(6)}, qwhere, diag);
            long long st = 0;
            const std::string_view sc = cells[base + 7];
            auto [ptr, ec] = std::from_chars(sc.data(), sc.data() + sc.size(), st);
            if (ec != std::errc{} || ptr != sc.data() + sc.size()) {
                throw DataError(where() + ", column " + expected[base + 7] + ": not an integer");
            }
            jf.status = status_from_int(st, where() + " (joint '" + names[j] + "', frame " +
                                                std::to_string(frames.size()) + ")");
            f.joints.push_back(jf);
        }
        frames.push_back(std::move(f));
    }
    return make_sequence(std::move(topo), std::move(frames), "CSV");
}

MotionSequence read_csv(const std::filesystem::path& path, const SkeletonTopology* topology, ReadDiagnostics* diag) {
    std::ifstream is = open_in(path);
    return read_csv(is, topology, diag);
}

void write_csv(std::ostream& os, const MotionSequence& seq) {
    const SkeletonTopology& topo = seq.topology();
    os << kBonesPrefix;
    for (std::size_t i = 0; i < topo.bones().size(); ++i) {
        const Bone& b = topo.bones()[i];
        os << (i ? ";" : "") << topo.name(b.parent) << '>' << topo.name(b.child);
    }
    os << '\n';
    const auto header = csv_header(topo);
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
    os << '\n';
    for (const SkeletonFrame& f : seq.frames()) {
        os << format_double(f.timestamp);
        for (const JointFrame& jf : f.joints) {
            const Quaternion& q = jf.rotation;
            for (double v : {jf.position.x(), jf.position.y(), jf.position.z(), q.w(), q.x(), q.y(), q.z()}) {
                os << ',' << format_double(v);
            }
            os << ',' << static_cast<int>(jf.status);
        }
        os << '\n';
    }
    if (!os) throw DataError("write failed");
}

void write_csv(const std::filesystem::path& path, const MotionSequence& seq) {
    std::ofstream os = open_out(path);
    write_csv(os, seq);
}

MotionSequence read_motion(const std::filesystem::path& path, ReadDiagnostics* diag) {
    const std::string ext = path.extension().string();
    if (ext == ".json") return read_json(path, diag);
    if (ext == ".csv") return read_csv(path, nullptr, diag);
    throw DataError(path.string() + ": unsupported extension '" + ext + "' (expected .json or .csv)");
}

void write_motion(const std::filesystem::path& path, const MotionSequence& seq) {
    const std::string ext = path.extension().string();
    if (ext == ".json") return write_json(path, seq);
    if (ext == ".csv") return write_csv(path, seq);
    throw DataError(path.string() + ": unsupported extension '" + ext + "' (expected .json or .csv)");
}

// ---------------------------------------------------------------------------
// Synthetic gait
// ---------------------------------------------------------------------------

namespace {

constexpr double kPi = std::numbers::pi;

struct LimbJoint {
    const char* name;
    double x, y, z;   // rest position of the left-side joint (meters, +X = left)
    double weight;    // default amplitude relative to the limb amplitude
    double lag;       // distal phase lag, radians
};

constexpr double kArmAmplitude = 0.35;
constexpr double kLegAmplitude = 0.30;

constexpr std::array<LimbJoint, 9> kArm = {{
    {"clavicle", 0.08, 1.45, 0.0, 0.06, 0.00},
    {"shoulder", 0.18, 1.43, 0.0, 0.12, 0.02},
    {"upperarm", 0.19, 1.30, 0.0, 0.30, 0.05},
    {"elbow", 0.20, 1.16, 0.0, 0.50, 0.08},
    {"forearm", 0.20, 1.04, 0.0, 0.68, 0.11},
    {"wrist", 0.20, 0.92, 0.0, 0.84, 0.14},
    {"hand", 0.20, 0.86, 0.0, 0.93, 0.16},
    {"handtip", 0.20, 0.78, 0.0, 1.00, 0.18},
    {"thumb", 0.17, 0.85, 0.03, 0.90, 0.16},
}};

constexpr std::array<LimbJoint, 9> kLeg = {{
    {"hip", 0.10, 0.93, 0.0, 0.25, 0.00},
    {"thigh", 0.10, 0.72, 0.0, 0.45, 0.03},
    {"knee", 0.10, 0.50, 0.0, 0.62, 0.06},
    {"shin", 0.10, 0.30, 0.0, 0.76, 0.09},
    {"ankle", 0.10, 0.08, 0.0, 0.90, 0.12},
    {"heel", 0.10, 0.03, -0.05, 0.90, 0.13},
    {"foot", 0.10, 0.03, 0.08, 1.00, 0.14},
    {"toe", 0.10, 0.02, 0.14, 1.00, 0.15},
    {"toetip", 0.10, 0.02, 0.18, 1.00, 0.16},
}};

struct SpineJoint {
    const char* name;
    double y;
};
constexpr std::array<SpineJoint, 5> kSpine = {{
    {"spine_base", 0.95}, {"spine_mid", 1.20}, {"spine_shoulder", 1.45}, {"neck", 1.55}, {"head", 1.70}}};

constexpr const char* kSide[2] = {"_l", "_r"};
constexpr double kOutward[2] = {1.0, -1.0};

// Shape constants of the closed-form motion.
constexpr double kArmRise = 0.2;       // vertical arc relative to swing
constexpr double kArmInward = 0.05;    // inward arc relative to swing
constexpr double kLegLift = 0.4;       // foot lift relative to swing
constexpr double kLegSplay = 0.25;     // outward motion relative to lift
constexpr double kContralateral = 0.015;
constexpr double kPelvisSway = 0.04;  // meters of lateral swing, in step with the forward swing
constexpr double kRotationGain = 1.2;  // radians of pitch per meter of swing

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double amplitude_of(const SynthSpec& spec, const std::string& name) {
    auto it = spec.amplitude.find(name);
    return it == spec.amplitude.end() ? 0.0 : it->second;
}

Quaternion pitch(double angle) { return Quaternion::from_axis_angle(Vec3::UnitX(), angle); }

JointFrame arm_joint(const LimbJoint& lj, int side, double amp, double theta) {
    const double phi = theta - lj.lag;
    const double s = std::sin(phi), c = std::cos(phi);
    JointFrame jf;
    jf.position = Vec3(kOutward[side] * lj.x - kOutward[side] * kArmInward * amp * (1.0 - c),
                       lj.y + kArmRise * amp * (1.0 - c), lj.z + amp * s);
    jf.rotation = pitch(kRotationGain * amp * s);
    return jf;
}

JointFrame leg_joint(const LimbJoint& lj, int side, double amp, double lag, double theta_ipsi, double theta_contra) {
    const double psi = theta_ipsi + lag - lj.lag;
    const double s = std::sin(psi);
    const double lift = kLegLift * amp * std::pow(std::max(0.0, s), 2);
    JointFrame jf;
    jf.position = Vec3(kOutward[side] * (lj.x + kLegSplay * lift) + kContralateral * amp * std::sin(theta_contra) +
                           kOutward[side] * kPelvisSway * s,
                       lj.y + lift, lj.z + amp * s);
    jf.rotation = pitch(kRotationGain * amp * s);
    return jf;
}

}  // namespace

const std::vector<std::string>& gait_arm_joints() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& j : kArm) v.emplace_back(j.name);
        return v;
    }();
    return names;
}

const std::vector<std::string>& gait_leg_joints() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& j : kLeg) v.emplace_back(j.name);
        return v;
    }();
    return names;
}

SkeletonTopology gait_topology() {
    std::vector<std::string> names;
    for (const auto& s : kSpine) names.emplace_back(s.name);
    for (int side = 0; side < 2; ++side) {
        for (const auto& j : kArm) names.push_back(std::string(j.name) + kSide[side]);
    }
    for (int side = 0; side < 2; ++side) {
        for (const auto& j : kLeg) names.push_back(std::string(j.name) + kSide[side]);
    }
    auto id = [&](const std::string& n) {
        return static_cast<JointId>(std::find(names.begin(), names.end(), n) - names.begin());
    };
    std::vector<Bone> bones;
    for (std::size_t i = 1; i < kSpine.size(); ++i) bones.push_back({i - 1, i});
    for (int side = 0; side < 2; ++side) {
        const std::string sfx = kSide[side];
        // spine_shoulder -> clavicle -> ... -> handtip, thumb off the hand.
        bones.push_back({id("spine_shoulder"), id("clavicle" + sfx)});
        for (std::size_t k = 1; k < 8; ++k) {
            bones.push_back({id(std::string(kArm[k - 1].name) + sfx), id(std::string(kArm[k].name) + sfx)});
        }
        bones.push_back({id("hand" + sfx), id("thumb" + sfx)});
        // spine_base -> hip -> ... -> heel; ankle -> foot -> toe -> toetip.
        bones.push_back({id("spine_base"), id("hip" + sfx)});
        for (std::size_t k = 1; k < 6; ++k) {
            bones.push_back({id(std::string(kLeg[k - 1].name) + sfx), id(std::string(kLeg[k].name) + sfx)});
        }
        bones.push_back({id("ankle" + sfx), id("foot" + sfx)});
        bones.push_back({id("foot" + sfx), id("toe" + sfx)});
        bones.push_back({id("toe" + sfx), id("toetip" + sfx)});
    }
    return SkeletonTopology(std::move(names), std::move(bones));
}

std::map<std::string, double> default_amplitudes() {
    std::map<std::string, double> m;
    for (int side = 0; side < 2; ++side) {
        for (const auto& j : kArm) m[std::string(j.name) + kSide[side]] = kArmAmplitude * j.weight;
        for (const auto& j : kLeg) m[std::string(j.name) + kSide[side]] = kLegAmplitude * j.weight;
    }
    return m;
}

void SynthSpec::validate() const {
    if (frames == 0) throw std::invalid_argument("frame count must be positive");
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) throw std::invalid_argument("sample rate must be > 0");
    if (!(arm_frequency > 0.0) || !std::isfinite(arm_frequency)) {
        throw std::invalid_argument("arm frequency must be > 0");
    }
    if (!std::isfinite(phase_lag)) throw std::invalid_argument("phase lag must be finite");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw std::invalid_argument("noise sigma must be >= 0");
    const auto& known = default_amplitudes();
    for (const auto& [name, a] : amplitude) {
        if (!known.contains(name)) throw std::invalid_argument("amplitude given for unknown joint '" + name + "'");
        if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("amplitude for '" + name + "' must be >= 0");
    }
    for (int side = 0; side < 2; ++side) {
        if (!(amplitude_of(*this, std::string("handtip") + kSide[side]) > 0.0)) {
            throw std::invalid_argument("hand tip amplitudes must be positive");
        }
    }
}

GaitPhaseParams gait_phase_params(const SynthSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    GaitPhaseParams p{};
    // Asymmetric cadence keeps the two arms from moving in lockstep.
    p.rate_multiplier[0] = 1.0;
    p.rate_multiplier[1] = 1.2 + 0.2 * unit_uniform(rng);
    for (int side = 0; side < 2; ++side) {
        p.initial_phase[side] = 2.0 * kPi * unit_uniform(rng);
        for (int m = 0; m < 2; ++m) {
            p.wander_amplitude[side][m] = 0.2 + 0.3 * unit_uniform(rng);
            p.wander_frequency[side][m] = 0.02 + 0.08 * unit_uniform(rng);
            p.wander_phase[side][m] = 2.0 * kPi * unit_uniform(rng);
        }
    }
    return p;
}

double arm_phase(const GaitPhaseParams& p, const SynthSpec& spec, int side, double t) {
    double theta = 2.0 * kPi * spec.arm_frequency * p.rate_multiplier[side] * t + p.initial_phase[side];
    for (int m = 0; m < 2; ++m) {
        theta += p.wander_amplitude[side][m] * std::sin(2.0 * kPi * p.wander_frequency[side][m] * t + p.wander_phase[side][m]);
    }
    return theta;
}

MotionSequence synthesize_gait(const SynthSpec& spec) {
    spec.validate();
    const SkeletonTopology topo = gait_topology();
    const GaitPhaseParams params = gait_phase_params(spec);
    // Noise has its own stream so the phase parameters do not depend on sigma.
    std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<SkeletonFrame> frames(spec.frames);
    for (std::size_t i = 0; i < spec.frames; ++i) {
        const double t = static_cast<double>(i) / spec.sample_rate;
        const double theta[2] = {arm_phase(params, spec, 0, t), arm_phase(params, spec, 1, t)};
        SkeletonFrame& f = frames[i];
        f.timestamp = t;
        f.joints.reserve(topo.joint_count());
        for (const auto& s : kSpine) {
            JointFrame jf;
            jf.position = Vec3(0.0, s.y, 0.0);
            f.joints.push_back(jf);
        }
        for (int side = 0; side < 2; ++side) {
            for (const auto& lj : kArm) {
                const double amp = amplitude_of(spec, std::string(lj.name) + kSide[side]);
                f.joints.push_back(arm_joint(lj, side, amp, theta[side]));
            }
        }
        for (int side = 0; side < 2; ++side) {
            for (const auto& lj : kLeg) {
                const double amp = amplitude_of(spec, std::string(lj.name) + kSide[side]);
                JointFrame jf = leg_joint(lj, side, amp, spec.phase_lag, theta[side], theta[1 - side]);
                if (spec.noise_sigma > 0.0) {
                    for (int c = 0; c < 3; ++c) jf.position[c] += spec.noise_sigma * gauss(noise_rng);
                }
                f.joints.push_back(jf);
            }
        }
    }
    return MotionSequence(topo, std::move(frames));
}

std::vector<JointFrame> leg_map(const SkeletonFrame& frame, const SkeletonTopology& topo, const SynthSpec& spec) {
    const LimbJoint& tip = kArm[7];
    double theta[2];
    for (int side = 0; side < 2; ++side) {
        const double amp = amplitude_of(spec, std::string(tip.name) + kSide[side]);
        const Vec3& p = frame.joints.at(topo.find(std::string(tip.name) + kSide[side])).position;
        const double s = (p.z() - tip.z) / amp;
        const double c = 1.0 - (p.y() - tip.y) / (kArmRise * amp);
        theta[side] = std::atan2(s, c) + tip.lag;
    }
    std::vector<JointFrame> out;
    for (int side = 0; side < 2; ++side) {
        for (const auto& lj : kLeg) {
            const double amp = amplitude_of(spec, std::string(lj.name) + kSide[side]);
            out.push_back(leg_joint(lj, side, amp, spec.phase_lag, theta[side], theta[1 - side]));
        }
    }
    return out;
}

}  // namespace phantom::dataio
