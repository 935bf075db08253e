#include "phantom/bundle.hpp"
#include "phantom/dataio.hpp"
#include "phantom/musculo.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <locale>
#include <random>
#include <sstream>

using namespace phantom;
using namespace phantom::dataio;
namespace fs = std::filesystem;

namespace {

std::string to_json(const MotionSequence& s) {
    std::ostringstream os;
    write_json(os, s);
    return os.str();
}

std::string to_csv(const MotionSequence& s) {
    std::ostringstream os;
    write_csv(os, s);
    return os.str();
}

MotionSequence from_json(const std::string& s, ReadDiagnostics* d = nullptr) {
    std::istringstream is(s);
    return read_json(is, d);
}

MotionSequence from_csv(const std::string& s) {
    std::istringstream is(s);
    return read_csv(is);
}

void expect_bitwise_equal(const MotionSequence& a, const MotionSequence& b) {
    ASSERT_EQ(a.topology(), b.topology());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t f = 0; f < a.size(); ++f) {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(a[f].timestamp), std::bit_cast<std::uint64_t>(b[f].timestamp));
        for (std::size_t j = 0; j < a[f].joints.size(); ++j) {
            const JointFrame &x = a[f].joints[j], &y = b[f].joints[j];
            for (int c = 0; c < 3; ++c) {
                EXPECT_EQ(std::bit_cast<std::uint64_t>(x.position[c]), std::bit_cast<std::uint64_t>(y.position[c]));
            }
            EXPECT_EQ(x.rotation, y.rotation);
            EXPECT_EQ(x.status, y.status);
        }
    }
}

const char* kTwoFrames = R"({
  "topology": {"joints": ["hip", "knee"], "bones": [["hip", "knee"]]},
  "frames": [
    {"t": 0.0, "joints": [
      {"name": "hip", "pos": [0, 1, 0], "rot": [1, 0, 0, 0], "status": 2},
      {"name": "knee", "pos": [0, 0.5, 0.1], "rot": [0, 0, 0, 1], "status": 1}]},
    {"t": 0.04, "joints": [
      {"name": "hip", "pos": [0, 1, 0.01], "rot": [1, 0, 0, 0], "status": 2},
      {"name": "knee", "pos": [0.2, 0.5, 0.1], "rot": [-1, 0, 0, 0], "status": 0, "force": [1, 2, 3]}]}
  ]
})";

struct CommaDecimal : std::numpunct<char> {
    char do_decimal_point() const override { return ','; }
    char do_thousands_sep() const override { return '.'; }
    std::string do_grouping() const override { return "\3"; }
};

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("phantom_dataio_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Json, ReadsHandWrittenDocument) {
    const MotionSequence s = from_json(kTwoFrames);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s.topology().joint_names(), (std::vector<std::string>{"hip", "knee"}));
    EXPECT_EQ(s[1].timestamp, 0.04);
    EXPECT_EQ(s[0].joints[1].position, Vec3(0, 0.5, 0.1));
    EXPECT_EQ(s[0].joints[1].rotation, Quaternion(0, 0, 0, 1));
    EXPECT_EQ(s[1].joints[1].rotation, Quaternion::identity());
    EXPECT_EQ(s[0].joints[1].status, TrackingStatus::Referred);
    EXPECT_EQ(s[1].joints[1].status, TrackingStatus::Invisible);
}

TEST(Json, RejectsBadStatusWithJointAndFrame) {
    std::string doc = kTwoFrames;
    doc.replace(doc.find("\"status\": 0"), 11, "\"status\": 3");
    try {
        from_json(doc);
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("$.frames[1].joints[1].status"), std::string::npos) << msg;
        EXPECT_NE(msg.find("knee"), std::string::npos) << msg;
        EXPECT_NE(msg.find("frame 1"), std::string::npos) << msg;
    }
}

TEST(Json, StructuralErrorsCarryPaths) {
    const std::pair<std::string, std::string> cases[] = {
        {"[1,2]", "$"},
        {R"({"topology": {"joints": ["a"], "bones": []}})", "frames"},
        {R"({"topology": {"joints": ["a"], "bones": []}, "frames": [{"t": 0, "joints": [{"name": "a", "pos": [0, 0], "rot": [1,0,0,0], "status": 2}]}]})",
         "$.frames[0].joints[0].pos"},
        {R"({"topology": {"joints": ["a"], "bones": []}, "frames": [{"t": 0, "joints": [{"name": "b", "pos": [0, 0, 0], "rot": [1,0,0,0], "status": 2}]}]})",
         "$.frames[0]"},
        {R"({"topology": {"joints": ["a", "b"], "bones": [["a", "c"]]}, "frames": []})", "c"},
        {"{\"topology\": ", "$"},
    };
    for (const auto& [doc, needle] : cases) {
        try {
            from_json(doc);
            ADD_FAILURE() << "accepted: " << doc;
        } catch (const DataError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    }
}

TEST(Json, NonUnitQuaternionIsRenormalizedWithWarning) {
    std::string doc = kTwoFrames;
    doc.replace(doc.find("[0, 0, 0, 1]"), 12, "[0, 0, 0, 2]");
    ReadDiagnostics d;
    const MotionSequence s = from_json(doc, &d);
    EXPECT_EQ(s[0].joints[1].rotation, Quaternion(0, 0, 0, 1));
    ASSERT_EQ(d.warnings.size(), 1u);
    EXPECT_NE(d.warnings[0].find("$.frames[0].joints[1].rot"), std::string::npos);
    ReadDiagnostics quiet;
    from_json(kTwoFrames, &quiet);
    EXPECT_TRUE(quiet.warnings.empty());
}

TEST(Json, FrameLinesRoundTrip) {
    const MotionSequence s = from_json(kTwoFrames);
    const std::string line = frame_to_line(s[1], s.topology());
    EXPECT_EQ(line.find('\n'), std::string::npos);
    const NamedFrame nf = parse_frame_line(line);
    EXPECT_EQ(nf.timestamp, 0.04);
    EXPECT_EQ(nf.at("knee").position, s[1].joints[1].position);
    EXPECT_THROW(nf.at("ankle"), DataError);
    EXPECT_THROW(parse_frame_line("{\"t\": 1"), DataError);
}

TEST(Csv, HeaderLayout) {
    const MotionSequence s = from_json(kTwoFrames);
    const auto h = csv_header(s.topology());
    ASSERT_EQ(h.size(), 17u);
    EXPECT_EQ(h[0], "timestamp");
    EXPECT_EQ(h[1], "hip.x");
    EXPECT_EQ(h[8], "hip.status");
    EXPECT_EQ(h[16], "knee.status");
    const std::string csv = to_csv(s);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "# bones: hip>knee");
}

TEST(Csv, ColumnCountMismatchNamesTheLine) {
    std::string csv = to_csv(from_json(kTwoFrames));
    const auto last = csv.rfind(',', csv.size() - 2);
    csv.erase(last, csv.size() - 1 - last);
    try {
        from_csv(csv);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    }
}

TEST(Csv, ExternalTopologyMustMatch) {
    const MotionSequence s = from_json(kTwoFrames);
    std::string csv = to_csv(s);
    csv = csv.substr(csv.find('\n') + 1);
    EXPECT_THROW(from_csv(csv), DataError);
    std::istringstream is(csv);
    expect_bitwise_equal(read_csv(is, &s.topology()), s);
    const SkeletonTopology other({"hip", "ankle"}, {{0, 1}});
    std::istringstream is2(csv);
    EXPECT_THROW(read_csv(is2, &other), DataError);
}

TEST(Codecs, RandomSequencesRoundTripBitwise) {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 50; ++i) {
        const MotionSequence s = oracle::random_sequence(rng);
        const std::string j1 = to_json(s);
        const MotionSequence via_csv = from_csv(to_csv(from_json(j1)));
        expect_bitwise_equal(via_csv, s);
        EXPECT_EQ(to_json(via_csv), j1);
    }
}

TEST(Codecs, FormatDoubleIsShortestRoundTrip) {
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(-0.0), "-0");
    EXPECT_EQ(format_double(1e300), "1e+300");
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = std::bit_cast<double>(rng());
        if (!std::isfinite(v)) continue;
        EXPECT_EQ(parse_double(format_double(v), "x"), v);
    }
    EXPECT_THROW(parse_double("1,5", "here"), DataError);
    EXPECT_THROW(parse_double("1.5x", "here"), DataError);
    EXPECT_THROW(parse_double("", "here"), DataError);
}

TEST(Codecs, IndependentOfGlobalLocale) {
    const MotionSequence s = from_json(kTwoFrames);
    const std::string json = to_json(s), csv = to_csv(s);
    const std::locale saved = std::locale::global(std::locale(std::locale::classic(), new CommaDecimal));
    std::ostringstream os;
    os.imbue(std::locale());
    write_csv(os, s);
    const std::string csv_in_locale = os.str();
    const std::string json_in_locale = to_json(s);
    std::istringstream is(csv);
    is.imbue(std::locale());
    const MotionSequence back = read_csv(is);
    std::locale::global(saved);
    EXPECT_EQ(csv_in_locale, csv);
    EXPECT_EQ(json_in_locale, json);
    expect_bitwise_equal(back, s);
}

TEST(Codecs, FileDispatchOnExtension) {
    const fs::path dir = scratch_dir("files");
    fs::create_directories(dir);
    const MotionSequence s = from_json(kTwoFrames);
    write_motion(dir / "a.csv", s);
    write_motion(dir / "a.json", s);
    expect_bitwise_equal(read_motion(dir / "a.csv"), s);
    expect_bitwise_equal(read_motion(dir / "a.json"), s);
    EXPECT_THROW(write_motion(dir / "a.txt", s), DataError);
    EXPECT_THROW(read_motion(dir / "missing.json"), DataError);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------

TEST(Synth, NoiselessLegsFollowTheClosedFormMap) {
    SynthSpec spec;
    spec.noise_sigma = 0.0;
    const MotionSequence s = synthesize_gait(spec);
    ASSERT_EQ(s.size(), 500u);
    EXPECT_EQ(s.topology().joint_count(), 41u);
    const auto& legs = gait_leg_joints();
    for (std::size_t f = 0; f < s.size(); f += 7) {
        const auto want = leg_map(s[f], s.topology(), spec);
        for (int side = 0; side < 2; ++side) {
            for (std::size_t j = 0; j < legs.size(); ++j) {
                const JointFrame& got = s[f].joints[s.topology().find(legs[j] + (side ? "_r" : "_l"))];
                const JointFrame& w = want[side * legs.size() + j];
                EXPECT_LT((got.position - w.position).norm(), 1e-12);
                EXPECT_LT(got.rotation.angle_to(w.rotation), 1e-9);
            }
        }
        for (const auto& jf : s[f].joints) EXPECT_EQ(jf.status, TrackingStatus::Observable);
    }
}

TEST(Synth, SeedDeterminesOutput) {
    SynthSpec a;
    const std::string ja = to_json(synthesize_gait(a));
    EXPECT_EQ(to_json(synthesize_gait(a)), ja);
    a.seed = 8;
    EXPECT_NE(to_json(synthesize_gait(a)), ja);
}

TEST(Synth, NoiseTouchesLegsOnly) {
    SynthSpec clean, noisy;
    clean.noise_sigma = 0.0;
    const MotionSequence c = synthesize_gait(clean), n = synthesize_gait(noisy);
    const auto& topo = c.topology();
    double sq = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < c.size(); ++f) {
        for (std::size_t j = 0; j < topo.joint_count(); ++j) {
            const bool leg = std::any_of(gait_leg_joints().begin(), gait_leg_joints().end(), [&](const std::string& l) {
                return topo.name(j).rfind(l + "_", 0) == 0;
            });
            const Vec3 d = n[f].joints[j].position - c[f].joints[j].position;
            if (!leg) {
                EXPECT_EQ(d.norm(), 0.0) << topo.name(j);
            } else {
                sq += d.squaredNorm();
                count += 3;
            }
        }
    }
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(count)), 0.01, 0.0005);
}

TEST(Synth, MatchedArmLegSpeedsCorrelate) {
    const MotionSequence s = synthesize_gait({});
    const auto g = musculo::correlation_from_motion(s);
    const std::pair<const char*, const char*> pairs[] = {{"wrist", "ankle"}, {"hand", "foot"}, {"handtip", "toetip"}};
    for (const char* side : {"_l", "_r"}) {
        for (const auto& [arm, leg] : pairs) {
            const double r = g.between(s.topology().find(std::string(arm) + side), s.topology().find(std::string(leg) + side));
            EXPECT_GT(r, 0.9) << arm << side << " vs " << leg << side;
        }
    }
}

TEST(Synth, RejectsBadSpecs) {
    SynthSpec s;
    s.frames = 0;
    EXPECT_THROW(synthesize_gait(s), std::invalid_argument);
    s = {};
    s.sample_rate = 0.0;
    EXPECT_THROW(synthesize_gait(s), std::invalid_argument);
    s = {};
    s.noise_sigma = -1.0;
    EXPECT_THROW(synthesize_gait(s), std::invalid_argument);
    s = {};
    s.amplitude["tail"] = 0.1;
    EXPECT_THROW(synthesize_gait(s), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(Bundle, SaveLoadPreservesPredictions) {
    const MotionSequence seq = synthesize_gait({});
    model::ModelSpec spec = model::make_spec(model::ArchKind::VHNN2);
    model::derive_partition(spec, seq);
    model::PhantomModel m = model::build_model(spec);
    model::TrainOptions o;
    o.epochs = 2;
    const model::TrainReport rep = model::train(m, model::make_dataset(seq, spec.channels, 0.01), o);

    const fs::path dir = scratch_dir("bundle");
    save_bundle(dir, m, &rep);
    for (const char* f : {"spec.json", "norm.json", "pipeline_0.phnn", "pipeline_1.phnn", "report.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    const model::PhantomModel back = load_bundle(dir);
    EXPECT_EQ(spec_to_json(back.spec()), spec_to_json(m.spec()));
    const nn::Tensor2 x(18, 3, 0.25);
    EXPECT_EQ(back.predict_standardized(x), m.predict_standardized(x));
    EXPECT_EQ(back.input_stats(), m.input_stats());
    EXPECT_EQ(back.target_stats(), m.target_stats());

    fs::remove(dir / "pipeline_1.phnn");
    try {
        load_bundle(dir);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("pipeline_1.phnn"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_bundle(dir / "nope"), DataError);
    fs::remove_all(dir);
}

TEST(Bundle, SpecJsonRoundTripAndErrors) {
    model::ModelSpec spec = model::make_spec(model::ArchKind::VHNN4, model::default_channels(model::OutputMode::PaperLiteral),
                                             model::OutputMode::PaperLiteral, 11);
    model::derive_partition(spec, synthesize_gait({}));
    const std::string text = spec_to_json(spec);
    EXPECT_EQ(spec_to_json(spec_from_json(text)), text);
    EXPECT_THROW(spec_from_json("{}"), DataError);
    std::string bad = text;
    bad.replace(bad.find("VHNN4"), 5, "VHNN9");
    EXPECT_THROW(spec_from_json(bad), DataError);
}

TEST(Bundle, ReportHasNoTimingUnlessAsked) {
    model::TrainReport r;
    r.train_loss = {1.0, 0.5};
    r.test_loss = {1.1, 0.6};
    r.total_seconds = 12.5;
    r.step_us = 40.0;
    EXPECT_EQ(report_to_json(r).find("seconds"), std::string::npos);
    EXPECT_EQ(report_to_json(r).find("step_us"), std::string::npos);
    EXPECT_NE(report_to_json(r, true).find("seconds"), std::string::npos);
}
