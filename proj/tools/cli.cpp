#include "cli.hpp"

#include "phantom/bundle.hpp"
#include "phantom/dataio.hpp"
#include "phantom/model.hpp"
#include "phantom/preprocess.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace phantom::cli {
namespace {

namespace fs = std::filesystem;
using model::ArchKind;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Streams {
    std::istream& in;
    std::ostream& out;
    std::ostream& err;
};

std::string lower_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

void require_motion_ext(const fs::path& p, bool allow_ndjson) {
    const std::string e = lower_ext(p);
    if (e == ".json" || e == ".csv" || (allow_ndjson && e == ".ndjson")) return;
    throw UsageError("unsupported file extension '" + e + "' for " + p.string() +
                     (allow_ndjson ? " (expected .json, .csv or .ndjson)" : " (expected .json or .csv)"));
}

MotionSequence load_motion(const fs::path& p, std::ostream& err) {
    require_motion_ext(p, false);
    if (!fs::exists(p)) throw std::runtime_error("cannot open " + p.string());
    dataio::ReadDiagnostics diag;
    MotionSequence seq = dataio::read_motion(p, &diag);
    for (const auto& w : diag.warnings) err << "warning: " << w << "\n";
    return seq;
}

void save_motion(const fs::path& p, const MotionSequence& seq) {
    if (lower_ext(p) != ".ndjson") {
        dataio::write_motion(p, seq);
        return;
    }
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    for (const auto& f : seq.frames()) os << dataio::frame_to_line(f, seq.topology()) << '\n';
    if (!os) throw std::runtime_error("write failed: " + p.string());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::size_t frames = 500;
    double rate = 10.0;
    double arm_frequency = 0.8;
    double noise = 0.01;
    std::uint64_t seed = 7;
    std::string output;
};

int cmd_synth(const SynthArgs& a, Streams& s) {
    require_motion_ext(a.output, true);
    dataio::SynthSpec spec;
    spec.frames = a.frames;
    spec.sample_rate = a.rate;
    spec.arm_frequency = a.arm_frequency;
    spec.noise_sigma = a.noise;
    spec.seed = a.seed;
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    save_motion(a.output, dataio::synthesize_gait(spec));
    s.err << "wrote " << a.frames << " frames to " << a.output << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string input, output;
    bool fill_gaps = false;
    bool kalman = false;
    double kalman_q = preprocess::kDefaultProcessNoise;
    double kalman_r = preprocess::kDefaultMeasurementNoise;
    bool normalize = false;
    bool savgol = false;
    int savgol_window = preprocess::kDefaultSavgolWindow;
    int savgol_order = preprocess::kDefaultSavgolOrder;
    int svd_k = 0;
};

template <typename F>
MotionSequence stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw StageError(std::string("stage ") + name + " failed: " + e.what());
    }
}

int cmd_preprocess(const PreprocessArgs& a, Streams& s) {
    require_motion_ext(a.output, true);
    MotionSequence seq = load_motion(a.input, s.err);
    // Stage order is fixed; flag order on the command line does not matter.
    if (a.fill_gaps) seq = stage("fill-gaps", [&] { return preprocess::fill_gaps(seq); });
    if (a.kalman) seq = stage("kalman", [&] { return preprocess::kalman_smooth(seq, a.kalman_q, a.kalman_r); });
    if (a.normalize) {
        seq = stage("normalize", [&] {
            return preprocess::normalize_spatial(seq, preprocess::default_normalization(seq));
        });
    }
    if (a.savgol) seq = stage("savgol", [&] { return preprocess::savitzky_golay(seq, a.savgol_window, a.savgol_order); });
    if (a.svd_k > 0) seq = stage("svd", [&] { return preprocess::svd_truncate(seq, a.svd_k); });
    save_motion(a.output, seq);
    return kOk;
}

// ---------------------------------------------------------------------------

struct ModelArgs {
    std::string arch = "VHNN2";
    std::string output_mode = "default";
    std::string hidden = "relu";
    std::vector<std::string> channels;  // each a comma list
    std::string target;
    std::uint64_t seed = 7;
    double noise = 0.01;
    double train_fraction = 0.8;
};

model::ModelSpec spec_from_args(const ModelArgs& a, ArchKind kind) {
    const model::OutputMode mode = model::output_mode_from_string(a.output_mode);
    model::ChannelSet ch = model::default_channels(mode);
    if (!a.channels.empty()) {
        ch.inputs.clear();
        for (const auto& c : a.channels) ch.inputs.push_back(split_list(c));
    }
    if (!a.target.empty()) ch.target = split_list(a.target);
    try {
        ch.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    model::ModelSpec spec = model::make_spec(kind, ch, mode, a.seed);
    spec.hidden_activation = nn::activation_from_string(a.hidden);
    return spec;
}

struct TrainArgs {
    ModelArgs model;
    std::string input, bundle;
    std::size_t epochs = 1000;
    std::size_t batch = 32;
    double learning_rate = 1e-3;
    std::size_t threads = 1;
    bool timing = false;
};

int cmd_train(const TrainArgs& a, Streams& s) {
    const MotionSequence seq = load_motion(a.input, s.err);
    model::ModelSpec spec = spec_from_args(a.model, model::arch_from_string(a.model.arch));
    model::derive_partition(spec, seq);
    const model::Dataset ds = model::make_dataset(seq, spec.channels, a.model.noise, a.model.seed, a.model.train_fraction);
    model::PhantomModel m = model::build_model(spec);

    model::TrainOptions opts;
    opts.epochs = a.epochs;
    opts.batch = a.batch;
    opts.threads = a.threads;
    opts.optimizer.learning_rate = a.learning_rate;
    const model::TrainReport rep = model::train(m, ds, opts);

    dataio::save_bundle(a.bundle, m, &rep);
    if (a.timing) {
        std::ofstream(fs::path(a.bundle) / "timing.json") << dataio::report_to_json(rep, true) << "\n";
        s.err << "median step " << rep.step_us << " us, total " << rep.total_seconds << " s\n";
    }
    if (rep.diverged) {
        s.err << "error: training diverged at epoch " << rep.diverged_epoch << "; saved the last finite parameters\n";
        return kDiverged;
    }
    const double last = rep.train_loss.empty() ? 0.0 : rep.train_loss.back();
    s.err << "trained " << model::to_string(spec.kind) << " for " << rep.train_loss.size() << " epochs, final loss "
          << dataio::format_double(last) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string bundle, input, output;
    std::string split = "test";
    double train_fraction = 0.8;
};

fs::path require_bundle(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("model bundle not found: " + dir);
    return dir;
}

std::vector<JointId> find_joints(const SkeletonTopology& topo, const std::vector<std::string>& names) {
    std::vector<JointId> ids;
    for (const auto& n : names) {
        if (!topo.contains(n)) throw dataio::DataError("motion data lacks channel joint " + n);
        ids.push_back(topo.find(n));
    }
    return ids;
}

int cmd_evaluate(const EvaluateArgs& a, Streams& s) {
    const model::PhantomModel m = dataio::load_bundle(require_bundle(a.bundle));
    const MotionSequence seq = load_motion(a.input, s.err);
    const auto in_ids = find_joints(seq.topology(), m.spec().channels.input_joints());
    const auto out_ids = find_joints(seq.topology(), m.spec().channels.target);

    std::size_t first = 0;
    if (a.split == "test") {
        first = static_cast<std::size_t>(std::floor(a.train_fraction * static_cast<double>(seq.size()) + 1e-9));
    }
    std::vector<nn::Tensor2> xs, ys;
    for (std::size_t i = first; i < seq.size(); ++i) {
        xs.push_back(model::standardize(model::gather_positions(seq[i], in_ids), m.input_stats()));
        ys.push_back(model::standardize(model::gather_positions(seq[i], out_ids), m.target_stats()));
    }
    if (xs.empty()) throw dataio::DataError("evaluation split is empty");
    const model::Metrics met = model::evaluate(m, xs, ys);

    nlohmann::ordered_json j;
    j["architecture"] = model::to_string(m.spec().kind);
    j["samples"] = met.samples;
    j["ground_truth_error"] = met.ground_truth_error;
    j["mse"] = met.mse;
    j["baseline_ground_truth_error"] = met.baseline_ground_truth_error;
    nlohmann::ordered_json pj = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < met.per_joint_rmse.size(); ++k) pj[m.spec().channels.target[k]] = met.per_joint_rmse[k];
    j["per_joint_rmse"] = pj;
    const std::string text = j.dump(2) + "\n";
    if (a.output.empty()) {
        s.out << text;
    } else {
        std::ofstream os(a.output, std::ios::binary);
        if (!(os << text)) throw std::runtime_error("cannot write " + a.output);
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string bundle;
    std::string input = "-";
    std::string output = "-";
    bool timing = false;
};

int cmd_generate(const GenerateArgs& a, Streams& s) {
    const model::PhantomModel m = dataio::load_bundle(require_bundle(a.bundle));

    std::ifstream fin;
    std::istream* in = &s.in;
    if (a.input != "-") {
        fin.open(a.input, std::ios::binary);
        if (!fin) throw std::runtime_error("cannot open " + a.input);
        in = &fin;
    }
    std::ofstream fout;
    std::ostream* out = &s.out;
    if (a.output != "-") {
        fout.open(a.output, std::ios::binary);
        if (!fout) throw std::runtime_error("cannot write " + a.output);
        out = &fout;
    }

    *out << "t";
    for (const auto& n : m.spec().channels.target) *out << ',' << n << ".x," << n << ".y," << n << ".z";
    *out << '\n';

    std::string line;
    const model::StreamStats st = model::generate_stream(
        m,
        [&]() -> std::optional<std::string> {
            if (!std::getline(*in, line)) return std::nullopt;
            return line;
        },
        [&](double t, const std::vector<Vec3>& joints) {
            *out << dataio::format_double(t);
            for (const Vec3& p : joints) {
                *out << ',' << dataio::format_double(p.x()) << ',' << dataio::format_double(p.y()) << ','
                     << dataio::format_double(p.z());
            }
            *out << '\n';
        });
    out->flush();
    if (st.skipped > 0) s.err << "skipped " << st.skipped << " malformed frame(s)\n";
    if (a.timing) s.err << "generated " << st.processed << " frames at " << st.frames_per_second() << " frames/s\n";
    if (!*out) throw std::runtime_error("write failed");
    return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    ModelArgs model;
    std::string input;
    std::string output;
    std::vector<std::string> archs{"MLP", "DAE", "VHNN2", "VHNN4"};
    std::size_t epochs = 1000;
    std::size_t batch = 32;
    std::size_t steps = 1000;
    std::size_t warmup = 50;
    std::size_t threads = 1;
};

int cmd_bench(const BenchArgs& a, Streams& s) {
    MotionSequence seq;
    if (a.input.empty()) {
        dataio::SynthSpec ss;
        ss.seed = a.model.seed;
        seq = dataio::synthesize_gait(ss);
    } else {
        seq = load_motion(a.input, s.err);
    }
    if (a.archs.size() < 2) throw UsageError("bench needs at least two architectures");
    std::vector<model::ModelSpec> specs;
    for (const auto& name : a.archs) {
        model::ModelSpec spec = spec_from_args(a.model, model::arch_from_string(name));
        model::derive_partition(spec, seq);
        specs.push_back(std::move(spec));
    }
    const model::Dataset ds =
        model::make_dataset(seq, specs.front().channels, a.model.noise, a.model.seed, a.model.train_fraction);
    model::BenchOptions bo;
    bo.train.epochs = a.epochs;
    bo.train.batch = a.batch;
    bo.train.threads = a.threads;
    bo.timed_steps = a.steps;
    bo.warmup_steps = a.warmup;
    const std::vector<model::BenchRow> rows = model::bench(specs, ds, bo);

    std::ostringstream csv;
    csv << "architecture,step_us,seconds_per_1k_epochs,convergence_epoch,ground_truth_error\n";
    for (const auto& r : rows) {
        csv << r.architecture << ',' << dataio::format_double(r.step_us) << ','
            << dataio::format_double(r.seconds_per_1k_epochs) << ','
            << (r.convergence ? std::to_string(*r.convergence) : std::string()) << ','
            << dataio::format_double(r.ground_truth_error) << '\n';
    }
    if (a.output.empty()) {
        s.out << csv.str() << '\n';
    } else {
        std::ofstream os(a.output, std::ios::binary);
        if (!(os << csv.str())) throw std::runtime_error("cannot write " + a.output);
    }

    std::ostringstream t;
    t << std::left << std::setw(14) << "Architecture" << std::right << std::setw(12) << "us/step" << std::setw(16)
      << "s per 1K epochs" << std::setw(14) << "convergence" << std::setw(16) << "GT error" << '\n';
    for (const auto& r : rows) {
        t << std::left << std::setw(14) << r.architecture << std::right << std::fixed << std::setprecision(1)
          << std::setw(12) << r.step_us << std::setw(16) << std::setprecision(2) << r.seconds_per_1k_epochs
          << std::setw(14) << (r.convergence ? std::to_string(*r.convergence) : std::string("-")) << std::setw(16)
          << std::setprecision(2) << r.ground_truth_error << '\n';
    }
    s.out << t.str();
    return kOk;
}

// ---------------------------------------------------------------------------

void add_model_options(CLI::App* c, ModelArgs& m) {
    c->add_option("--output-mode", m.output_mode, "default or paper-literal")
        ->check(CLI::IsMember({"default", "paper-literal"}))
        ->capture_default_str();
    c->add_option("--hidden", m.hidden, "hidden activation: relu or linear")
        ->check(CLI::IsMember({"relu", "linear"}))
        ->capture_default_str();
    c->add_option("--channel", m.channels, "input channel as a comma-separated joint list (repeatable, x1 first)");
    c->add_option("--target", m.target, "target joints, comma-separated");
    c->add_option("--seed", m.seed, "seed (falls back to PHANTOM_SEED)")->envname("PHANTOM_SEED")->capture_default_str();
    c->add_option("--noise", m.noise, "Gaussian noise sigma added to training inputs, meters")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c->add_option("--train-fraction", m.train_fraction, "leading fraction of frames used for training")
        ->check(CLI::Range(0.0, 1.0).description("in (0, 1]"))
        ->capture_default_str();
}

const CLI::Validator kAtLeastOne(
    [](std::string& v) {
        try {
            if (std::stoll(v) >= 1) return std::string();
        } catch (const std::exception&) {
        }
        return "must be an integer >= 1, got '" + v + "'";
    },
    "INT>=1");

const auto kArchNames = CLI::IsMember({"MLP", "DAE", "VHNN2", "VHNN4"}, CLI::ignore_case);

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    Streams s{in, out, err};
    CLI::App app{"Reconstructs lower-limb motion from upper-limb kinematics.", "phantom"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    app.set_config("--config", "", "key=value configuration file; [section] names a subcommand");
    app.allow_config_extras(CLI::config_extras_mode::error);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "write a synthetic gait recording");
    c_synth->add_option("--frames", synth.frames, "frame count")->check(kAtLeastOne)->capture_default_str();
    c_synth->add_option("--rate", synth.rate, "sample rate, Hz")->check(CLI::PositiveNumber)->capture_default_str();
    c_synth->add_option("--arm-frequency", synth.arm_frequency, "left arm swing frequency, Hz")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_synth->add_option("--noise", synth.noise, "leg position noise sigma, meters")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c_synth->add_option("--seed", synth.seed, "seed (falls back to PHANTOM_SEED)")
        ->envname("PHANTOM_SEED")
        ->capture_default_str();
    c_synth->add_option("-o,--output", synth.output, ".json, .csv or .ndjson output")->required();

    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "clean a recording (fill-gaps, kalman, normalize, savgol, svd)");
    c_pre->add_option("-i,--input", pre.input, "input .json or .csv")->required();
    c_pre->add_option("-o,--output", pre.output, "output .json, .csv or .ndjson")->required();
    c_pre->add_flag("--fill-gaps", pre.fill_gaps, "interpolate occluded samples");
    c_pre->add_flag("--kalman", pre.kalman, "constant-velocity Kalman smoothing");
    c_pre->add_option("--kalman-q", pre.kalman_q, "process noise density")->check(CLI::PositiveNumber)->capture_default_str();
    c_pre->add_option("--kalman-r", pre.kalman_r, "measurement noise variance")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_pre->add_flag("--normalize", pre.normalize, "bone-length, facing and origin normalization");
    c_pre->add_flag("--savgol", pre.savgol, "Savitzky-Golay smoothing of positions");
    c_pre->add_option("--savgol-window", pre.savgol_window, "odd window length")->capture_default_str();
    c_pre->add_option("--savgol-order", pre.savgol_order, "polynomial order")->capture_default_str();
    c_pre->add_option("--svd-k", pre.svd_k, "keep k motion modes (0 disables)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "train a model and write a bundle");
    c_train->add_option("-i,--input", tr.input, "training recording")->required();
    c_train->add_option("-o,--output", tr.bundle, "bundle directory")->required();
    c_train->add_option("--arch", tr.model.arch, "MLP, DAE, VHNN2 or VHNN4")->check(kArchNames)->capture_default_str();
    add_model_options(c_train, tr.model);
    c_train->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
    c_train->add_option("--batch", tr.batch, "mini-batch size")->check(kAtLeastOne)->capture_default_str();
    c_train->add_option("--lr", tr.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    c_train->add_option("--threads", tr.threads, "concurrent pipelines")->check(kAtLeastOne)->capture_default_str();
    c_train->add_flag("--timing", tr.timing, "also write timing.json and print step timing");

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "print test-set metrics of a bundle");
    c_eval->add_option("-m,--model", ev.bundle, "bundle directory")->required();
    c_eval->add_option("-i,--input", ev.input, "recording")->required();
    c_eval->add_option("-o,--output", ev.output, "write the metrics JSON here instead of stdout");
    c_eval->add_option("--split", ev.split, "test (trailing frames) or all")
        ->check(CLI::IsMember({"test", "all"}))
        ->capture_default_str();
    c_eval->add_option("--train-fraction", ev.train_fraction, "leading fraction excluded by --split test")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "stream NDJSON frames through a bundle and write CSV rows");
    c_gen->add_option("-m,--model", gen.bundle, "bundle directory")->required();
    c_gen->add_option("-i,--input", gen.input, "NDJSON frames, '-' for stdin")->capture_default_str();
    c_gen->add_option("-o,--output", gen.output, "CSV output, '-' for stdout")->capture_default_str();
    c_gen->add_flag("--timing", gen.timing, "print throughput to stderr");

    BenchArgs be;
    auto* c_bench = app.add_subcommand("bench", "train and time several architectures on the same data");
    c_bench->add_option("-i,--input", be.input, "recording (default: synthetic gait from --seed)");
    c_bench->add_option("-o,--output", be.output, "write the CSV here instead of stdout");
    c_bench->add_option("--arch", be.archs, "architectures to compare")->check(kArchNames)->capture_default_str();
    add_model_options(c_bench, be.model);
    c_bench->add_option("--epochs", be.epochs, "training epochs per model")->capture_default_str();
    c_bench->add_option("--batch", be.batch, "mini-batch size")->check(kAtLeastOne)->capture_default_str();
    c_bench->add_option("--steps", be.steps, "timed steps per model")->check(kAtLeastOne)->capture_default_str();
    c_bench->add_option("--warmup", be.warmup, "untimed steps per model")->capture_default_str();
    c_bench->add_option("--threads", be.threads, "concurrent pipelines")->check(kAtLeastOne)->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (c_synth->parsed()) return cmd_synth(synth, s);
        if (c_pre->parsed()) return cmd_preprocess(pre, s);
        if (c_train->parsed()) return cmd_train(tr, s);
        if (c_eval->parsed()) return cmd_evaluate(ev, s);
        if (c_gen->parsed()) return cmd_generate(gen, s);
        if (c_bench->parsed()) return cmd_bench(be, s);
        return kUsageError;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kUsageError;
    } catch (const StageError& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args, std::cin, std::cout, std::cerr);
}

}  // namespace phantom::cli
