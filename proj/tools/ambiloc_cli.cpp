#include "ambiloc/acceptance.hpp"
#include "ambiloc/error.hpp"
#include "ambiloc/io.hpp"
#include "ambiloc/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace ambiloc;

namespace {

enum Exit { ok = 0, input_error = 1, numerical_error = 2 };

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("write failed: " + path.string());
}

// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<int> order;
    std::optional<std::string> loss;
    std::optional<double> lambda;
    std::vector<std::string> hypotheses;
    std::optional<double> range_min;
    std::optional<double> range_max;
    std::optional<double> gate;
    std::optional<int> buffer_len;
    std::optional<int> restarts;
    std::optional<bool> smoothing;

    void add(CLI::App* app) {
        app->add_option("--order", order, "Ambisonic order of the input");
        app->add_option("--loss", loss, "Ranging loss")->check(CLI::IsMember({"squares", "absolute", "huber"}));
        app->add_option("--lambda", lambda, "Smoothness weight of the ranging solve");
        app->add_option("--hypotheses", hypotheses, "Reflector hypotheses, DP and/or HV")
            ->check(CLI::IsMember({"DP", "HV"}));
        app->add_option("--range-min", range_min, "Lower range bound, metres");
        app->add_option("--range-max", range_max, "Upper range bound, metres");
        app->add_option("--gate", gate, "Echo tracker gate radius, metres");
        app->add_option("--buffer-len", buffer_len, "Frames per velocity-vector estimate");
        app->add_option("--restarts", restarts, "Random restarts of the ranging solve");
        app->add_option("--smoothing", smoothing, "Fixed-interval smoothing of the tracks (true/false)");
    }

    /// True when the order came from the command line or the config file;
    /// otherwise each recording's own order is used.
    bool order_forced = false;

    PipelineConfig apply(const std::optional<fs::path>& config_file) {
        nlohmann::json j = config_file ? nlohmann::json::parse(read_text(*config_file), nullptr, false)
                                       : nlohmann::json::object();
        if (j.is_discarded() || !j.is_object()) throw InputError("config: " + config_file->string() + " is not a JSON object");
        auto section = [&j](const char* name) -> nlohmann::json& {
            if (!j.contains(name)) j[name] = nlohmann::json::object();
            return j[name];
        };
        if (order) j["order"] = *order;
        order_forced = j.contains("order");
        if (loss) section("ranging")["loss"] = *loss;
        if (lambda) section("ranging")["lambda"] = *lambda;
        if (!hypotheses.empty()) section("ranging")["hypotheses"] = hypotheses;
        if (range_min) section("ranging")["range_min"] = *range_min;
        if (range_max) section("ranging")["range_max"] = *range_max;
        if (restarts) section("ranging")["restarts"] = *restarts;
        if (gate) section("tracker")["gate_radius"] = *gate;
        if (smoothing) section("tracker")["smoothing"] = *smoothing;
        if (buffer_len) section("gtvv")["buffer_len"] = *buffer_len;
        return config_from_json(j.dump());
    }
};

RecordingFormat parse_format(const std::string& s) {
    if (s == "wave") return RecordingFormat::wave;
    if (s == "locata") return RecordingFormat::locata;
    return RecordingFormat::automatic;
}

fs::path output_for(const fs::path& input, const fs::path& out_dir, const std::string& ext) {
    fs::path stem = fs::is_directory(input) ? input.filename() : input.stem();
    if (stem.empty()) stem = input.parent_path().filename();
    return out_dir / (stem.string() + ext);
}

struct LocalizeOutcome {
    std::vector<FrameEstimate> estimates;
    std::optional<TruthTrack> truth;
};

int cmd_simulate(const fs::path& scene_file, const fs::path& out, std::optional<double> duration,
                 std::optional<std::uint64_t> seed, std::optional<double> snr) {
    SceneSpec spec = scene_from_json(read_text(scene_file));
    if (duration) spec.duration = *duration;
    if (seed) spec.seed = *seed;
    if (snr) spec.snr_db = *snr;
    const SimulatedRecording rec = simulate(spec);
    write_wav(out, rec.signal, spec.scene.fs);
    write_sidecar(sidecar_path(out), SidecarHeader{spec.scene.fs, spec.order, Normalization::n3d, spec.scene.mic},
                  &rec.truth);
    std::fprintf(stderr, "wrote %s (%ld samples, %d channels) and %s\n", out.string().c_str(),
                 static_cast<long>(rec.signal.cols()), static_cast<int>(rec.signal.rows()),
                 sidecar_path(out).string().c_str());
    return ok;
}

int cmd_localize(const std::vector<fs::path>& inputs, const std::optional<fs::path>& out_file, const fs::path& out_dir,
                 const std::string& format, const std::string& out_format, const std::optional<fs::path>& metrics_file,
                 int jobs, const PipelineConfig& base, bool order_forced) {
    if (out_file && inputs.size() != 1) throw InputError("--out takes a single input; use --out-dir for several");
    const std::string ext = out_format == "jsonl" ? ".jsonl" : ".csv";
    std::vector<LocalizeOutcome> outcomes(inputs.size());
    std::vector<std::exception_ptr> errors(inputs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < inputs.size();) {
            try {
                Recording rec = load_recording(inputs[i], parse_format(format));
                PipelineConfig cfg = base;
                if (!order_forced) cfg.order = rec.order;
                cfg.stft.sample_rate = rec.sample_rate;
                outcomes[i].estimates = run_pipeline(cfg, rec.signal).estimates;
                outcomes[i].truth = std::move(rec.truth);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n = std::clamp(jobs, 1, static_cast<int>(inputs.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    if (!out_file) fs::create_directories(out_dir);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const fs::path path = out_file ? *out_file : output_for(inputs[i], out_dir, ext);
        std::ofstream out(path, std::ios::trunc | std::ios::binary);
        if (!out) throw InputError("cannot write " + path.string());
        if (out_format == "jsonl")
            write_estimates_jsonl(out, outcomes[i].estimates);
        else
            write_estimates_csv(out, outcomes[i].estimates);
        if (!out) throw InputError("write failed: " + path.string());
    }
    if (metrics_file) {
        std::vector<std::pair<const std::vector<FrameEstimate>*, const TruthTrack*>> runs;
        for (const LocalizeOutcome& o : outcomes)
            if (o.truth) runs.push_back({&o.estimates, &*o.truth});
        if (runs.empty()) throw InputError("--metrics needs ground truth (sidecar or LOCATA tables)");
        write_text(*metrics_file, metrics_to_json(compute_metrics(runs, config_to_json(base))) + "\n");
    }
    return ok;
}

int cmd_evaluate(const std::vector<fs::path>& estimates, const std::vector<fs::path>& truths, const std::string& format,
                 const std::optional<fs::path>& out, const std::optional<fs::path>& config_file) {
    if (estimates.size() != truths.size()) throw InputError("give one --truth per --estimates file");
    std::vector<std::vector<FrameEstimate>> est;
    std::vector<TruthTrack> tr;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        est.push_back(read_estimates_csv(estimates[i]));
        Recording rec = load_recording(truths[i], parse_format(format));
        if (!rec.truth) throw InputError(truths[i].string() + ": no ground truth");
        tr.push_back(std::move(*rec.truth));
    }
    std::vector<std::pair<const std::vector<FrameEstimate>*, const TruthTrack*>> runs;
    for (std::size_t i = 0; i < est.size(); ++i) runs.push_back({&est[i], &tr[i]});
    const std::string config = config_file ? config_to_json(config_from_json(read_text(*config_file))) : "{}";
    const std::string text = metrics_to_json(compute_metrics(runs, config)) + "\n";
    if (out)
        write_text(*out, text);
    else
        std::cout << text;
    return ok;
}

int cmd_selftest(const std::vector<int>& only, const std::optional<fs::path>& locata_root) {
    AcceptanceOptions opts;
    opts.only = only;
    opts.locata_root = locata_root;
    const auto results = run_acceptance(opts, [](const CriterionResult& r) {
        std::printf("%s\n", format_result(r).c_str());
        std::fflush(stdout);
    });
    return all_passed(results) ? ok : numerical_error;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-array source localization from higher-order ambisonic recordings"};
    app.require_subcommand(1);

    fs::path scene_file, sim_out;
    std::optional<double> sim_duration, sim_snr;
    std::optional<std::uint64_t> sim_seed;
    auto* sim = app.add_subcommand("simulate", "Render a scene description to an HOA WAV plus truth sidecar");
    sim->add_option("--scene", scene_file, "Scene JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("-o,--out", sim_out, "Output WAV")->required();
    sim->add_option("--duration", sim_duration, "Override duration, seconds");
    sim->add_option("--seed", sim_seed, "Override signal seed");
    sim->add_option("--snr", sim_snr, "Add white noise at this SNR, dB");

    std::vector<fs::path> inputs;
    std::optional<fs::path> loc_out, loc_metrics, loc_config;
    fs::path loc_dir = ".";
    std::string loc_format = "auto", loc_out_format = "csv";
    int loc_jobs = 1;
    bool print_config = false;
    Overrides overrides;
    auto* loc = app.add_subcommand("localize", "Estimate per-frame DoA and range");
    loc->add_option("inputs", inputs, "Recordings: WAV files or LOCATA-style task directories");
    loc->add_option("-o,--out", loc_out, "Estimates file (single input)");
    loc->add_option("--out-dir", loc_dir, "Directory for one estimates file per input");
    loc->add_option("--format", loc_format, "Input format")->check(CLI::IsMember({"auto", "wave", "locata"}));
    loc->add_option("--output-format", loc_out_format, "Estimates format")->check(CLI::IsMember({"csv", "jsonl"}));
    loc->add_option("--metrics", loc_metrics, "Write pooled error metrics (needs ground truth)");
    loc->add_option("-c,--config", loc_config, "Pipeline configuration JSON")->check(CLI::ExistingFile);
    loc->add_option("-j,--jobs", loc_jobs, "Recordings processed in parallel")->check(CLI::PositiveNumber);
    loc->add_flag("--print-config", print_config, "Print the effective configuration and exit");
    overrides.add(loc);

    std::vector<fs::path> ev_estimates, ev_truth;
    std::optional<fs::path> ev_out, ev_config;
    std::string ev_format = "auto";
    auto* ev = app.add_subcommand("evaluate", "Error metrics of estimates against ground truth");
    ev->add_option("--estimates", ev_estimates, "Estimates CSV files")->required();
    ev->add_option("--truth", ev_truth, "Matching recordings carrying ground truth")->required();
    ev->add_option("--format", ev_format, "Truth recording format")->check(CLI::IsMember({"auto", "wave", "locata"}));
    ev->add_option("-o,--out", ev_out, "Metrics JSON (default: stdout)");
    ev->add_option("-c,--config", ev_config, "Configuration to echo in the report")->check(CLI::ExistingFile);

    std::vector<int> st_only;
    std::optional<fs::path> st_locata;
    auto* st = app.add_subcommand("selftest", "Run the acceptance suite on simulator oracles");
    st->add_option("--only", st_only, "Criterion ids to run")->delimiter(',');
    st->add_option("--locata-root", st_locata, "Dataset root for the dataset-gated criterion");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : input_error;
    }

    try {
        if (*sim) return cmd_simulate(scene_file, sim_out, sim_duration, sim_seed, sim_snr);
        if (*loc) {
            const PipelineConfig cfg = overrides.apply(loc_config);
            if (print_config) {
                std::cout << config_to_json(cfg) << "\n";
                return ok;
            }
            if (inputs.empty()) throw InputError("localize: no input recordings");
            return cmd_localize(inputs, loc_out, loc_dir, loc_format, loc_out_format, loc_metrics, loc_jobs, cfg,
                                overrides.order_forced);
        }
        if (*ev) return cmd_evaluate(ev_estimates, ev_truth, ev_format, ev_out, ev_config);
        if (*st) return cmd_selftest(st_only, st_locata);
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return input_error;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return numerical_error;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return input_error;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return input_error;
    }
    return ok;
}
