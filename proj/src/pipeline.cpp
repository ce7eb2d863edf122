#include "ambiloc/pipeline.hpp"

#include "ambiloc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace ambiloc {

using nlohmann::json;

namespace {

// Reads fields out of a JSON object and remembers which keys were used, so
// that typos in config files are reported instead of silently ignored.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw InputError(where_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw InputError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        used_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw InputError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d to_vec3(const json& j, const std::string& where) {
    std::vector<double> v;
    try {
        v = j.get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw InputError(where + ": " + e.what());
    }
    if (v.size() != 3) throw InputError(where + ": expected 3 components");
    return {v[0], v[1], v[2]};
}

const char* loss_name(Loss l) {
    switch (l) {
    case Loss::squares: return "squares";
    case Loss::absolute: return "absolute";
    case Loss::huber: return "huber";
    }
    return "absolute";
}

Loss parse_loss(const std::string& s) {
    if (s == "squares" || s == "l2") return Loss::squares;
    if (s == "absolute" || s == "l1") return Loss::absolute;
    if (s == "huber") return Loss::huber;
    throw InputError("ranging.loss: unknown loss '" + s + "'");
}

std::string fmt_double(double v, const char* f) {
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

PipelineConfig::PipelineConfig() {
    // Moving sources smear echo peaks over a few lags, so the pipeline
    // listens further down than the single-frame default.
    peaks.min_rel_strength = 0.04;
    solver.loss = Loss::absolute;
    solver.lambda = default_lambda(solver.loss);
    tracker.gate_radius = 0.1;
}

void PipelineConfig::validate() const {
    if (order < 1) throw InputError("order must be >= 1 (first-order channels are needed for steering)");
    if (!(c > 0.0)) throw InputError("c must be positive");
    stft.validate();
    gtvv.validate();
    peaks.validate(stft.fft_len, stft.sample_rate);
    tracker.validate();
    AssemblyConfig a = assembly;
    a.lb = range_min / c;
    a.ub = range_max / c;
    a.validate();
    solver.validate();
    if (!(range_min > 0.0 && range_min < range_max)) throw InputError("range bounds must satisfy 0 < min < max");
    if (block_len < 2) throw InputError("block_len must be >= 2");
    if (block_overlap < 0 || block_overlap >= block_len) throw InputError("block_overlap must be in [0, block_len)");
}

std::string config_to_json(const PipelineConfig& cfg) {
    json j;
    j["order"] = cfg.order;
    j["c"] = cfg.c;
    j["stft"] = {{"sample_rate", cfg.stft.sample_rate},
                 {"frame_len", cfg.stft.frame_len},
                 {"hop", cfg.stft.hop},
                 {"tukey_alpha", cfg.stft.tukey_alpha},
                 {"fft_len", cfg.stft.fft_len}};
    j["gtvv"] = {{"buffer_len", cfg.gtvv.buffer_len},
                 {"eps", cfg.gtvv.eps},
                 {"steer", cfg.gtvv.steer == SteerPolicy::fixed ? "fixed" : "previous_doa"},
                 {"band_low_hz", cfg.gtvv.band_low_hz},
                 {"band_high_ratio", cfg.gtvv.band_high_ratio}};
    j["peaks"] = {{"max_delay", cfg.peaks.max_delay},
                  {"min_rel_strength", cfg.peaks.min_rel_strength},
                  {"max_peaks", cfg.peaks.max_peaks},
                  {"harmonic_tol", cfg.peaks.harmonic_tol},
                  {"subsample", cfg.peaks.subsample},
                  {"neighborhood", cfg.peaks.neighborhood},
                  {"compensate_leakage", cfg.peaks.compensate_leakage}};
    j["tracker"] = {{"process_noise", cfg.tracker.process_noise},
                    {"measurement_noise", cfg.tracker.measurement_noise},
                    {"gate_radius", cfg.tracker.gate_radius},
                    {"confirm_hits", cfg.tracker.confirm_hits},
                    {"delete_misses", cfg.tracker.delete_misses},
                    {"max_tracks", cfg.tracker.max_tracks},
                    {"source_process_noise", cfg.tracker.source_process_noise},
                    {"source_measurement_noise", cfg.tracker.source_measurement_noise},
                    {"source_gate_deg", cfg.tracker.source_gate_deg},
                    {"source_reacquire", cfg.tracker.source_reacquire},
                    {"smoothing", cfg.tracker.smoothing}};
    json hyp = json::array();
    if (cfg.assembly.use_dp) hyp.push_back("DP");
    if (cfg.assembly.use_hv) hyp.push_back("HV");
    j["ranging"] = {{"hypotheses", hyp},
                    {"all_pairs", cfg.assembly.all_pairs},
                    {"stride", cfg.assembly.stride},
                    {"pair_multiples", cfg.assembly.pair_multiples},
                    {"weight_by_strength", cfg.assembly.weight_by_strength},
                    {"loss", loss_name(cfg.solver.loss)},
                    {"lambda", cfg.solver.lambda},
                    {"huber_delta", cfg.solver.huber_delta},
                    {"max_iters", cfg.solver.max_iters},
                    {"tol", cfg.solver.tol},
                    {"restarts", cfg.solver.restarts},
                    {"seed", cfg.solver.seed},
                    {"warm_start", cfg.solver.warm_start},
                    {"range_min", cfg.range_min},
                    {"range_max", cfg.range_max},
                    {"block_len", cfg.block_len},
                    {"block_overlap", cfg.block_overlap}};
    return j.dump(2);
}

PipelineConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    PipelineConfig cfg;
    Fields top(j, "config");
    top.get("order", cfg.order);
    top.get("c", cfg.c);
    if (const json* s = top.child("stft")) {
        Fields f(*s, "stft");
        f.get("sample_rate", cfg.stft.sample_rate);
        f.get("frame_len", cfg.stft.frame_len);
        f.get("hop", cfg.stft.hop);
        f.get("tukey_alpha", cfg.stft.tukey_alpha);
        f.get("fft_len", cfg.stft.fft_len);
        f.finish();
    }
    if (const json* s = top.child("gtvv")) {
        Fields f(*s, "gtvv");
        f.get("buffer_len", cfg.gtvv.buffer_len);
        f.get("eps", cfg.gtvv.eps);
        std::string steer = cfg.gtvv.steer == SteerPolicy::fixed ? "fixed" : "previous_doa";
        f.get("steer", steer);
        if (steer == "fixed") cfg.gtvv.steer = SteerPolicy::fixed;
        else if (steer == "previous_doa") cfg.gtvv.steer = SteerPolicy::previous_doa;
        else throw InputError("gtvv.steer: unknown policy '" + steer + "'");
        f.get("band_low_hz", cfg.gtvv.band_low_hz);
        f.get("band_high_ratio", cfg.gtvv.band_high_ratio);
        f.finish();
    }
    if (const json* s = top.child("peaks")) {
        Fields f(*s, "peaks");
        f.get("max_delay", cfg.peaks.max_delay);
        f.get("min_rel_strength", cfg.peaks.min_rel_strength);
        f.get("max_peaks", cfg.peaks.max_peaks);
        f.get("harmonic_tol", cfg.peaks.harmonic_tol);
        f.get("subsample", cfg.peaks.subsample);
        f.get("neighborhood", cfg.peaks.neighborhood);
        f.get("compensate_leakage", cfg.peaks.compensate_leakage);
        f.finish();
    }
    if (const json* s = top.child("tracker")) {
        Fields f(*s, "tracker");
        f.get("process_noise", cfg.tracker.process_noise);
        f.get("measurement_noise", cfg.tracker.measurement_noise);
        f.get("gate_radius", cfg.tracker.gate_radius);
        f.get("confirm_hits", cfg.tracker.confirm_hits);
        f.get("delete_misses", cfg.tracker.delete_misses);
        f.get("max_tracks", cfg.tracker.max_tracks);
        f.get("source_process_noise", cfg.tracker.source_process_noise);
        f.get("source_measurement_noise", cfg.tracker.source_measurement_noise);
        f.get("source_gate_deg", cfg.tracker.source_gate_deg);
        f.get("source_reacquire", cfg.tracker.source_reacquire);
        f.get("smoothing", cfg.tracker.smoothing);
        f.finish();
    }
    if (const json* s = top.child("ranging")) {
        Fields f(*s, "ranging");
        std::vector<std::string> hyp;
        f.get("hypotheses", hyp);
        if (s->contains("hypotheses")) {
            cfg.assembly.use_dp = std::count(hyp.begin(), hyp.end(), "DP") > 0;
            cfg.assembly.use_hv = std::count(hyp.begin(), hyp.end(), "HV") > 0;
            for (const std::string& h : hyp)
                if (h != "DP" && h != "HV") throw InputError("ranging.hypotheses: unknown hypothesis '" + h + "'");
        }
        f.get("all_pairs", cfg.assembly.all_pairs);
        f.get("stride", cfg.assembly.stride);
        f.get("pair_multiples", cfg.assembly.pair_multiples);
        f.get("weight_by_strength", cfg.assembly.weight_by_strength);
        std::string loss = loss_name(cfg.solver.loss);
        f.get("loss", loss);
        const Loss parsed = parse_loss(loss);
        if (parsed != cfg.solver.loss) cfg.solver.lambda = default_lambda(parsed);
        cfg.solver.loss = parsed;
        f.get("lambda", cfg.solver.lambda);
        f.get("huber_delta", cfg.solver.huber_delta);
        f.get("max_iters", cfg.solver.max_iters);
        f.get("tol", cfg.solver.tol);
        f.get("restarts", cfg.solver.restarts);
        f.get("seed", cfg.solver.seed);
        f.get("warm_start", cfg.solver.warm_start);
        f.get("range_min", cfg.range_min);
        f.get("range_max", cfg.range_max);
        f.get("block_len", cfg.block_len);
        f.get("block_overlap", cfg.block_overlap);
        f.finish();
    }
    top.finish();
    cfg.validate();
    return cfg;
}

double estimate_time(const PipelineConfig& cfg, int k) {
    const double center = k - 0.5 * (cfg.gtvv.buffer_len - 1);
    return (center * cfg.stft.hop + 0.5 * cfg.stft.frame_len) / cfg.stft.sample_rate;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const MultichannelSignal& signal) {
    cfg.validate();
    const int C = sh_channels(cfg.order);
    if (signal.rows() != C)
        throw InputError("input has " + std::to_string(signal.rows()) + " channels, order " + std::to_string(cfg.order) +
                         " needs " + std::to_string(C));
    const Spectrogram spec = stft_analyze(signal, cfg.stft, C);
    const int K = spec.frame_count();
    const int T = cfg.gtvv.buffer_len;
    if (K < T || K < 2) throw InputError("recording too short: " + std::to_string(K) + " frames, need " + std::to_string(T));

    TrackerConfig tcfg = cfg.tracker;
    tcfg.c = cfg.c;
    AssemblyConfig acfg = cfg.assembly;
    acfg.lb = cfg.range_min / cfg.c;
    acfg.ub = cfg.range_max / cfg.c;

    PipelineResult result;
    const Eigen::MatrixXd weights = correlation_weights(spec);
    SourceTrack source(tcfg);
    KalmanEchoTracker echoes(tcfg);
    std::optional<Direction> previous;
    for (int k = T - 1; k < K; ++k) {
        const Direction steer = (cfg.gtvv.steer == SteerPolicy::previous_doa && previous)
                                    ? *previous
                                    : pseudo_intensity_direction(spec, k, T);
        const GtvvFrame gf = estimate_gtvv(spec, weights, k, steer, cfg.gtvv);
        const auto doa = extract_doa(gf);
        if (doa) previous = doa->u;
        source.update(k, doa);
        const ObservationBatch batch = peaks_to_observations(pick_reflection_peaks(gf, cfg.peaks), gf, cfg.peaks);
        result.diag.undecodable_peaks += batch.undecodable;
        echoes.update(k, batch.observations);
        ++result.diag.frames;
    }
    if (tcfg.smoothing) {
        source.smooth();
        echoes.finish();
    }
    result.tracks = echoes.tracks();
    for (const EchoTrack& t : result.tracks) result.diag.confirmed_tracks += t.was_confirmed;

    // Ranging over sliding blocks of frames with a source DoA.
    const std::vector<EchoSeries> series = confirmed_pairs(result.tracks, source, cfg.c);
    std::vector<double> tau_sum(K, 0.0);
    std::vector<int> tau_count(K, 0);
    if (!series.empty()) {
        int first = std::numeric_limits<int>::max(), last = -1;
        for (const EchoSeries& s : series) {
            first = std::min(first, s.frames.front());
            last = std::max(last, s.frames.back());
        }
        std::vector<int> frames;
        for (const SourceSample& s : source.samples())
            if (s.frame >= first && s.frame <= last) frames.push_back(s.frame);
        const int n = static_cast<int>(frames.size());
        const int step = cfg.block_len - cfg.block_overlap;
        for (int start = 0; n >= 2; start += step) {
            if (start + cfg.block_len > n) start = std::max(0, n - cfg.block_len);
            const int end = std::min(n, start + cfg.block_len);
            const std::vector<int> block(frames.begin() + start, frames.begin() + end);
            try {
                const ConstraintSystem sys = assemble(series, block, acfg);
                const ToaSolution sol = solve_toa(sys, cfg.solver);
                result.diag.constraint_rows += static_cast<int>(sys.rows.size());
                ++result.diag.blocks_solved;
                int lo = sys.unknowns(), hi = -1;
                for (const ConstraintRow& r : sys.rows) {
                    lo = std::min({lo, r.a, r.b});
                    hi = std::max({hi, r.a, r.b});
                }
                for (int i = lo; i <= hi; ++i) {
                    tau_sum[block[i]] += sol.tau[i];
                    ++tau_count[block[i]];
                }
            } catch (const NumericalError&) {
                ++result.diag.blocks_empty;
            }
            if (end >= n) break;
        }
    }

    for (int k = T - 1; k < K; ++k) {
        FrameEstimate e;
        e.k = k;
        e.t = estimate_time(cfg, k);
        if (const auto u = source.at(k)) {
            e.doa_valid = true;
            e.az_deg = rad2deg(u->azimuth());
            e.el_deg = rad2deg(u->elevation());
            if (tau_count[k] > 0) {
                e.range_valid = true;
                e.range_m = std::clamp(cfg.c * tau_sum[k] / tau_count[k], cfg.range_min, cfg.range_max);
            }
        }
        if (!e.doa_valid) e.az_deg = e.el_deg = std::numeric_limits<double>::quiet_NaN();
        if (!e.range_valid) e.range_m = std::numeric_limits<double>::quiet_NaN();
        result.estimates.push_back(e);
    }
    return result;
}

double azimuth_error_deg(double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

ErrorStats error_stats(std::vector<double> errors) {
    ErrorStats s;
    s.count = static_cast<int>(errors.size());
    if (errors.empty()) {
        s.median = s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    std::sort(errors.begin(), errors.end());
    const std::size_t n = errors.size();
    s.median = n % 2 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
    double sum = 0.0;
    for (double e : errors) sum += e;
    s.mean = sum / n;
    double var = 0.0;
    for (double e : errors) var += (e - s.mean) * (e - s.mean);
    s.std = std::sqrt(var / n);
    return s;
}

MetricsReport compute_metrics(const std::vector<std::pair<const std::vector<FrameEstimate>*, const TruthTrack*>>& runs,
                              const std::string& config_json) {
    std::vector<double> az, el, range;
    int frames = 0;
    for (const auto& [estimates, truth] : runs) {
        for (const FrameEstimate& e : *estimates) {
            if (!e.doa_valid) continue;
            const auto p = truth->at(e.t);
            if (!p || p->norm() == 0.0) continue;
            ++frames;
            const Direction d = Direction::from_vector(*p);
            az.push_back(azimuth_error_deg(e.az_deg, rad2deg(d.azimuth())));
            el.push_back(std::abs(e.el_deg - rad2deg(d.elevation())));
            if (e.range_valid) range.push_back(std::abs(e.range_m - p->norm()));
        }
    }
    if (frames == 0) throw InputError("metrics: no estimate overlaps the ground truth");
    MetricsReport r;
    r.azimuth_deg = error_stats(std::move(az));
    r.elevation_deg = error_stats(std::move(el));
    r.range_m = error_stats(std::move(range));
    r.frames = frames;
    r.config_json = config_json;
    return r;
}

MetricsReport compute_metrics(const std::vector<FrameEstimate>& estimates, const TruthTrack& truth,
                              const std::string& config_json) {
    return compute_metrics({{&estimates, &truth}}, config_json);
}

void write_estimates_csv(std::ostream& out, const std::vector<FrameEstimate>& estimates) {
    out << "k,t,az_deg,el_deg,range_m,range_valid\n";
    for (const FrameEstimate& e : estimates) {
        out << e.k << ',' << fmt_double(e.t, "%.6f") << ',' << fmt_double(e.doa_valid ? e.az_deg : NAN, "%.4f") << ','
            << fmt_double(e.doa_valid ? e.el_deg : NAN, "%.4f") << ','
            << fmt_double(e.range_valid ? e.range_m : NAN, "%.4f") << ',' << (e.range_valid ? 1 : 0) << '\n';
    }
}

void write_estimates_csv(const std::filesystem::path& path, const std::vector<FrameEstimate>& estimates) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    write_estimates_csv(out, estimates);
    if (!out) throw InputError("write failed: " + path.string());
}

void write_estimates_jsonl(std::ostream& out, const std::vector<FrameEstimate>& estimates) {
    // Same fixed formatting as the CSV so repeated runs stay byte-identical.
    auto value = [](bool valid, double v) { return valid ? fmt_double(v, "%.4f") : std::string("null"); };
    for (const FrameEstimate& e : estimates) {
        out << "{\"k\":" << e.k << ",\"t\":" << fmt_double(e.t, "%.6f") << ",\"az_deg\":" << value(e.doa_valid, e.az_deg)
            << ",\"el_deg\":" << value(e.doa_valid, e.el_deg) << ",\"range_m\":" << value(e.range_valid, e.range_m)
            << ",\"range_valid\":" << (e.range_valid ? "true" : "false") << "}\n";
    }
}

std::vector<FrameEstimate> read_estimates_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "k,t,az_deg,el_deg,range_m,range_valid")
        throw InputError(path.string() + ": unexpected CSV header");
    std::vector<FrameEstimate> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (f.size() != 6) throw InputError(path.string() + ": row " + std::to_string(row) + " has the wrong field count");
        try {
            FrameEstimate e;
            e.k = std::stoi(f[0]);
            e.t = std::stod(f[1]);
            e.az_deg = std::stod(f[2]);
            e.el_deg = std::stod(f[3]);
            e.range_m = std::stod(f[4]);
            e.range_valid = std::stoi(f[5]) != 0;
            e.doa_valid = std::isfinite(e.az_deg) && std::isfinite(e.el_deg);
            out.push_back(e);
        } catch (const std::exception&) {
            throw InputError(path.string() + ": malformed row " + std::to_string(row));
        }
    }
    return out;
}

namespace {

json stats_json(const ErrorStats& s) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"median", num(s.median)}, {"mean", num(s.mean)}, {"std", num(s.std)}, {"count", s.count}};
}

ErrorStats stats_from(const json& j) {
    auto num = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
    ErrorStats s;
    s.median = num(j.at("median"));
    s.mean = num(j.at("mean"));
    s.std = num(j.at("std"));
    s.count = j.at("count").get<int>();
    return s;
}

}  // namespace

std::string metrics_to_json(const MetricsReport& report) {
    json j;
    j["azimuth_deg"] = stats_json(report.azimuth_deg);
    j["elevation_deg"] = stats_json(report.elevation_deg);
    j["range_m"] = stats_json(report.range_m);
    j["frames"] = report.frames;
    try {
        j["config"] = json::parse(report.config_json.empty() ? "{}" : report.config_json);
    } catch (const json::exception&) {
        j["config"] = report.config_json;
    }
    return j.dump(2);
}

MetricsReport metrics_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        MetricsReport r;
        r.azimuth_deg = stats_from(j.at("azimuth_deg"));
        r.elevation_deg = stats_from(j.at("elevation_deg"));
        r.range_m = stats_from(j.at("range_m"));
        r.frames = j.at("frames").get<int>();
        r.config_json = j.at("config").dump(2);
        return r;
    } catch (const json::exception& e) {
        throw InputError(std::string("metrics: ") + e.what());
    }
}

SceneSpec scene_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("scene: ") + e.what());
    }
    SceneSpec spec;
    Fields f(j, "scene");
    const json* room = f.child("room");
    const json* panels = f.child("panels");
    if (room && panels) throw InputError("scene: give either 'room' or 'panels', not both");
    if (room) {
        Shoebox box;
        Fields r(*room, "scene.room");
        if (const json* e = r.child("extent")) box.extent = to_vec3(*e, "scene.room.extent");
        std::vector<double> abs(6, 0.0);
        r.get("absorption", abs);
        if (abs.size() != 6) throw InputError("scene.room.absorption: expected 6 values");
        std::copy(abs.begin(), abs.end(), box.absorption.begin());
        r.finish();
        spec.scene.geometry = box;
    } else if (panels) {
        if (!panels->is_array()) throw InputError("scene.panels: expected an array");
        std::vector<Panel> ps;
        for (const json& pj : *panels) {
            Panel p;
            Fields pf(pj, "scene.panels[]");
            if (const json* v = pf.child("origin")) p.origin = to_vec3(*v, "panel.origin");
            if (const json* v = pf.child("edge_u")) p.edge_u = to_vec3(*v, "panel.edge_u");
            if (const json* v = pf.child("edge_v")) p.edge_v = to_vec3(*v, "panel.edge_v");
            pf.get("absorption", p.absorption);
            pf.finish();
            ps.push_back(p);
        }
        spec.scene.geometry = ps;
    }
    if (const json* m = f.child("mic")) spec.scene.mic = to_vec3(*m, "scene.mic");
    if (const json* tr = f.child("trajectory")) {
        if (!tr->is_array()) throw InputError("scene.trajectory: expected an array");
        std::vector<Waypoint> wps;
        for (const json& wj : *tr) {
            Waypoint w;
            Fields wf(wj, "scene.trajectory[]");
            wf.get("t", w.time);
            const json* p = wf.child("position");
            if (!p) throw InputError("scene.trajectory[]: missing position");
            w.position = to_vec3(*p, "scene.trajectory[].position");
            wf.finish();
            wps.push_back(w);
        }
        spec.scene.trajectory = Trajectory(std::move(wps));
    } else {
        throw InputError("scene: missing trajectory");
    }
    f.get("max_order", spec.scene.max_order);
    f.get("c", spec.scene.c);
    f.get("fs", spec.scene.fs);
    f.get("order", spec.order);
    f.get("duration", spec.duration);
    f.get("signal", spec.signal);
    f.get("seed", spec.seed);
    if (const json* s = f.child("snr_db"); s && !s->is_null()) spec.snr_db = s->get<double>();
    f.get("truth_period", spec.truth_period);
    f.finish();
    if (spec.signal != "speech" && spec.signal != "noise") throw InputError("scene.signal: expected 'speech' or 'noise'");
    if (!(spec.duration > 0.0) || !(spec.truth_period > 0.0)) throw InputError("scene: duration and truth_period must be positive");
    if (spec.order < 1) throw InputError("scene.order must be >= 1");
    spec.scene.validate();
    return spec;
}

std::string scene_to_json(const SceneSpec& spec) {
    json j;
    if (const auto* box = std::get_if<Shoebox>(&spec.scene.geometry)) {
        j["room"] = {{"extent", vec3(box->extent)},
                     {"absorption", std::vector<double>(box->absorption.begin(), box->absorption.end())}};
    } else {
        json ps = json::array();
        for (const Panel& p : std::get<std::vector<Panel>>(spec.scene.geometry))
            ps.push_back({{"origin", vec3(p.origin)}, {"edge_u", vec3(p.edge_u)}, {"edge_v", vec3(p.edge_v)},
                          {"absorption", p.absorption}});
        j["panels"] = ps;
    }
    j["mic"] = vec3(spec.scene.mic);
    json tr = json::array();
    for (const Waypoint& w : spec.scene.trajectory.waypoints()) tr.push_back({{"t", w.time}, {"position", vec3(w.position)}});
    j["trajectory"] = tr;
    j["max_order"] = spec.scene.max_order;
    j["c"] = spec.scene.c;
    j["fs"] = spec.scene.fs;
    j["order"] = spec.order;
    j["duration"] = spec.duration;
    j["signal"] = spec.signal;
    j["seed"] = spec.seed;
    j["snr_db"] = spec.snr_db ? json(*spec.snr_db) : json(nullptr);
    j["truth_period"] = spec.truth_period;
    return j.dump(2);
}

SimulatedRecording simulate(const SceneSpec& spec) {
    spec.scene.validate();
    const auto samples = static_cast<std::size_t>(std::llround(spec.duration * spec.scene.fs));
    std::vector<double> src;
    if (spec.signal == "speech") {
        src = speech_like_signal(samples, spec.scene.fs, spec.seed);
    } else {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> gauss(0.0, 0.1);
        src.resize(samples);
        for (double& v : src) v = gauss(rng);
    }
    RenderOptions ro;
    ro.order = spec.order;
    ro.snr_db = spec.snr_db;
    ro.noise_seed = spec.seed + 1;
    SimulatedRecording out;
    out.signal = render_hoa(spec.scene, src, ro);

    std::vector<TruthTrack::Sample> truth;
    const double end = static_cast<double>(samples) / spec.scene.fs;
    const int n = static_cast<int>(std::floor(end / spec.truth_period + 1e-9));
    for (int i = 0; i <= n; ++i) {
        const double t = i * spec.truth_period;
        truth.push_back({t, spec.scene.trajectory.position(t) - spec.scene.mic});
    }
    out.truth = TruthTrack(std::move(truth));
    return out;
}

}  // namespace ambiloc
