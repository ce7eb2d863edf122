#include "ambiloc/wavefront.hpp"

#include "ambiloc/error.hpp"

#include <algorithm>
#include <cmath>

namespace ambiloc {

void PeakPickConfig::validate(int fft_len, double sample_rate) const {
    if (!(max_delay > 0.0 && max_delay < fft_len / (2.0 * sample_rate)))
        throw InputError("peaks: max_delay must be in (0, fft_len / (2 fs))");
    if (!(min_rel_strength > 0.0 && min_rel_strength < 1.0))
        throw InputError("peaks: min_rel_strength must be in (0, 1)");
    if (max_peaks < 0) throw InputError("peaks: max_peaks must be non-negative");
    if (!(harmonic_tol >= 0.0)) throw InputError("peaks: harmonic_tol must be non-negative");
    if (neighborhood < 1) throw InputError("peaks: neighborhood must be >= 1");
}

std::optional<EchoObservation> extract_doa(const GtvvFrame& gf) {
    auto d = decode_direction(gf.v_time.col(0), gf.order);
    if (!d) return std::nullopt;
    return EchoObservation{d->direction, 0.0, d->gain, gf.frame, EchoKind::direct};
}

std::vector<GtvvPeak> pick_reflection_peaks(const GtvvFrame& gf, const PeakPickConfig& cfg) {
    const double fs = gf.sample_rate;
    cfg.validate(gf.lag_count(), fs);
    const int last = std::min(static_cast<int>(std::floor(cfg.max_delay * fs)), gf.lag_count() / 2 - 1);
    const int nb = cfg.neighborhood;

    Eigen::VectorXd s(last + nb + 1);
    for (int t = 0; t < s.size(); ++t) s[t] = gf.v_time.col(t).norm();
    const double threshold = cfg.min_rel_strength * s[0];

    struct Candidate {
        int index;
        double lag;  // samples
        double strength;
    };
    std::vector<Candidate> candidates;
    for (int t = 1; t <= last; ++t) {
        if (s[t] < threshold) continue;
        bool is_max = true;
        for (int d = 1; d <= nb && is_max; ++d) {
            if (s[std::max(0, t - d)] > s[t]) is_max = false;
            if (s[t + d] >= s[t]) is_max = false;
        }
        if (!is_max) continue;
        double lag = t;
        if (cfg.subsample) {
            const double den = s[t - 1] - 2.0 * s[t] + s[t + 1];
            if (den < 0.0) lag += std::clamp(0.5 * (s[t - 1] - s[t + 1]) / den, -0.5, 0.5);
        }
        candidates.push_back({t, lag, s[t]});
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.strength > b.strength; });

    std::vector<Candidate> kept;
    for (const Candidate& c : candidates) {
        bool ghost = false;
        for (const Candidate& k : kept) {
            const int p = static_cast<int>(std::lround(c.lag / k.lag));
            if (p >= 2 && std::abs(c.lag - p * k.lag) <= cfg.harmonic_tol) {
                ghost = true;
                break;
            }
        }
        if (!ghost) kept.push_back(c);
        if (static_cast<int>(kept.size()) >= cfg.max_peaks) break;
    }

    std::vector<GtvvPeak> peaks;
    peaks.reserve(kept.size());
    for (const Candidate& c : kept)
        peaks.push_back({c.lag / fs, c.index, gf.v_time.col(c.index), c.strength});
    return peaks;
}

namespace {

ObservationBatch decode_peaks(const std::vector<GtvvPeak>& peaks, int frame, int order,
                              const Eigen::MatrixXd* atom_map) {
    ObservationBatch out;
    for (const GtvvPeak& p : peaks) {
        auto d = atom_map ? decode_direction_mapped(p.column, order, *atom_map) : decode_direction(p.column, order);
        if (!d || !(d->gain > 0.0) || !(p.lag > 0.0)) {
            ++out.undecodable;
            continue;
        }
        out.observations.push_back({d->direction, p.lag, d->gain, frame, EchoKind::reflection});
    }
    std::stable_sort(out.observations.begin(), out.observations.end(),
                     [](const EchoObservation& a, const EchoObservation& b) { return a.g > b.g; });
    return out;
}

}  // namespace

ObservationBatch peaks_to_observations(const std::vector<GtvvPeak>& peaks, int frame, int order) {
    return decode_peaks(peaks, frame, order, nullptr);
}

ObservationBatch peaks_to_observations(const std::vector<GtvvPeak>& peaks, const GtvvFrame& gf,
                                       const PeakPickConfig& cfg) {
    if (!cfg.compensate_leakage) return decode_peaks(peaks, gf.frame, gf.order, nullptr);
    const Eigen::MatrixXd map = leakage_map(gf);
    return decode_peaks(peaks, gf.frame, gf.order, &map);
}

Eigen::MatrixXd leakage_map(const GtvvFrame& gf) {
    const int C = sh_channels(gf.order);
    const Eigen::VectorXd w = max_directivity_beamformer(gf.steer, gf.order).weights;
    const Eigen::VectorXd v0 = gf.v_time.col(0);
    const double wv = w.dot(v0);
    if (std::abs(wv) < 1e-12) return Eigen::MatrixXd::Identity(C, C);
    return Eigen::MatrixXd::Identity(C, C) - v0 * w.transpose() / wv;
}

}  // namespace ambiloc
