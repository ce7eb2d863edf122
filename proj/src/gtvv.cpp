#include "ambiloc/gtvv.hpp"

#include "ambiloc/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ambiloc {

namespace {

int order_from_channels(int channels) {
    const int l = static_cast<int>(std::lround(std::sqrt(static_cast<double>(channels)))) - 1;
    if (l < 0 || sh_channels(l) != channels)
        throw InputError("channel count " + std::to_string(channels) + " is not (L+1)^2");
    return l;
}

// Row i of Phi_lm w and the auto-spectrum, given the weighted buffer and its
// beamformed reference.
void accumulate_channel(const Eigen::MatrixXcd& weighted, const Eigen::VectorXcd& beam, int channel,
                        Eigen::VectorXcd& a, Eigen::VectorXcd& phi) {
    const auto T = weighted.cols();
    a.resize(T);
    phi.resize(T);
    for (Eigen::Index i = 0; i < T; ++i) {
        const std::complex<double> b = weighted(channel, i);
        a[i] = beam[i] * std::conj(b);
        phi[i] = std::norm(b);
    }
}

}  // namespace

void GtvvConfig::validate() const {
    if (buffer_len < 2) throw InputError("gtvv: buffer_len must be >= 2");
    if (!(eps >= 0.0)) throw InputError("gtvv: eps must be non-negative");
    if (!(band_low_hz >= 0.0) || !(band_high_ratio > 0.0 && band_high_ratio <= 1.0))
        throw InputError("gtvv: invalid band limits");
}

Eigen::MatrixXd correlation_weights(const Spectrogram& spec) {
    const int K = spec.frame_count();
    if (K < 2) throw InputError("correlation_weights: need at least two frames");
    const int F = spec.bins();
    Eigen::MatrixXd w(K, F);
    for (int k = 0; k + 1 < K; ++k) {
        const Eigen::MatrixXcd& b0 = spec.frame(k);
        const Eigen::MatrixXcd& b1 = spec.frame(k + 1);
        for (int f = 0; f < F; ++f) {
            const double n0 = b0.col(f).norm();
            const double n1 = b1.col(f).norm();
            if (n0 == 0.0 || n1 == 0.0) {
                w(k, f) = 0.0;
                continue;
            }
            const double r = b0.col(f).dot(b1.col(f)).real() / (n0 * n1);
            w(k, f) = std::clamp(r, 0.0, 1.0);
        }
    }
    w.row(K - 1) = w.row(K - 2);
    return w;
}

BinSystem accumulate_bin(const Eigen::MatrixXcd& buffer, const Eigen::VectorXd& weights, int channel,
                         const BeamformerWeights& w) {
    if (weights.size() != buffer.cols()) throw InputError("accumulate_bin: weights/buffer length mismatch");
    if (buffer.rows() != w.weights.size()) throw InputError("accumulate_bin: beamformer order mismatch");
    if (channel < 0 || channel >= buffer.rows()) throw InputError("accumulate_bin: channel out of range");
    Eigen::MatrixXcd weighted = buffer * weights.cast<std::complex<double>>().asDiagonal();
    Eigen::VectorXcd beam = weighted.transpose() * w.weights.cast<std::complex<double>>();
    BinSystem out;
    accumulate_channel(weighted, beam, channel, out.a, out.phi);
    return out;
}

GfvvBin solve_gfvv_bin(const Eigen::VectorXcd& a, const Eigen::VectorXcd& phi, double eps) {
    using cd = std::complex<double>;
    const auto T = a.size();
    if (T < 2 || phi.size() != T) throw InputError("solve_gfvv_bin: need T >= 2 rows of matching length");

    const double na = a.norm();
    const double nphi = phi.norm();
    if (na == 0.0) {
        // Only the offset column remains.
        return {cd{0.0}, phi.mean(), nphi == 0.0};
    }

    // Columns scaled to unit norm, A = [a/|a|, 1/sqrt(T)], then the 2x2
    // normal equations with a relative ridge on the Gram diagonal.
    const double su = 1.0 / std::sqrt(static_cast<double>(T));
    const Eigen::VectorXcd an = a / na;
    const cd s = an.sum() * su;
    const double diag = 1.0 + eps * 2.0;
    const cd g01 = std::conj(s);
    const cd g10 = s;
    const cd r0 = an.dot(phi);
    const cd r1 = phi.sum() * su;
    const cd det = diag * diag - g01 * g10;
    if (std::abs(det) < 1e-300) return {cd{0.0}, cd{0.0}, true};
    const cd x0 = (diag * r0 - g01 * r1) / det;
    const cd x1 = (diag * r1 - g10 * r0) / det;
    return {x0 / na, x1 * su, false};
}

GtvvFrame estimate_gtvv(const Spectrogram& spec, const Eigen::MatrixXd& weights, int k, const Direction& steer,
                        const GtvvConfig& cfg) {
    cfg.validate();
    const int T = cfg.buffer_len;
    if (k < T - 1) throw InputError("estimate_gtvv: buffer underrun at frame " + std::to_string(k));
    if (k >= spec.frame_count()) throw InputError("estimate_gtvv: frame index out of range");
    if (weights.rows() != spec.frame_count() || weights.cols() != spec.bins())
        throw InputError("estimate_gtvv: weight matrix shape mismatch");

    const int C = spec.channels();
    const int F = spec.bins();
    const int order = order_from_channels(C);
    const StftConfig& scfg = spec.config();

    GtvvFrame out;
    out.frame = k;
    out.order = order;
    out.sample_rate = scfg.sample_rate;
    out.steer = steer;
    out.v_freq = Eigen::MatrixXcd::Zero(C, F);
    out.sigma = Eigen::MatrixXcd::Zero(C, F);

    const BeamformerWeights w = max_directivity_beamformer(steer, order);
    const Eigen::VectorXcd wc = w.weights.cast<std::complex<double>>();
    std::vector<std::vector<bool>> degenerate(C, std::vector<bool>(F, false));

    Eigen::MatrixXcd weighted(C, T);
    Eigen::VectorXcd beam(T);
    Eigen::VectorXcd a, phi;
    for (int f = 0; f < F; ++f) {
        for (int i = 0; i < T; ++i) weighted.col(i) = weights(k - i, f) * spec.frame(k - i).col(f);
        beam.noalias() = weighted.transpose() * wc;
        for (int lm = 0; lm < C; ++lm) {
            accumulate_channel(weighted, beam, lm, a, phi);
            GfvvBin bin = solve_gfvv_bin(a, phi, cfg.eps);
            out.v_freq(lm, f) = bin.v;
            out.sigma(lm, f) = bin.sigma;
            degenerate[lm][f] = bin.degenerate;
        }
    }

    // Lag domain, with out-of-band and degenerate bins replaced by the
    // in-band mean so that a frequency-flat GFVV maps to a pure impulse.
    const double bin_hz = scfg.sample_rate / scfg.fft_len;
    const double nyquist = 0.5 * scfg.sample_rate;
    out.v_time.resize(C, scfg.fft_len);
    RealFft fft(scfg.fft_len);
    std::vector<std::complex<double>> row(F);
    std::vector<double> lags(scfg.fft_len);
    for (int lm = 0; lm < C; ++lm) {
        std::complex<double> sum{0.0};
        int n = 0;
        std::vector<bool> use(F);
        for (int f = 0; f < F; ++f) {
            const double hz = f * bin_hz;
            use[f] = hz >= cfg.band_low_hz && hz <= cfg.band_high_ratio * nyquist && !degenerate[lm][f];
            if (use[f]) {
                sum += out.v_freq(lm, f);
                ++n;
            }
        }
        if (lm == 0) out.degenerate_bins = static_cast<int>(std::count(degenerate[0].begin(), degenerate[0].end(), true));
        const double fill = n > 0 ? sum.real() / n : 0.0;
        for (int f = 0; f < F; ++f) row[f] = use[f] ? out.v_freq(lm, f) : std::complex<double>{fill};
        fft.inverse(row, lags);
        for (int t = 0; t < scfg.fft_len; ++t) out.v_time(lm, t) = lags[t];
    }
    return out;
}

Eigen::VectorXcd analytic_gfvv(const WavefrontSet& wf, const BeamformerWeights& w, double freq_hz) {
    const int C = sh_channels(w.order);
    Eigen::VectorXcd num = Eigen::VectorXcd::Zero(C);
    std::complex<double> den{0.0};
    for (const Wavefront& n : wf) {
        const Eigen::VectorXd y = sh_eval(n.direction, w.order).coeffs;
        const std::complex<double> an = n.gain * std::polar(1.0, -2.0 * kPi * freq_hz * n.toa);
        num += an * y.cast<std::complex<double>>();
        den += an * w.weights.dot(y);
    }
    if (std::abs(den) < 1e-12) throw NumericalError("analytic_gfvv: beamformer output vanishes");
    return num / den;
}

Direction pseudo_intensity_direction(const Spectrogram& spec, int k, int buffer_len) {
    if (spec.channels() < 4) throw InputError("pseudo_intensity_direction: needs first-order channels");
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    const int first = std::max(0, k - buffer_len + 1);
    for (int kk = first; kk <= k; ++kk) {
        const Eigen::MatrixXcd& b = spec.frame(kk);
        for (int f = 1; f < spec.bins(); ++f) {
            const std::complex<double> w0 = std::conj(b(0, f));
            // ACN 1, 2, 3 = Y, Z, X.
            acc.x() += (w0 * b(3, f)).real();
            acc.y() += (w0 * b(1, f)).real();
            acc.z() += (w0 * b(2, f)).real();
        }
    }
    if (acc.norm() == 0.0) return Direction(0.0, 0.0);
    return Direction::from_vector(acc);
}

}  // namespace ambiloc
