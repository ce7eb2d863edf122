#pragma once

// Generalized frequency/time-domain velocity vector: robust per-bin
// estimation from a buffer of weighted cross-spectra, and the analytic
// forward model used as a test oracle.

#include "ambiloc/sh.hpp"
#include "ambiloc/stft.hpp"

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace ambiloc {

enum class SteerPolicy {
    fixed,              ///< always use the steer direction supplied by the caller
    previous_doa,       ///< caller feeds back the previous frame's decoded DoA
};

struct GtvvConfig {
    int buffer_len = 16;
    double eps = 1e-10;
    SteerPolicy steer = SteerPolicy::previous_doa;
    /// Bins outside [band_low_hz, band_high_ratio * Nyquist] are not used in
    /// the lag-domain transform; they are filled with the in-band mean.
    double band_low_hz = 100.0;
    double band_high_ratio = 0.9;

    void validate() const;
};

struct GtvvFrame {
    int frame = 0;
    int order = 0;
    double sample_rate = 0.0;
    Eigen::MatrixXcd v_freq;  ///< channels x bins
    Eigen::MatrixXd v_time;   ///< channels x fft_len, lag 0 first
    Eigen::MatrixXcd sigma;   ///< channels x bins, noise cross-spectrum
    Direction steer;
    int degenerate_bins = 0;

    Eigen::VectorXd lag(int t) const { return v_time.col(t); }
    int lag_count() const { return static_cast<int>(v_time.cols()); }
};

/// One propagation path: direction, absolute time of arrival (s) and a
/// frequency-flat gain.
struct Wavefront {
    Direction direction;
    double toa = 0.0;
    double gain = 1.0;
};
using WavefrontSet = std::vector<Wavefront>;

/// Pearson correlation of consecutive frames per bin, floored at 0.
/// Result is frames x bins; the last frame copies its predecessor.
Eigen::MatrixXd correlation_weights(const Spectrogram& spec);

struct BinSystem {
    Eigen::VectorXcd a;    ///< row i of Phi_lm * w
    Eigen::VectorXcd phi;  ///< weighted auto-spectra of channel lm
};

/// `buffer` is channels x T, column i holding b(k - i, f); `weights` holds
/// the matching omega(k - i, f).
BinSystem accumulate_bin(const Eigen::MatrixXcd& buffer, const Eigen::VectorXd& weights, int channel,
                         const BeamformerWeights& w);

struct GfvvBin {
    std::complex<double> v;
    std::complex<double> sigma;
    bool degenerate = false;
};

/// Least squares solution of phi = v * a + sigma over the T rows.
GfvvBin solve_gfvv_bin(const Eigen::VectorXcd& a, const Eigen::VectorXcd& phi, double eps = 1e-10);

/// Estimates the GFVV/GTVV at frame k from frames k-T+1..k.
/// `weights` comes from correlation_weights(spec). Throws InputError when
/// k < T-1.
GtvvFrame estimate_gtvv(const Spectrogram& spec, const Eigen::MatrixXd& weights, int k, const Direction& steer,
                        const GtvvConfig& cfg);

/// Middle expression of the GFVV definition: sum a_n y_n / sum a_n beta_n,
/// a_n = h_n exp(-j 2 pi f toa_n). Throws NumericalError when the
/// denominator vanishes.
Eigen::VectorXcd analytic_gfvv(const WavefrontSet& wf, const BeamformerWeights& w, double freq_hz);

/// Direction of the first-order pseudo-intensity vector accumulated over
/// frames k-T+1..k (all bins). Used to steer the first beamformer.
Direction pseudo_intensity_direction(const Spectrogram& spec, int k, int buffer_len);

}  // namespace ambiloc
