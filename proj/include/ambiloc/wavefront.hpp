#pragma once

// Per-frame observations from a GTVV frame: direct-path DoA from lag 0 and
// (direction, TDoA, strength) of the strongest reflections.

#include "ambiloc/gtvv.hpp"
#include "ambiloc/sh.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace ambiloc {

struct PeakPickConfig {
    double max_delay = 0.030;        ///< seconds
    double min_rel_strength = 0.1;   ///< relative to ||v(0)||
    int max_peaks = 5;
    double harmonic_tol = 2.0;       ///< samples
    bool subsample = true;           ///< parabolic lag refinement
    int neighborhood = 2;            ///< a peak dominates +-neighborhood lags
    /// Decode reflection columns against (I - v0 w^T) y atoms, which removes
    /// the direct-path leakage carried by every first-order echo term.
    bool compensate_leakage = true;

    void validate(int fft_len, double sample_rate) const;
};

enum class EchoKind { direct, reflection };

struct EchoObservation {
    Direction u;
    double tau = 0.0;  ///< seconds relative to the direct path
    double g = 0.0;
    int frame = 0;
    EchoKind kind = EchoKind::direct;
};

struct GtvvPeak {
    double lag = 0.0;        ///< seconds, refined when enabled
    int lag_index = 0;       ///< integer lag of the local maximum
    Eigen::VectorXd column;  ///< v(t) at lag_index
    double strength = 0.0;   ///< ||v(t)||
};

/// Decodes v(t = 0). nullopt when the column norm is below 1e-9.
std::optional<EchoObservation> extract_doa(const GtvvFrame& gf);

/// Local maxima of ||v(t)|| over (0, max_delay], thresholded, with p >= 2
/// harmonic ghosts of stronger peaks removed; strongest first.
std::vector<GtvvPeak> pick_reflection_peaks(const GtvvFrame& gf, const PeakPickConfig& cfg);

struct ObservationBatch {
    std::vector<EchoObservation> observations;  ///< strongest first
    int undecodable = 0;
};

/// Plain decode of each peak column.
ObservationBatch peaks_to_observations(const std::vector<GtvvPeak>& peaks, int frame, int order);

/// Decode using the frame's lag-0 column and beamformer when
/// cfg.compensate_leakage is set.
ObservationBatch peaks_to_observations(const std::vector<GtvvPeak>& peaks, const GtvvFrame& gf,
                                       const PeakPickConfig& cfg);

/// I - v0 w^T / (w^T v0), mapping y_n to the first-order echo column shape.
Eigen::MatrixXd leakage_map(const GtvvFrame& gf);

}  // namespace ambiloc
