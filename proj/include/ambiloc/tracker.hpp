#pragma once

// Temporal association. A single-target tracker smooths the source DoA; a
// multi-target tracker follows reflections as points c*tau*u in metres, so
// echoes from similar directions separate by their delay.

#include "ambiloc/sh.hpp"
#include "ambiloc/wavefront.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <vector>

namespace ambiloc {

struct TrackerConfig {
    double c = 343.0;
    /// Acceleration variance of the scaled-vector state, (m/frame^2)^2.
    double process_noise = 1e-6;
    /// Measurement variance of a scaled observation, m^2.
    double measurement_noise = 1e-4;
    /// Euclidean gate in scaled space, metres (c * 2 samples at 16 kHz).
    double gate_radius = 343.0 * 2.0 / 16000.0;
    int confirm_hits = 3;
    int delete_misses = 5;
    int max_tracks = 32;

    /// Source DoA filter, on unit vectors.
    double source_process_noise = 1e-6;
    double source_measurement_noise = 1e-3;
    double source_gate_deg = 20.0;
    /// Consecutive gated-out observations before the source filter restarts
    /// on the new direction.
    int source_reacquire = 5;

    /// Fixed-interval (RTS) smoothing of both filters once all frames are in.
    bool smoothing = true;

    void validate() const;
};

/// c * tau * u in metres. Throws InputError for direct-path observations.
Eigen::Vector3d scaled_observation(const EchoObservation& obs, double c = 343.0);

struct SourceSample {
    int frame = 0;
    Direction u;            ///< filtered, or smoothed after SourceTrack::smooth()
    bool observed = false;  ///< false: coasted through a missing or gated observation
};

/// Kalman state before and after the measurement of one frame, kept for the
/// backward smoothing pass.
struct FilterStep {
    int frame = 0;
    int steps = 1;  ///< prediction steps since the previous FilterStep
    Eigen::Matrix<double, 6, 1> x_pred;
    Eigen::Matrix<double, 6, 6> P_pred;
    Eigen::Matrix<double, 6, 1> x;
    Eigen::Matrix<double, 6, 6> P;
};

/// Rauch-Tung-Striebel pass over a constant-velocity filter history;
/// returns the smoothed states, one per step.
std::vector<Eigen::Matrix<double, 6, 1>> rts_smooth(const std::vector<FilterStep>& steps);

class SourceTrack {
public:
    explicit SourceTrack(const TrackerConfig& cfg = {});

    /// One call per frame, in increasing frame order. nullopt = no DoA.
    void update(int frame, const std::optional<EchoObservation>& obs);

    bool initialized() const { return initialized_; }
    const std::vector<SourceSample>& samples() const { return samples_; }
    /// Smoothed DoA at `frame`, if the filter had started by then.
    std::optional<Direction> at(int frame) const;
    double position_variance() const { return P_.topLeftCorner<3, 3>().trace() / 3.0; }
    /// Replaces the filtered DoAs by fixed-interval smoothed ones. Further
    /// updates are rejected afterwards.
    void smooth();
    bool smoothed() const { return smoothed_; }

private:
    void reset(const Eigen::Vector3d& u);

    TrackerConfig cfg_;
    bool initialized_ = false;
    bool smoothed_ = false;
    int gated_run_ = 0;
    std::vector<FilterStep> steps_;
    Eigen::Matrix<double, 6, 1> x_ = Eigen::Matrix<double, 6, 1>::Zero();
    Eigen::Matrix<double, 6, 6> P_ = Eigen::Matrix<double, 6, 6>::Identity();
    std::vector<SourceSample> samples_;
};

/// Free-function form of SourceTrack::update.
SourceTrack source_update(SourceTrack st, int frame, const std::optional<EchoObservation>& obs);

enum class TrackState { tentative, confirmed, dead };

struct EchoHit {
    int frame = 0;
    Direction u;  ///< as observed
    double tau = 0.0;
    double g = 0.0;
    /// Filter (or smoother) estimate of c * tau * u at this frame.
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

struct EchoTrack {
    int id = 0;
    std::vector<EchoHit> history;
    TrackState state = TrackState::tentative;
    bool was_confirmed = false;
    int hits = 0;
    int misses = 0;
    Eigen::Matrix<double, 6, 1> x = Eigen::Matrix<double, 6, 1>::Zero();  ///< position, velocity (m, m/frame)
    Eigen::Matrix<double, 6, 6> P = Eigen::Matrix<double, 6, 6>::Identity();
    std::vector<FilterStep> steps;

    Eigen::Vector3d position() const { return x.head<3>(); }
};

/// Rewrites every hit's point with the smoothed state. Steps after the last
/// hit are dropped.
void smooth_track(EchoTrack& track);

/// Optimal assignment for a rows x cols cost matrix. Entries that are not
/// finite are forbidden. Returns, per row, the assigned column or -1.
std::vector<int> hungarian_assign(const Eigen::MatrixXd& cost);

/// Predict every live track, gate and assign this frame's observations,
/// spawn tentative tracks for the rest and age out missed tracks.
/// `next_id` supplies ids for new tracks and is advanced.
void reflections_update(std::vector<EchoTrack>& tracks, const std::vector<EchoObservation>& obs, int frame,
                        const TrackerConfig& cfg, int& next_id);

/// Replaceable multi-target association stage.
class EchoTracker {
public:
    virtual ~EchoTracker() = default;
    virtual void update(int frame, const std::vector<EchoObservation>& obs) = 0;
    /// Called once after the last frame.
    virtual void finish() {}
    virtual const std::vector<EchoTrack>& tracks() const = 0;
};

class KalmanEchoTracker : public EchoTracker {
public:
    explicit KalmanEchoTracker(const TrackerConfig& cfg = {});
    void update(int frame, const std::vector<EchoObservation>& obs) override;
    /// Smooths all tracks when cfg.smoothing is set.
    void finish() override;
    const std::vector<EchoTrack>& tracks() const override { return tracks_; }

private:
    TrackerConfig cfg_;
    std::vector<EchoTrack> tracks_;
    int next_id_ = 0;
};

/// Synchronized source/echo samples of one reflection track.
struct EchoSeries {
    int track_id = 0;
    std::vector<int> frames;
    std::vector<Direction> u0;
    std::vector<Direction> un;
    std::vector<double> tau;
    std::vector<double> g;

    std::size_t size() const { return frames.size(); }
};

/// For every track that reached confirmation, the frames where both the
/// source DoA and an associated echo exist. Gaps are not filled. Echo
/// direction and delay come from the track's point estimate, or from the raw
/// observation when `raw` is set.
std::vector<EchoSeries> confirmed_pairs(const std::vector<EchoTrack>& tracks, const SourceTrack& src,
                                        double c = 343.0, bool raw = false);

}  // namespace ambiloc
