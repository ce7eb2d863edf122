#include "ambiloc/tracker.hpp"

#include "ambiloc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ambiloc {

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

Mat6 transition() {
    Mat6 F = Mat6::Identity();
    F.topRightCorner<3, 3>().setIdentity();
    return F;
}

// Discrete white-acceleration noise for a unit step.
Mat6 process_cov(double q) {
    Mat6 Q = Mat6::Zero();
    Q.topLeftCorner<3, 3>() = 0.25 * q * Eigen::Matrix3d::Identity();
    Q.topRightCorner<3, 3>() = 0.5 * q * Eigen::Matrix3d::Identity();
    Q.bottomLeftCorner<3, 3>() = 0.5 * q * Eigen::Matrix3d::Identity();
    Q.bottomRightCorner<3, 3>() = q * Eigen::Matrix3d::Identity();
    return Q;
}

Mat36 observation() {
    Mat36 H = Mat36::Zero();
    H.leftCols<3>().setIdentity();
    return H;
}

void kalman_predict(Vec6& x, Mat6& P, double q) {
    const Mat6 F = transition();
    x = F * x;
    P = F * P * F.transpose() + process_cov(q);
}

void kalman_correct(Vec6& x, Mat6& P, const Eigen::Vector3d& z, double r) {
    const Mat36 H = observation();
    const Eigen::Matrix3d S = H * P * H.transpose() + r * Eigen::Matrix3d::Identity();
    const Eigen::Matrix<double, 6, 3> K = P * H.transpose() * S.inverse();
    x += K * (z - H * x);
    P = (Mat6::Identity() - K * H) * P;
    P = 0.5 * (P + P.transpose());
}

}  // namespace

void TrackerConfig::validate() const {
    if (!(c > 0.0)) throw InputError("tracker: c must be positive");
    if (confirm_hits < 1) throw InputError("tracker: confirm_hits must be >= 1");
    if (delete_misses < 1) throw InputError("tracker: delete_misses must be >= 1");
    if (max_tracks < 1) throw InputError("tracker: max_tracks must be >= 1");
    if (!(gate_radius > 0.0)) throw InputError("tracker: gate_radius must be positive");
    if (!(process_noise >= 0.0) || !(measurement_noise > 0.0)) throw InputError("tracker: invalid noise levels");
    if (!(source_process_noise >= 0.0) || !(source_measurement_noise > 0.0))
        throw InputError("tracker: invalid source noise levels");
    if (!(source_gate_deg > 0.0)) throw InputError("tracker: source_gate_deg must be positive");
    if (source_reacquire < 1) throw InputError("tracker: source_reacquire must be >= 1");
}

Eigen::Vector3d scaled_observation(const EchoObservation& obs, double c) {
    if (obs.kind != EchoKind::reflection) throw InputError("scaled_observation: expects a reflection");
    return c * obs.tau * obs.u.unit();
}

SourceTrack::SourceTrack(const TrackerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void SourceTrack::reset(const Eigen::Vector3d& u) {
    x_.setZero();
    x_.head<3>() = u;
    P_.setZero();
    P_.topLeftCorner<3, 3>() = cfg_.source_measurement_noise * Eigen::Matrix3d::Identity();
    P_.bottomRightCorner<3, 3>() = 1e-3 * Eigen::Matrix3d::Identity();
    initialized_ = true;
    gated_run_ = 0;
}

namespace {

FilterStep restart_step(int frame, const Vec6& x, const Mat6& P) { return {frame, 0, x, P, x, P}; }

Mat6 transition_steps(int n) {
    Mat6 F = Mat6::Identity();
    F.topRightCorner<3, 3>() = n * Eigen::Matrix3d::Identity();
    return F;
}

}  // namespace

std::vector<Vec6> rts_smooth(const std::vector<FilterStep>& steps) {
    std::vector<Vec6> xs(steps.size());
    if (steps.empty()) return xs;
    xs.back() = steps.back().x;
    for (int k = static_cast<int>(steps.size()) - 2; k >= 0; --k) {
        const FilterStep& next = steps[k + 1];
        if (next.steps == 0) {
            // The filter restarted; segments are smoothed independently.
            xs[k] = steps[k].x;
            continue;
        }
        const Mat6 F = transition_steps(next.steps);
        // C = P_k F^T P_pred^-1, with P_pred symmetric.
        const Mat6 Ct = next.P_pred.ldlt().solve(F * steps[k].P);
        xs[k] = steps[k].x + Ct.transpose() * (xs[k + 1] - next.x_pred);
    }
    return xs;
}

void SourceTrack::update(int frame, const std::optional<EchoObservation>& obs) {
    if (smoothed_) throw InputError("SourceTrack: update after smooth()");
    if (!samples_.empty() && frame <= samples_.back().frame)
        throw InputError("SourceTrack: frames must be strictly increasing");
    if (obs && obs->kind != EchoKind::direct) throw InputError("SourceTrack: expects a direct-path observation");

    if (!initialized_) {
        if (!obs) return;
        reset(obs->u.unit());
        samples_.push_back({frame, obs->u, true});
        steps_.push_back(restart_step(frame, x_, P_));
        return;
    }

    const int steps = frame - samples_.back().frame;
    for (int s = 0; s < steps; ++s) kalman_predict(x_, P_, cfg_.source_process_noise);
    const Vec6 x_pred = x_;
    const Mat6 P_pred = P_;
    bool restarted = false;
    Eigen::Vector3d predicted = x_.head<3>();
    if (predicted.norm() < 1e-9) predicted = samples_.back().u.unit();

    bool observed = false;
    if (obs) {
        const Eigen::Vector3d z = obs->u.unit();
        const double angle = std::acos(std::clamp(z.dot(predicted.normalized()), -1.0, 1.0));
        if (angle <= deg2rad(cfg_.source_gate_deg)) {
            kalman_correct(x_, P_, z, cfg_.source_measurement_noise);
            observed = true;
            gated_run_ = 0;
        } else if (++gated_run_ >= cfg_.source_reacquire) {
            reset(z);
            observed = true;
            restarted = true;
        }
    }

    // Back onto the sphere; drop the radial part of the velocity.
    const double n = x_.head<3>().norm();
    if (n > 1e-9) {
        const Eigen::Vector3d u = x_.head<3>() / n;
        x_.head<3>() = u;
        Eigen::Vector3d v = x_.tail<3>();
        x_.tail<3>() = v - v.dot(u) * u;
    } else {
        x_.head<3>() = predicted.normalized();
    }
    samples_.push_back({frame, Direction::from_vector(x_.head<3>()), observed});
    steps_.push_back(restarted ? restart_step(frame, x_, P_) : FilterStep{frame, steps, x_pred, P_pred, x_, P_});
}

void SourceTrack::smooth() {
    if (smoothed_) return;
    const std::vector<Vec6> xs = rts_smooth(steps_);
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const Eigen::Vector3d p = xs[i].head<3>();
        if (p.norm() > 1e-9) samples_[i].u = Direction::from_vector(p);
    }
    smoothed_ = true;
}

std::optional<Direction> SourceTrack::at(int frame) const {
    auto it = std::lower_bound(samples_.begin(), samples_.end(), frame,
                               [](const SourceSample& s, int f) { return s.frame < f; });
    if (it == samples_.end() || it->frame != frame) return std::nullopt;
    return it->u;
}

SourceTrack source_update(SourceTrack st, int frame, const std::optional<EchoObservation>& obs) {
    st.update(frame, obs);
    return st;
}

std::vector<int> hungarian_assign(const Eigen::MatrixXd& cost) {
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    std::vector<int> result(rows, -1);
    if (rows == 0 || cols == 0) return result;

    // Square problem; forbidden and padding cells get a cost larger than any
    // feasible total so they are only used when unavoidable.
    const int n = std::max(rows, cols);
    double finite_max = 0.0;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            if (std::isfinite(cost(i, j))) finite_max = std::max(finite_max, std::abs(cost(i, j)));
    const double big = (finite_max + 1.0) * (n + 1);
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, n, big);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            if (std::isfinite(cost(i, j))) a(i, j) = cost(i, j);

    // Potentials-based O(n^3) method, 1-based internally.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (int j = 1; j <= n; ++j) {
        const int i = p[j] - 1;
        const int col = j - 1;
        if (i < rows && col < cols && std::isfinite(cost(i, col))) result[i] = col;
    }
    return result;
}

void reflections_update(std::vector<EchoTrack>& tracks, const std::vector<EchoObservation>& obs, int frame,
                        const TrackerConfig& cfg, int& next_id) {
    cfg.validate();
    std::vector<int> live;
    for (int i = 0; i < static_cast<int>(tracks.size()); ++i) {
        EchoTrack& t = tracks[i];
        if (t.state == TrackState::dead) continue;
        if (!t.history.empty() && frame <= t.history.back().frame)
            throw InputError("reflections_update: frames must be strictly increasing");
        kalman_predict(t.x, t.P, cfg.process_noise);
        t.steps.push_back({frame, 1, t.x, t.P, t.x, t.P});
        live.push_back(i);
    }

    std::vector<Eigen::Vector3d> points;
    std::vector<int> usable;
    for (int j = 0; j < static_cast<int>(obs.size()); ++j) {
        if (obs[j].kind != EchoKind::reflection || !(obs[j].tau > 0.0)) continue;
        points.push_back(scaled_observation(obs[j], cfg.c));
        usable.push_back(j);
    }

    Eigen::MatrixXd cost(live.size(), points.size());
    for (std::size_t i = 0; i < live.size(); ++i)
        for (std::size_t j = 0; j < points.size(); ++j) {
            const double d = (tracks[live[i]].position() - points[j]).norm();
            cost(i, j) = d <= cfg.gate_radius ? d : std::numeric_limits<double>::infinity();
        }
    const std::vector<int> assignment = hungarian_assign(cost);

    std::vector<char> taken(points.size(), 0);
    for (std::size_t i = 0; i < live.size(); ++i) {
        EchoTrack& t = tracks[live[i]];
        const int j = assignment[i];
        if (j >= 0) {
            taken[j] = 1;
            const EchoObservation& o = obs[usable[j]];
            kalman_correct(t.x, t.P, points[j], cfg.measurement_noise);
            t.steps.back().x = t.x;
            t.steps.back().P = t.P;
            t.history.push_back({frame, o.u, o.tau, o.g, t.x.head<3>()});
            ++t.hits;
            t.misses = 0;
            if (t.state == TrackState::tentative && t.hits >= cfg.confirm_hits) {
                t.state = TrackState::confirmed;
                t.was_confirmed = true;
            }
        } else if (++t.misses >= cfg.delete_misses) {
            t.state = TrackState::dead;
        }
    }

    int alive = 0;
    for (const EchoTrack& t : tracks) alive += t.state != TrackState::dead;
    for (std::size_t j = 0; j < points.size(); ++j) {
        if (taken[j] || alive >= cfg.max_tracks) continue;
        const EchoObservation& o = obs[usable[j]];
        EchoTrack t;
        t.id = next_id++;
        t.x.head<3>() = points[j];
        t.P.setZero();
        t.P.topLeftCorner<3, 3>() = cfg.measurement_noise * Eigen::Matrix3d::Identity();
        t.P.bottomRightCorner<3, 3>() = std::pow(0.5 * cfg.gate_radius, 2) * Eigen::Matrix3d::Identity();
        t.history.push_back({frame, o.u, o.tau, o.g, points[j]});
        t.steps.push_back(restart_step(frame, t.x, t.P));
        t.hits = 1;
        if (t.hits >= cfg.confirm_hits) {
            t.state = TrackState::confirmed;
            t.was_confirmed = true;
        }
        tracks.push_back(std::move(t));
        ++alive;
    }
}

void smooth_track(EchoTrack& track) {
    if (track.history.empty()) return;
    const int last = track.history.back().frame;
    while (!track.steps.empty() && track.steps.back().frame > last) track.steps.pop_back();
    const std::vector<Vec6> xs = rts_smooth(track.steps);
    std::size_t s = 0;
    for (EchoHit& h : track.history) {
        while (s < track.steps.size() && track.steps[s].frame < h.frame) ++s;
        if (s < track.steps.size() && track.steps[s].frame == h.frame) h.point = xs[s].head<3>();
    }
}

KalmanEchoTracker::KalmanEchoTracker(const TrackerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void KalmanEchoTracker::finish() {
    if (!cfg_.smoothing) return;
    for (EchoTrack& t : tracks_)
        if (t.was_confirmed) smooth_track(t);
}

void KalmanEchoTracker::update(int frame, const std::vector<EchoObservation>& obs) {
    reflections_update(tracks_, obs, frame, cfg_, next_id_);
}

std::vector<EchoSeries> confirmed_pairs(const std::vector<EchoTrack>& tracks, const SourceTrack& src, double c,
                                        bool raw) {
    std::vector<EchoSeries> out;
    for (const EchoTrack& t : tracks) {
        if (!t.was_confirmed) continue;
        EchoSeries s;
        s.track_id = t.id;
        for (const EchoHit& h : t.history) {
            const auto u0 = src.at(h.frame);
            if (!u0) continue;
            s.frames.push_back(h.frame);
            s.u0.push_back(*u0);
            if (raw || h.point.norm() < 1e-9) {
                s.un.push_back(h.u);
                s.tau.push_back(h.tau);
            } else {
                s.un.push_back(Direction::from_vector(h.point));
                s.tau.push_back(h.point.norm() / c);
            }
            s.g.push_back(h.g);
        }
        if (!s.frames.empty()) out.push_back(std::move(s));
    }
    return out;
}

}  // namespace ambiloc
