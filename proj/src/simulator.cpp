#include "ambiloc/simulator.hpp"

#include "ambiloc/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace ambiloc {

namespace {

constexpr int kSincHalf = 8;  // 16 taps

double sinc_tap(double x) {
    if (std::abs(x) >= kSincHalf) return 0.0;
    const double window = 0.5 * (1.0 + std::cos(kPi * x / kSincHalf));
    if (x == 0.0) return 1.0;
    return std::sin(kPi * x) / (kPi * x) * window;
}

// Adds gain * y * s(t - delay) for t in [t0, t1).
void add_delayed(MultichannelSignal& out, std::span<const double> s, const Eigen::VectorXd& gain_y, double delay,
                 long t0, long t1) {
    const long n = static_cast<long>(s.size());
    const double shift = -delay;
    const long base = static_cast<long>(std::floor(shift));
    const double mu = shift - base;
    double taps[2 * kSincHalf];
    for (int i = 0; i < 2 * kSincHalf; ++i) taps[i] = sinc_tap((i - kSincHalf + 1) - mu);

    const int C = static_cast<int>(out.rows());
    for (long t = t0; t < t1; ++t) {
        const long n0 = t + base;
        double v = 0.0;
        for (int i = 0; i < 2 * kSincHalf; ++i) {
            const long idx = n0 + i - kSincHalf + 1;
            if (idx >= 0 && idx < n) v += s[idx] * taps[i];
        }
        if (v == 0.0) continue;
        for (int ch = 0; ch < C; ++ch) out(ch, t) += gain_y[ch] * v;
    }
}

Eigen::Vector3d reflect(const Eigen::Vector3d& p, const Panel& panel) {
    const Eigen::Vector3d n = panel.normal();
    return p - 2.0 * (p - panel.origin).dot(n) * n;
}

double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const Eigen::Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (a + t * ab - p).norm();
}

}  // namespace

bool Panel::contains(const Eigen::Vector3d& p, double tol) const {
    const Eigen::Vector3d d = p - origin;
    const double s = d.dot(edge_u) / edge_u.squaredNorm();
    const double t = d.dot(edge_v) / edge_v.squaredNorm();
    return s >= -tol && s <= 1.0 + tol && t >= -tol && t <= 1.0 + tol;
}

Trajectory::Trajectory(std::vector<Waypoint> points) : points_(std::move(points)) {
    if (points_.empty()) throw InputError("Trajectory: no waypoints");
    for (std::size_t i = 1; i < points_.size(); ++i)
        if (!(points_[i].time > points_[i - 1].time)) throw InputError("Trajectory: waypoint times must increase");
}

Trajectory Trajectory::stationary(const Eigen::Vector3d& p, double duration) {
    return Trajectory({{0.0, p}, {duration, p}});
}

Eigen::Vector3d Trajectory::position(double t) const {
    if (points_.empty()) throw InputError("Trajectory: empty");
    if (t <= points_.front().time) return points_.front().position;
    if (t >= points_.back().time) return points_.back().position;
    auto it = std::upper_bound(points_.begin(), points_.end(), t,
                               [](double v, const Waypoint& w) { return v < w.time; });
    const Waypoint& b = *it;
    const Waypoint& a = *(it - 1);
    const double u = (t - a.time) / (b.time - a.time);
    return a.position + u * (b.position - a.position);
}

void Scene::validate() const {
    if (trajectory.waypoints().empty()) throw InputError("scene: empty trajectory");
    if (!(c > 0.0) || !(fs > 0.0)) throw InputError("scene: c and fs must be positive");
    if (max_order < 0) throw InputError("scene: max_order must be non-negative");
    const auto& wps = trajectory.waypoints();
    for (std::size_t i = 0; i < wps.size(); ++i) {
        const Eigen::Vector3d& a = wps[i].position;
        const Eigen::Vector3d& b = wps[std::min(i + 1, wps.size() - 1)].position;
        if (point_segment_distance(mic, a, b) < 0.1) throw InputError("scene: source path passes within 0.1 m of the mic");
    }
    if (const auto* box = std::get_if<Shoebox>(&geometry)) {
        auto inside = [&](const Eigen::Vector3d& p, double margin) {
            for (int ax = 0; ax < 3; ++ax)
                if (p[ax] < margin || p[ax] > box->extent[ax] - margin) return false;
            return true;
        };
        if (!inside(mic, 0.0)) throw InputError("scene: mic outside the room");
        // Distance to a plane is linear along a segment, so waypoints suffice.
        for (const Waypoint& w : wps)
            if (!inside(w.position, 0.1)) throw InputError("scene: source closer than 0.1 m to a wall");
        for (double a : box->absorption)
            if (!(a >= 0.0 && a <= 1.0)) throw InputError("scene: absorption must be in [0, 1]");
    } else {
        for (const Panel& p : std::get<std::vector<Panel>>(geometry)) {
            if (!(p.absorption >= 0.0 && p.absorption <= 1.0)) throw InputError("scene: absorption must be in [0, 1]");
            if (p.edge_u.cross(p.edge_v).norm() == 0.0) throw InputError("scene: degenerate panel");
        }
    }
}

std::vector<ImageSource> image_sources(const Scene& scene, const Eigen::Vector3d& src) {
    std::vector<ImageSource> out;
    ImageSource direct;
    direct.position = src;
    direct.path = {src};
    direct.gain = 1.0 / (src - scene.mic).norm();
    direct.label = "direct";
    out.push_back(direct);
    const int N = scene.max_order;

    if (const auto* box = std::get_if<Shoebox>(&scene.geometry)) {
        std::array<double, 6> refl;
        for (int i = 0; i < 6; ++i) refl[i] = std::sqrt(1.0 - box->absorption[i]);
        for (int nx = -N; nx <= N; ++nx)
            for (int qx = 0; qx <= 1; ++qx)
                for (int ny = -N; ny <= N; ++ny)
                    for (int qy = 0; qy <= 1; ++qy)
                        for (int nz = -N; nz <= N; ++nz)
                            for (int qz = 0; qz <= 1; ++qz) {
                                const int n[3] = {nx, ny, nz};
                                const int q[3] = {qx, qy, qz};
                                int order = 0;
                                int hits[6];
                                for (int ax = 0; ax < 3; ++ax) {
                                    hits[2 * ax] = std::abs(n[ax] - q[ax]);
                                    hits[2 * ax + 1] = std::abs(n[ax]);
                                    order += hits[2 * ax] + hits[2 * ax + 1];
                                }
                                if (order == 0 || order > N) continue;
                                ImageSource img;
                                double gain = 1.0;
                                for (int ax = 0; ax < 3; ++ax)
                                    img.position[ax] = 2.0 * n[ax] * box->extent[ax] + (1 - 2 * q[ax]) * src[ax];
                                for (int wall = 0; wall < 6; ++wall) {
                                    gain *= std::pow(refl[wall], hits[wall]);
                                    for (int h = 0; h < hits[wall]; ++h) img.surfaces.push_back(wall);
                                }
                                img.order = order;
                                img.path = {src, img.position};
                                img.gain = gain / (img.position - scene.mic).norm();
                                std::ostringstream label;
                                label << "box(" << nx << ',' << qx << ',' << ny << ',' << qy << ',' << nz << ',' << qz << ')';
                                img.label = label.str();
                                out.push_back(std::move(img));
                            }
        return out;
    }

    const auto& panels = std::get<std::vector<Panel>>(scene.geometry);
    struct Partial {
        Eigen::Vector3d position;
        std::vector<int> surfaces;
        std::vector<Eigen::Vector3d> path;
        double refl;
    };
    std::vector<Partial> frontier{{src, {}, {src}, 1.0}};
    for (int order = 1; order <= N; ++order) {
        std::vector<Partial> next;
        for (const Partial& parent : frontier) {
            for (int j = 0; j < static_cast<int>(panels.size()); ++j) {
                if (!parent.surfaces.empty() && parent.surfaces.back() == j) continue;
                Partial child = parent;
                child.position = reflect(parent.position, panels[j]);
                child.surfaces.push_back(j);
                child.path.push_back(child.position);
                child.refl *= std::sqrt(1.0 - panels[j].absorption);
                next.push_back(child);

                ImageSource img;
                img.position = child.position;
                img.order = order;
                img.surfaces = child.surfaces;
                img.path = child.path;
                img.gain = child.refl / (child.position - scene.mic).norm();
                std::ostringstream label;
                label << "panel(";
                for (std::size_t i = 0; i < child.surfaces.size(); ++i) label << (i ? "," : "") << child.surfaces[i];
                label << ')';
                img.label = label.str();
                img.visible = visibility(img, scene.mic, panels);
                out.push_back(std::move(img));
            }
        }
        frontier = std::move(next);
    }
    return out;
}

bool visibility(const ImageSource& image, const Eigen::Vector3d& mic, const std::vector<Panel>& panels) {
    if (image.surfaces.empty()) return true;
    if (image.path.size() != image.surfaces.size() + 1) throw InputError("visibility: inconsistent image path");
    Eigen::Vector3d target = mic;
    for (int i = static_cast<int>(image.surfaces.size()) - 1; i >= 0; --i) {
        const Panel& panel = panels.at(image.surfaces[i]);
        const Eigen::Vector3d& from = image.path[i + 1];
        const Eigen::Vector3d n = panel.normal();
        const double d0 = (from - panel.origin).dot(n);
        const double d1 = (target - panel.origin).dot(n);
        // The segment must cross the plane strictly between its ends.
        if (d0 * d1 >= 0.0) return false;
        const double lambda = d0 / (d0 - d1);
        const Eigen::Vector3d hit = from + lambda * (target - from);
        if (!panel.contains(hit)) return false;
        target = hit;
    }
    return true;
}

MultichannelSignal render_hoa(const Scene& scene, std::span<const double> source, const RenderOptions& opts) {
    scene.validate();
    if (opts.segment_len < 1) throw InputError("render_hoa: segment_len must be positive");
    const long n = static_cast<long>(source.size());
    const double duration = n / scene.fs;
    if (duration > scene.trajectory.end_time() + 1.0 / scene.fs)
        throw InputError("render_hoa: trajectory shorter than the source signal");

    const int C = sh_channels(opts.order);
    MultichannelSignal out = MultichannelSignal::Zero(C, n);
    for (long t0 = 0; t0 < n; t0 += opts.segment_len) {
        const long t1 = std::min(n, t0 + opts.segment_len);
        const double tc = 0.5 * (t0 + t1) / scene.fs;
        const Eigen::Vector3d src = scene.trajectory.position(tc);
        for (const ImageSource& img : image_sources(scene, src)) {
            if (!img.visible) continue;
            const Eigen::Vector3d rel = img.position - scene.mic;
            const double delay = rel.norm() / scene.c * scene.fs;
            Eigen::VectorXd gy = img.gain * sh_eval(Direction::from_vector(rel), opts.order).coeffs;
            add_delayed(out, source, gy, delay, t0, t1);
        }
    }

    if (opts.snr_db) {
        const double p_signal = out.row(0).squaredNorm() / std::max<long>(1, n);
        const double sigma = std::sqrt(p_signal / std::pow(10.0, *opts.snr_db / 10.0));
        std::mt19937_64 rng(opts.noise_seed);
        std::normal_distribution<double> gauss(0.0, sigma);
        for (int ch = 0; ch < C; ++ch)
            for (long t = 0; t < n; ++t) out(ch, t) += gauss(rng);
    }
    return out;
}

MultichannelSignal render_wavefronts(const WavefrontSet& wf, std::span<const double> source, int order, double fs) {
    const long n = static_cast<long>(source.size());
    MultichannelSignal out = MultichannelSignal::Zero(sh_channels(order), n);
    for (const Wavefront& w : wf) {
        Eigen::VectorXd gy = w.gain * sh_eval(w.direction, order).coeffs;
        add_delayed(out, source, gy, w.toa * fs, 0, n);
    }
    return out;
}

std::vector<TruthRecord> ground_truth(const Scene& scene, std::span<const double> times) {
    std::vector<TruthRecord> records;
    records.reserve(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        TruthRecord r;
        r.frame = static_cast<int>(k);
        r.time = times[k];
        r.source = scene.trajectory.position(times[k]);
        const Eigen::Vector3d rel = r.source - scene.mic;
        r.range = rel.norm();
        r.toa = r.range / scene.c;
        r.doa = Direction::from_vector(rel);
        const auto images = image_sources(scene, r.source);
        const double h0 = images.front().gain;
        for (std::size_t i = 1; i < images.size(); ++i) {
            const ImageSource& img = images[i];
            const Eigen::Vector3d irel = img.position - scene.mic;
            r.images.push_back({img.label, img.order, Direction::from_vector(irel), irel.norm() / scene.c - r.toa,
                                img.gain / h0, img.visible, img.position});
        }
        records.push_back(std::move(r));
    }
    return records;
}

int frame_count_for(long samples, const StftConfig& cfg) {
    if (samples < cfg.frame_len) return 0;
    return static_cast<int>((samples - cfg.frame_len) / cfg.hop + 1);
}

std::vector<TruthRecord> ground_truth(const Scene& scene, const StftConfig& cfg, int frame_count) {
    std::vector<double> times(frame_count);
    for (int k = 0; k < frame_count; ++k)
        times[k] = (static_cast<double>(k) * cfg.hop + 0.5 * cfg.frame_len) / cfg.sample_rate;
    return ground_truth(scene, times);
}

std::vector<double> speech_like_signal(std::size_t samples, double fs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> s(samples, 0.0);

    // Gently tilted noise: one-pole low-pass blended with white.
    double lp = 0.0;
    std::vector<double> noise(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const double x = gauss(rng);
        lp = 0.9 * lp + 0.1 * x;
        noise[i] = 0.5 * x + 2.0 * lp;
    }

    const double ramp = 0.01 * fs;
    std::size_t t = static_cast<std::size_t>(0.02 * fs);
    while (t < samples) {
        const std::size_t burst = static_cast<std::size_t>((0.15 + 0.25 * uni(rng)) * fs);
        const std::size_t pause = static_cast<std::size_t>((0.05 + 0.15 * uni(rng)) * fs);
        const double level = 0.3 + 0.7 * uni(rng);
        for (std::size_t i = 0; i < burst && t + i < samples; ++i) {
            double env = 1.0;
            if (i < ramp) env = 0.5 * (1.0 - std::cos(kPi * i / ramp));
            if (burst - i < ramp) env = std::min(env, 0.5 * (1.0 - std::cos(kPi * (burst - i) / ramp)));
            s[t + i] = level * env * noise[t + i];
        }
        t += burst + pause;
    }
    const double peak = std::max(1e-12, *std::max_element(s.begin(), s.end(), [](double a, double b) {
        return std::abs(a) < std::abs(b);
    }));
    for (double& v : s) v *= 0.5 / std::abs(peak);
    return s;
}

std::vector<double> block_bursts(std::size_t samples, int block, int burst_len, std::uint64_t seed) {
    if (block < 1 || burst_len < 1 || burst_len > block) throw InputError("block_bursts: invalid block layout");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> s(samples, 0.0);
    for (std::size_t b = 0; b < samples; b += block) {
        if (uni(rng) < 0.25) continue;
        const double level = 0.1 + uni(rng);
        for (int i = 0; i < burst_len && b + i < samples; ++i) s[b + i] = level * gauss(rng);
    }
    return s;
}

}  // namespace ambiloc
