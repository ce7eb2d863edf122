#pragma once

// Image-source ground-truth generator: HOA renders and exact per-frame
// geometry for moving sources in shoebox rooms or finite-panel scenes.

#include "ambiloc/gtvv.hpp"
#include "ambiloc/sh.hpp"
#include "ambiloc/stft.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ambiloc {

/// Axis-aligned room [0, extent]. Absorption order: x=0, x=Lx, y=0, y=Ly, z=0, z=Lz.
struct Shoebox {
    Eigen::Vector3d extent{6.0, 4.0, 3.0};
    std::array<double, 6> absorption{};
};

/// Finite rectangular reflector: origin + s*edge_u + t*edge_v, s, t in [0, 1].
struct Panel {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    Eigen::Vector3d edge_u = Eigen::Vector3d::UnitX();
    Eigen::Vector3d edge_v = Eigen::Vector3d::UnitY();
    double absorption = 0.0;

    Eigen::Vector3d normal() const { return edge_u.cross(edge_v).normalized(); }
    /// Point on the panel's plane lies inside the rectangle.
    bool contains(const Eigen::Vector3d& p, double tol = 1e-12) const;
};

struct Waypoint {
    double time = 0.0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Piecewise-linear source path; clamps outside its time span.
class Trajectory {
public:
    Trajectory() = default;
    explicit Trajectory(std::vector<Waypoint> points);
    static Trajectory stationary(const Eigen::Vector3d& p, double duration);

    Eigen::Vector3d position(double t) const;
    double start_time() const { return points_.front().time; }
    double end_time() const { return points_.back().time; }
    const std::vector<Waypoint>& waypoints() const { return points_; }

private:
    std::vector<Waypoint> points_;
};

struct Scene {
    std::variant<Shoebox, std::vector<Panel>> geometry = Shoebox{};
    Eigen::Vector3d mic{3.0, 2.0, 1.5};
    Trajectory trajectory;
    int max_order = 1;
    double c = 343.0;
    double fs = 16000.0;

    /// Throws InputError when the mic or path is outside the room or closer
    /// than 0.1 m to a surface or to the mic.
    void validate() const;
};

struct ImageSource {
    Eigen::Vector3d position;
    int order = 0;
    /// Reflecting surfaces in the order they are hit (walls 0..5 for a
    /// shoebox, panel indices otherwise).
    std::vector<int> surfaces;
    /// path[0] is the source, path[i] the image after i reflections.
    std::vector<Eigen::Vector3d> path;
    double gain = 0.0;  ///< product of reflection coefficients / distance to mic
    bool visible = true;
    std::string label;
};

/// All images up to scene.max_order for a source at `src`; the first entry
/// is the direct path.
std::vector<ImageSource> image_sources(const Scene& scene, const Eigen::Vector3d& src);

/// True iff the virtual path image -> mic crosses every generating panel
/// inside its rectangle, tracing reflections backwards.
bool visibility(const ImageSource& image, const Eigen::Vector3d& mic, const std::vector<Panel>& panels);

struct RenderOptions {
    int order = 4;
    /// Geometry is frozen over blocks of this many samples.
    int segment_len = 512;
    std::optional<double> snr_db;
    std::uint64_t noise_seed = 7;
};

/// HOA (ACN/N3D) render: every visible image contributes
/// h * y(dir) * s(t - delay), fractional delays via 16-tap windowed sinc.
/// Output length equals the source length.
MultichannelSignal render_hoa(const Scene& scene, std::span<const double> source, const RenderOptions& opts);

/// Static render of explicit wavefronts (toa in seconds).
MultichannelSignal render_wavefronts(const WavefrontSet& wf, std::span<const double> source, int order,
                                     double fs);

struct ImageTruth {
    std::string label;
    int order = 0;
    Direction u;
    double tdoa = 0.0;
    double gain = 0.0;  ///< relative to the direct path
    bool visible = true;
    Eigen::Vector3d position;
};

struct TruthRecord {
    int frame = 0;
    double time = 0.0;
    Eigen::Vector3d source;  ///< absolute position
    Direction doa;
    double toa = 0.0;
    double range = 0.0;
    std::vector<ImageTruth> images;  ///< reflections only
};

/// Exact geometry at the given times (frame index = position in `times`).
std::vector<TruthRecord> ground_truth(const Scene& scene, std::span<const double> times);

/// Exact geometry at STFT frame-center times.
std::vector<TruthRecord> ground_truth(const Scene& scene, const StftConfig& cfg, int frame_count);

/// Number of full STFT frames for a signal of `samples` length.
int frame_count_for(long samples, const StftConfig& cfg);

/// Low-passed noise bursts separated by pauses.
std::vector<double> speech_like_signal(std::size_t samples, double fs, std::uint64_t seed);

/// Noise bursts confined to the first `burst_len` samples of each
/// `block`-sample block (some blocks silent, random levels).
std::vector<double> block_bursts(std::size_t samples, int block, int burst_len, std::uint64_t seed);

}  // namespace ambiloc
