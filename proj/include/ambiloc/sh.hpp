#pragma once

// Real spherical harmonics (ACN channel order, N3D normalization), unit
// directions, max-directivity beamforming and direction decoding.

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace ambiloc {

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Number of ambisonic channels for order L.
constexpr int sh_channels(int order) { return (order + 1) * (order + 1); }

/// ACN index of degree l, order m.
constexpr int acn(int l, int m) { return l * l + l + m; }

/// Unit direction; azimuth in (-pi, pi], elevation in [-pi/2, pi/2].
class Direction {
public:
    Direction() : Direction(0.0, 0.0) {}
    Direction(double azimuth, double elevation);

    /// From any nonzero vector; the vector is normalized.
    static Direction from_vector(const Eigen::Vector3d& v);

    double azimuth() const { return azimuth_; }
    double elevation() const { return elevation_; }
    const Eigen::Vector3d& unit() const { return unit_; }

    Direction antipode() const { return from_vector(-unit_); }

private:
    double azimuth_;
    double elevation_;
    Eigen::Vector3d unit_;
};

/// Great-circle angle between two directions, radians.
double angular_distance(const Direction& a, const Direction& b);

/// Real SH coefficient vector up to order L, ACN/N3D.
struct ShVector {
    int order = 0;
    Eigen::VectorXd coeffs;
};

struct BeamformerWeights {
    int order = 0;
    Eigen::VectorXd weights;
    Direction steering;
};

/// Evaluates all Y_lm(dir), l <= order. Y_00 == 1.
ShVector sh_eval(const Direction& dir, int order);

/// Writes Y_lm(dir) into `out` (size (order+1)^2) without allocating.
void sh_eval_into(const Direction& dir, int order, Eigen::Ref<Eigen::VectorXd> out);

/// weights = y(steer) / (L+1)^2 so that the response at `steer` is 1.
BeamformerWeights max_directivity_beamformer(const Direction& steer, int order);

/// <w, y(dir)>. Throws InputError on order mismatch.
double beam_response(const BeamformerWeights& w, const Direction& dir);

struct DecodedDirection {
    Direction direction;
    double gain = 0.0;
    /// Normalized correlation of the best atom with the input, in [-1, 1].
    double correlation = 0.0;
};

/// Finds the direction whose SH vector best matches `v` (matched grid search
/// on a Fibonacci lattice, then a local compass search). gain is
/// <y(dir), v> / (L+1)^2. Returns nullopt when ||v|| is below `min_norm`.
std::optional<DecodedDirection> decode_direction(const Eigen::VectorXd& v, int order,
                                                 double min_norm = 1e-9);

inline std::optional<DecodedDirection> decode_direction(const ShVector& v) {
    return decode_direction(v.coeffs, v.order);
}

/// Same search with atoms A*y(dir) instead of y(dir); gain is
/// <A y, v> / ||A y||^2. Atoms whose norm falls below `min_atom_norm` times
/// ||y|| are skipped.
std::optional<DecodedDirection> decode_direction_mapped(const Eigen::VectorXd& v, int order,
                                                        const Eigen::MatrixXd& atom_map,
                                                        double min_norm = 1e-9,
                                                        double min_atom_norm = 0.05);

/// Points of a Fibonacci lattice on the unit sphere.
std::vector<Direction> fibonacci_lattice(int count);

/// Lattice size used by decode_direction.
constexpr int kDecodeGridSize = 2562;

}  // namespace ambiloc
