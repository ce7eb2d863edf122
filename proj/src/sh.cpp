#include "ambiloc/sh.hpp"

#include "ambiloc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>

namespace ambiloc {

namespace {

double wrap_azimuth(double az) {
    // Map to (-pi, pi].
    double a = std::remainder(az, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

// sqrt((2l+1) (2 - delta_m0) (l-m)! / (l+m)!)
double n3d_norm(int l, int m) {
    double ratio = 1.0;
    for (int i = l - m + 1; i <= l + m; ++i) ratio /= static_cast<double>(i);
    return std::sqrt((2.0 * l + 1.0) * (m == 0 ? 1.0 : 2.0) * ratio);
}

constexpr int kMaxOrder = 20;

// Indexed by l*(l+1)/2 + m, m >= 0.
const std::vector<double>& norm_table() {
    static const std::vector<double> table = [] {
        std::vector<double> t;
        for (int l = 0; l <= kMaxOrder; ++l)
            for (int m = 0; m <= l; ++m) t.push_back(n3d_norm(l, m));
        return t;
    }();
    return table;
}

struct DecodeGrid {
    std::vector<Direction> points;
    Eigen::MatrixXd basis;  // points x channels
};

const DecodeGrid& decode_grid(int order) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<DecodeGrid>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[order];
    if (!slot) {
        auto grid = std::make_unique<DecodeGrid>();
        grid->points = fibonacci_lattice(kDecodeGridSize);
        grid->basis.resize(kDecodeGridSize, sh_channels(order));
        Eigen::VectorXd y(sh_channels(order));
        for (int i = 0; i < kDecodeGridSize; ++i) {
            sh_eval_into(grid->points[i], order, y);
            grid->basis.row(i) = y.transpose();
        }
        slot = std::move(grid);
    }
    return *slot;
}

Direction rotate_towards(const Direction& d, const Eigen::Vector3d& tangent, double angle) {
    return Direction::from_vector(d.unit() * std::cos(angle) + tangent * std::sin(angle));
}

// Compass search on the sphere. `score` is maximized.
template <typename Score>
Direction polish(Direction best, double best_score, double initial_step, Score&& score) {
    double step = initial_step;
    while (step > 1e-7) {
        const Eigen::Vector3d& u = best.unit();
        Eigen::Vector3d axis = std::abs(u.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
        Eigen::Vector3d e1 = u.cross(axis).normalized();
        Eigen::Vector3d e2 = u.cross(e1);
        bool moved = false;
        Direction candidate_best = best;
        for (int i = 0; i < 8; ++i) {
            double phi = i * kPi / 4.0;
            Direction cand = rotate_towards(best, std::cos(phi) * e1 + std::sin(phi) * e2, step);
            double s = score(cand);
            if (s > best_score) {
                best_score = s;
                candidate_best = cand;
                moved = true;
            }
        }
        if (moved)
            best = candidate_best;
        else
            step *= 0.5;
    }
    return best;
}

}  // namespace

Direction::Direction(double azimuth, double elevation)
    : azimuth_(wrap_azimuth(azimuth)), elevation_(std::clamp(elevation, -kPi / 2, kPi / 2)) {
    unit_ = Eigen::Vector3d(std::cos(elevation_) * std::cos(azimuth_),
                            std::cos(elevation_) * std::sin(azimuth_), std::sin(elevation_));
}

Direction Direction::from_vector(const Eigen::Vector3d& v) {
    Eigen::Vector3d u = v.normalized();
    double el = std::asin(std::clamp(u.z(), -1.0, 1.0));
    double az = std::atan2(u.y(), u.x());
    Direction d(az, el);
    d.unit_ = u;
    return d;
}

double angular_distance(const Direction& a, const Direction& b) {
    // atan2 form stays accurate for tiny angles.
    return std::atan2(a.unit().cross(b.unit()).norm(), a.unit().dot(b.unit()));
}

void sh_eval_into(const Direction& dir, int order, Eigen::Ref<Eigen::VectorXd> out) {
    if (order < 0 || order > kMaxOrder) throw InputError("sh_eval: unsupported order");
    const auto& norms = norm_table();
    const double x = std::sin(dir.elevation());
    const double s = std::cos(dir.elevation());
    const double az = dir.azimuth();

    // Associated Legendre P_l^m(x) without the Condon-Shortley phase.
    double pmm = 1.0;
    for (int m = 0; m <= order; ++m) {
        if (m > 0) pmm *= (2.0 * m - 1.0) * s;
        const double cm = std::cos(m * az);
        const double sm = std::sin(m * az);
        double p_lm2 = 0.0;
        double p_lm1 = pmm;
        for (int l = m; l <= order; ++l) {
            double p;
            if (l == m) {
                p = pmm;
            } else if (l == m + 1) {
                p = x * (2.0 * m + 1.0) * pmm;
            } else {
                p = ((2.0 * l - 1.0) * x * p_lm1 - (l + m - 1.0) * p_lm2) / (l - m);
            }
            if (l > m) {
                p_lm2 = p_lm1;
                p_lm1 = p;
            }
            const double np = norms[l * (l + 1) / 2 + m] * p;
            if (m == 0) {
                out[acn(l, 0)] = np;
            } else {
                out[acn(l, m)] = np * cm;
                out[acn(l, -m)] = np * sm;
            }
        }
    }
}

ShVector sh_eval(const Direction& dir, int order) {
    ShVector y{order, Eigen::VectorXd(sh_channels(order))};
    sh_eval_into(dir, order, y.coeffs);
    return y;
}

BeamformerWeights max_directivity_beamformer(const Direction& steer, int order) {
    ShVector y = sh_eval(steer, order);
    return {order, y.coeffs / static_cast<double>(sh_channels(order)), steer};
}

double beam_response(const BeamformerWeights& w, const Direction& dir) {
    if (w.weights.size() != sh_channels(w.order))
        throw InputError("beam_response: weight vector length does not match order");
    return w.weights.dot(sh_eval(dir, w.order).coeffs);
}

std::vector<Direction> fibonacci_lattice(int count) {
    std::vector<Direction> pts;
    pts.reserve(count);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
        double z = 1.0 - (2.0 * i + 1.0) / count;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden * i;
        pts.push_back(Direction::from_vector({r * std::cos(phi), r * std::sin(phi), z}));
    }
    return pts;
}

std::optional<DecodedDirection> decode_direction(const Eigen::VectorXd& v, int order, double min_norm) {
    if (v.size() != sh_channels(order))
        throw InputError("decode_direction: vector length does not match order");
    const double vnorm = v.norm();
    if (!(vnorm >= min_norm)) return std::nullopt;

    const DecodeGrid& grid = decode_grid(order);
    Eigen::VectorXd corr = grid.basis * v;
    Eigen::Index best_i = 0;
    double best = corr.maxCoeff(&best_i);

    Eigen::VectorXd y(sh_channels(order));
    auto score = [&](const Direction& d) {
        sh_eval_into(d, order, y);
        return y.dot(v);
    };
    const double spacing = std::sqrt(4.0 * kPi / kDecodeGridSize);
    Direction dir = polish(grid.points[best_i], best, 0.5 * spacing, score);

    const double yy = static_cast<double>(sh_channels(order));
    double dot = score(dir);
    return DecodedDirection{dir, dot / yy, dot / (std::sqrt(yy) * vnorm)};
}

std::optional<DecodedDirection> decode_direction_mapped(const Eigen::VectorXd& v, int order,
                                                        const Eigen::MatrixXd& atom_map, double min_norm,
                                                        double min_atom_norm) {
    const int ch = sh_channels(order);
    if (v.size() != ch || atom_map.rows() != ch || atom_map.cols() != ch)
        throw InputError("decode_direction_mapped: dimension mismatch");
    const double vnorm = v.norm();
    if (!(vnorm >= min_norm)) return std::nullopt;

    const DecodeGrid& grid = decode_grid(order);
    const double floor_norm = min_atom_norm * std::sqrt(static_cast<double>(ch));
    Eigen::MatrixXd atoms = grid.basis * atom_map.transpose();
    Eigen::VectorXd norms = atoms.rowwise().norm();
    Eigen::VectorXd dots = atoms * v;

    Eigen::Index best_i = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < dots.size(); ++i) {
        if (norms[i] < floor_norm) continue;
        double c = dots[i] / norms[i];
        if (c > best) {
            best = c;
            best_i = i;
        }
    }
    if (best_i < 0) return std::nullopt;

    Eigen::VectorXd y(ch);
    Eigen::VectorXd a(ch);
    auto score = [&](const Direction& d) {
        sh_eval_into(d, order, y);
        a.noalias() = atom_map * y;
        double n = a.norm();
        if (n < floor_norm) return -std::numeric_limits<double>::infinity();
        return a.dot(v) / n;
    };
    const double spacing = std::sqrt(4.0 * kPi / kDecodeGridSize);
    Direction dir = polish(grid.points[best_i], best, 0.5 * spacing, score);

    sh_eval_into(dir, order, y);
    a.noalias() = atom_map * y;
    const double n2 = a.squaredNorm();
    const double dot = a.dot(v);
    return DecodedDirection{dir, dot / n2, dot / (std::sqrt(n2) * vnorm)};
}

}  // namespace ambiloc
