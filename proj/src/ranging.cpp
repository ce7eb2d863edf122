#include "ambiloc/ranging.hpp"

#include "ambiloc/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

namespace ambiloc {

namespace {

constexpr double kVacuous = 1e-14;
constexpr double kSignBand = 1e-14;  // s^2; residuals inside count as zero for the absolute loss

struct Evaluator {
    const std::vector<ConstraintRow>* rows;
    int K;
    Loss loss;
    double lambda;
    double delta;
    double band;

    double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
        double f = 0.0;
        if (grad) grad->setZero(K);
        for (const ConstraintRow& row : *rows) {
            const RowCoefficients& c = row.coeffs;
            const double xa = x[row.a];
            const double xb = x[row.b];
            const double w = row.psi * c.evaluate(xa, xb);
            double dw = 0.0;  // d loss / d w
            switch (loss) {
            case Loss::squares:
                f += w * w;
                dw = 2.0 * w;
                break;
            case Loss::absolute:
                f += std::abs(w);
                dw = std::abs(w) < band ? 0.0 : (w > 0.0 ? 1.0 : -1.0);
                break;
            case Loss::huber:
                if (std::abs(w) <= delta) {
                    f += w * w;
                    dw = 2.0 * w;
                } else {
                    f += 2.0 * delta * std::abs(w) - delta * delta;
                    dw = w > 0.0 ? 2.0 * delta : -2.0 * delta;
                }
                break;
            }
            if (grad && dw != 0.0) {
                const double s = dw * row.psi;
                (*grad)[row.a] += s * (c.lin_a + 2.0 * c.sq_a * xa + c.cross * xb);
                (*grad)[row.b] += s * (c.lin_b + 2.0 * c.sq_b * xb + c.cross * xa);
            }
        }
        if (lambda > 0.0) {
            for (int i = 0; i + 1 < K; ++i) {
                const double d = x[i + 1] - x[i];
                f += lambda * d * d;
                if (grad) {
                    (*grad)[i] -= 2.0 * lambda * d;
                    (*grad)[i + 1] += 2.0 * lambda * d;
                }
            }
        }
        return f;
    }
};

// Rows rescaled to tau = S x and divided by S^2, so that unknowns are O(1).
std::vector<ConstraintRow> normalized_rows(const std::vector<ConstraintRow>& rows, double S) {
    std::vector<ConstraintRow> out = rows;
    for (ConstraintRow& r : out) {
        r.coeffs.lin_a /= S;
        r.coeffs.lin_b /= S;
        r.coeffs.kappa /= S * S;
    }
    return out;
}

Eigen::VectorXd project(Eigen::VectorXd x, double lo, double hi) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo, hi);
    return x;
}

struct RunResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Projected gradient with spectral step sizes and a non-monotone
// backtracking test against the worst of the last few objective values.
RunResult projected_gradient(const Evaluator& eval, Eigen::VectorXd x, double lo, double hi, int max_iters,
                             double tol) {
    constexpr int kWindow = 10;
    constexpr int kMaxBacktracks = 40;
    const bool smooth = eval.loss != Loss::absolute;
    x = project(std::move(x), lo, hi);
    Eigen::VectorXd g(x.size());
    double f = eval(x, &g);
    if (!std::isfinite(f)) throw NumericalError("solve_toa: non-finite objective");

    RunResult best{x, f, 0, false};

    // Initial step from a local curvature probe.
    double step = 1.0;
    {
        const double gn = g.norm();
        if (gn > 0.0) {
            const Eigen::VectorXd dx = -1e-4 * (hi - lo) * g / gn;
            Eigen::VectorXd g1(x.size());
            eval(x + dx, &g1);
            const double dg = (g1 - g).norm();
            step = dg > 0.0 ? 2.0 * dx.norm() / dg : 1.0;
        }
    }

    std::deque<double> history{f};
    Eigen::VectorXd g_new(x.size());
    int it = 0;
    for (; it < max_iters; ++it) {
        const double f_ref = *std::max_element(history.begin(), history.end());
        Eigen::VectorXd x_new, d;
        double f_new = 0.0;
        bool accepted = false;
        for (int bt = 0; bt < kMaxBacktracks; ++bt) {
            x_new = project(x - step * g, lo, hi);
            d = x_new - x;
            f_new = eval(x_new, &g_new);
            // The quadratic upper model is meaningless across the kinks of
            // the absolute loss; there a plain non-monotone decrease is used.
            const double bound = smooth ? f_ref + g.dot(d) + d.squaredNorm() / (2.0 * step) + 1e-16 * std::abs(f_ref)
                                        : f_ref - 1e-4 * d.squaredNorm() / step;
            if (std::isfinite(f_new) && f_new <= bound && (smooth || d.squaredNorm() > 0.0)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!std::isfinite(f_new)) throw NumericalError("solve_toa: non-finite objective");
        if (!accepted) {
            best.converged = true;
            break;
        }

        const double move = d.lpNorm<Eigen::Infinity>();
        const Eigen::VectorXd y = g_new - g;
        x = x_new;
        g = g_new;
        f = f_new;
        if (f < best.f) {
            best.x = x;
            best.f = f;
        }
        history.push_back(f);
        if (history.size() > kWindow) history.pop_front();
        if (move < tol) {
            best.converged = true;
            ++it;
            break;
        }

        // Adaptive spectral step: prefer the minimal-residual BB step when
        // it is not much shorter than the steepest-descent BB step.
        const double ss = d.squaredNorm();
        const double sy = d.dot(y);
        const double yy = y.squaredNorm();
        double next = 1.5 * step;
        if (sy > 0.0 && yy > 0.0) {
            const double ts = ss / sy;
            const double tm = sy / yy;
            next = (2.0 * tm > ts) ? tm : ts - 0.5 * tm;
        }
        if (!(next > 0.0) || !std::isfinite(next)) next = 1.5 * step;
        step = next;
    }
    best.iterations = it;
    return best;
}

}  // namespace

bool RowCoefficients::vacuous() const {
    return std::abs(lin_a) < kVacuous && std::abs(lin_b) < kVacuous && std::abs(sq_a) < kVacuous &&
           std::abs(sq_b) < kVacuous && std::abs(cross) < kVacuous;
}

RowCoefficients dp_row(const Direction& src_k, const Direction& src_k2, const EchoSample& echo_k,
                       const EchoSample& echo_k2) {
    const double xi0 = src_k.unit().dot(src_k2.unit());
    const double xin = echo_k.u.unit().dot(echo_k2.u.unit());
    const double t1 = echo_k.tau;
    const double t2 = echo_k2.tau;
    RowCoefficients r;
    r.lin_a = 2.0 * (t1 - xin * t2);
    r.lin_b = 2.0 * (t2 - xin * t1);
    r.cross = 2.0 * (xi0 - xin);
    r.kappa = t1 * t1 + t2 * t2 - 2.0 * t1 * t2 * xin;
    return r;
}

RowCoefficients hv_row(const Direction& src_k, const Direction& src_k2, const EchoSample& echo_k,
                       const EchoSample& echo_k2) {
    const double z0 = src_k.unit().z();
    const double z0b = src_k2.unit().z();
    const double zn = echo_k.u.unit().z();
    const double znb = echo_k2.u.unit().z();
    const double gap = echo_k.tau * zn - echo_k2.tau * znb;
    RowCoefficients r;
    r.lin_a = 2.0 * zn * gap;
    r.lin_b = -2.0 * znb * gap;
    r.sq_a = zn * zn - z0 * z0;
    r.sq_b = znb * znb - z0b * z0b;
    r.cross = 2.0 * (z0 * z0b - zn * znb);
    r.kappa = gap * gap;
    return r;
}

Eigen::VectorXd features(const Eigen::VectorXd& tau) {
    const int K = static_cast<int>(tau.size());
    Eigen::VectorXd f(feature_dim(K));
    f.head(K) = tau;
    int idx = K;
    for (int i = 0; i < K; ++i)
        for (int j = i; j < K; ++j) f[idx++] = tau[i] * tau[j];
    return f;
}

Eigen::MatrixXd features_jacobian(const Eigen::VectorXd& tau) {
    const int K = static_cast<int>(tau.size());
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(feature_dim(K), K);
    J.topRows(K).setIdentity();
    int idx = K;
    for (int i = 0; i < K; ++i)
        for (int j = i; j < K; ++j, ++idx) {
            if (i == j) {
                J(idx, i) = 2.0 * tau[i];
            } else {
                J(idx, i) = tau[j];
                J(idx, j) = tau[i];
            }
        }
    return J;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> ConstraintSystem::matrix() const {
    const int K = unknowns();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(rows.size() * 5);
    for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
        const ConstraintRow& row = rows[r];
        const RowCoefficients& c = row.coeffs;
        const int lo = std::min(row.a, row.b);
        const int hi = std::max(row.a, row.b);
        trip.emplace_back(r, row.a, c.lin_a);
        trip.emplace_back(r, row.b, c.lin_b);
        trip.emplace_back(r, feature_index(K, row.a, row.a), c.sq_a);
        trip.emplace_back(r, feature_index(K, row.b, row.b), c.sq_b);
        trip.emplace_back(r, feature_index(K, lo, hi), c.cross);
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> M(static_cast<Eigen::Index>(rows.size()), feature_dim(K));
    M.setFromTriplets(trip.begin(), trip.end());
    M.prune(0.0);
    return M;
}

Eigen::VectorXd ConstraintSystem::offsets() const {
    Eigen::VectorXd q(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) q[r] = rows[r].coeffs.kappa;
    return q;
}

Eigen::VectorXd ConstraintSystem::weights() const {
    Eigen::VectorXd psi(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) psi[r] = rows[r].psi;
    return psi;
}

Eigen::VectorXd ConstraintSystem::residual(const Eigen::VectorXd& tau) const {
    if (tau.size() != unknowns()) throw InputError("residual: tau length mismatch");
    Eigen::VectorXd r(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) r[i] = rows[i].coeffs.evaluate(tau[rows[i].a], tau[rows[i].b]);
    return r;
}

int ConstraintSystem::uncovered() const {
    std::vector<char> hit(frames.size(), 0);
    for (const ConstraintRow& r : rows) hit[r.a] = hit[r.b] = 1;
    return static_cast<int>(std::count(hit.begin(), hit.end(), 0));
}

void AssemblyConfig::validate() const {
    if (!use_dp && !use_hv) throw InputError("assemble: no hypothesis enabled");
    if (stride < 1) throw InputError("assemble: stride must be >= 1");
    if (!all_pairs && pair_multiples.empty()) throw InputError("assemble: empty pair_multiples");
    for (int m : pair_multiples)
        if (m < 1) throw InputError("assemble: pair multiples must be >= 1");
    if (!(lb > 0.0 && lb < ub)) throw InputError("assemble: bounds must satisfy 0 < lb < ub");
}

ConstraintSystem assemble(const std::vector<EchoSeries>& series, const std::vector<int>& frames,
                          const AssemblyConfig& cfg) {
    cfg.validate();
    if (frames.size() < 2) throw InputError("assemble: need at least two frames");
    if (!std::is_sorted(frames.begin(), frames.end()) ||
        std::adjacent_find(frames.begin(), frames.end()) != frames.end())
        throw InputError("assemble: frames must be strictly increasing");

    ConstraintSystem sys;
    sys.frames = frames;
    sys.lb = cfg.lb;
    sys.ub = cfg.ub;
    auto unknown_of = [&](int frame) {
        auto it = std::lower_bound(frames.begin(), frames.end(), frame);
        return (it != frames.end() && *it == frame) ? static_cast<int>(it - frames.begin()) : -1;
    };

    auto add_pair = [&](const EchoSeries& s, int echo, std::size_t i, std::size_t j) {
        const Direction& u0a = s.u0[i];
        const Direction& u0b = s.u0[j];
        const EchoSample ea{s.un[i], s.tau[i]};
        const EchoSample eb{s.un[j], s.tau[j]};
        const double psi = cfg.weight_by_strength ? std::min(s.g[i], s.g[j]) : 1.0;
        const int a = unknown_of(s.frames[i]);
        const int b = unknown_of(s.frames[j]);
        if (cfg.use_dp) {
            const RowCoefficients c = dp_row(u0a, u0b, ea, eb);
            if (!c.vacuous()) sys.rows.push_back({Hypothesis::dp, echo, a, b, c, psi});
        }
        if (cfg.use_hv) {
            const RowCoefficients c = hv_row(u0a, u0b, ea, eb);
            if (!c.vacuous()) sys.rows.push_back({Hypothesis::hv, echo, a, b, c, psi});
        }
    };

    for (int n = 0; n < static_cast<int>(series.size()); ++n) {
        const EchoSeries& s = series[n];
        if (s.u0.size() != s.size() || s.un.size() != s.size() || s.tau.size() != s.size() || s.g.size() != s.size())
            throw InputError("assemble: inconsistent echo series");
        // Samples whose frame is an unknown.
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (unknown_of(s.frames[i]) >= 0) idx.push_back(i);

        if (cfg.all_pairs) {
            for (std::size_t p = 0; p < idx.size(); ++p)
                for (std::size_t q = p + 1; q < idx.size(); ++q) add_pair(s, s.track_id, idx[p], idx[q]);
            continue;
        }
        const int window = cfg.stride / 2;
        for (std::size_t p = 0; p < idx.size(); ++p) {
            const int k = s.frames[idx[p]];
            int last_used = -1;
            for (int m : cfg.pair_multiples) {
                const int target = k + m * cfg.stride;
                auto it = std::lower_bound(idx.begin() + p + 1, idx.end(), target,
                                           [&](std::size_t i, int f) { return s.frames[i] < f; });
                if (it == idx.end() || s.frames[*it] > target + window) continue;
                if (static_cast<int>(*it) == last_used) continue;
                last_used = static_cast<int>(*it);
                add_pair(s, s.track_id, idx[p], *it);
            }
        }
    }
    if (sys.rows.empty()) throw NumericalError("assemble: constraint system is empty");
    return sys;
}

ConstraintSystem assemble(const std::vector<EchoSeries>& series, const AssemblyConfig& cfg) {
    std::vector<int> frames;
    for (const EchoSeries& s : series) frames.insert(frames.end(), s.frames.begin(), s.frames.end());
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    return assemble(series, frames, cfg);
}

double default_lambda(Loss loss) {
    switch (loss) {
    case Loss::absolute: return 100.0;
    case Loss::squares:
    case Loss::huber: return 1e-5;
    }
    return 0.0;
}

void SolverConfig::validate() const {
    if (!(lambda >= 0.0)) throw InputError("solver: lambda must be non-negative");
    if (!(huber_delta > 0.0)) throw InputError("solver: huber_delta must be positive");
    if (max_iters < 1) throw InputError("solver: max_iters must be >= 1");
    if (!(tol > 0.0)) throw InputError("solver: tol must be positive");
    if (restarts < 0) throw InputError("solver: restarts must be >= 0");
}

double objective(const ConstraintSystem& sys, const Eigen::VectorXd& tau, const SolverConfig& cfg,
                 Eigen::VectorXd* grad) {
    if (tau.size() != sys.unknowns()) throw InputError("objective: tau length mismatch");
    const Evaluator eval{&sys.rows, sys.unknowns(), cfg.loss, cfg.lambda, cfg.huber_delta, kSignBand};
    return eval(tau, grad);
}

ToaSolution solve_toa(const ConstraintSystem& sys, const SolverConfig& cfg) {
    cfg.validate();
    if (sys.empty()) throw NumericalError("solve_toa: constraint system is empty");
    if (!(sys.lb > 0.0 && sys.lb < sys.ub)) throw InputError("solve_toa: bounds must satisfy 0 < lb < ub");
    const int K = sys.unknowns();

    // Work in x = tau / ub. Every loss is homogeneous in the residual, so the
    // rescaled objective has the same minimizers.
    const double S = sys.ub;
    const std::vector<ConstraintRow> rows = normalized_rows(sys.rows, S);
    const double lo = sys.lb / S;
    const double hi = 1.0;
    auto make_eval = [&](Loss loss) {
        // squares and huber scale as S^4, absolute as S^2; the regularizer as S^2.
        const double lam = loss == Loss::absolute ? cfg.lambda : cfg.lambda / (S * S);
        return Evaluator{&rows, K, loss, lam, cfg.huber_delta / (S * S), kSignBand / (S * S)};
    };

    std::vector<Eigen::VectorXd> starts;
    starts.push_back(Eigen::VectorXd::Constant(K, 0.5 * (lo + hi)));
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(lo, hi);
    for (int r = 0; r < cfg.restarts; ++r) {
        Eigen::VectorXd x(K);
        for (int i = 0; i < K; ++i) x[i] = uni(rng);
        starts.push_back(std::move(x));
    }

    const bool staged = cfg.warm_start && cfg.loss != Loss::squares;
    Evaluator first = make_eval(staged ? Loss::squares : cfg.loss);
    if (staged) first.lambda = 0.0;
    RunResult best;
    best.f = std::numeric_limits<double>::infinity();
    int total_iters = 0;
    for (const Eigen::VectorXd& x0 : starts) {
        RunResult r = projected_gradient(first, x0, lo, hi, cfg.max_iters, cfg.tol);
        total_iters += r.iterations;
        if (r.f < best.f) best = std::move(r);
    }
    if (staged) {
        RunResult r = projected_gradient(make_eval(cfg.loss), best.x, lo, hi, cfg.max_iters, cfg.tol);
        total_iters += r.iterations;
        best = std::move(r);
    }

    ToaSolution out;
    out.tau = best.x * S;
    out.diag.objective = objective(sys, out.tau, cfg);
    out.diag.residual_norm = sys.residual(out.tau).norm();
    out.diag.iterations = total_iters;
    out.diag.converged = best.converged;
    out.diag.rank_deficient = static_cast<int>(sys.rows.size()) < K || sys.uncovered() > 0;
    out.diag.starts = static_cast<int>(starts.size());
    if (!std::isfinite(out.diag.objective)) throw NumericalError("solve_toa: non-finite objective");
    return out;
}

SourcePositions toa_to_positions(const Eigen::VectorXd& tau, const std::vector<Direction>& doa, double c) {
    if (static_cast<std::size_t>(tau.size()) != doa.size()) throw InputError("toa_to_positions: length mismatch");
    SourcePositions out;
    out.positions.reserve(doa.size());
    out.ranges.reserve(doa.size());
    for (std::size_t k = 0; k < doa.size(); ++k) {
        out.ranges.push_back(c * tau[k]);
        out.positions.push_back(c * tau[k] * doa[k].unit());
    }
    return out;
}

}  // namespace ambiloc
