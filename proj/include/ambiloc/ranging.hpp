#pragma once

// Absolute time-of-arrival from tracked echoes. Each echo seen at two frames
// gives a bi-affine equation in the two unknown ToAs: rigid reflection keeps
// the source displacement length (DP), and horizontal/vertical reflectors
// also keep the length of its vertical component (HV). The stacked system
// M f(tau) + q = 0, f(tau) = [tau; triu(tau tau^T)], is solved as a
// box-constrained regression.

#include "ambiloc/sh.hpp"
#include "ambiloc/tracker.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <string>
#include <vector>

namespace ambiloc {

enum class Hypothesis { dp, hv };

struct EchoSample {
    Direction u;
    double tau = 0.0;  ///< seconds after the direct path
};

/// Coefficients of one equation in (a, b) = (tau_k, tau_k'):
/// lin_a a + lin_b b + sq_a a^2 + sq_b b^2 + cross a b + kappa.
struct RowCoefficients {
    double lin_a = 0.0;
    double lin_b = 0.0;
    double sq_a = 0.0;
    double sq_b = 0.0;
    double cross = 0.0;
    double kappa = 0.0;

    double evaluate(double a, double b) const {
        return lin_a * a + lin_b * b + sq_a * a * a + sq_b * b * b + cross * a * b + kappa;
    }
    /// All coefficients of the unknowns below 1e-14.
    bool vacuous() const;
};

RowCoefficients dp_row(const Direction& src_k, const Direction& src_k2, const EchoSample& echo_k,
                       const EchoSample& echo_k2);

/// Vertical axis is the array z axis.
RowCoefficients hv_row(const Direction& src_k, const Direction& src_k2, const EchoSample& echo_k,
                       const EchoSample& echo_k2);

struct ConstraintRow {
    Hypothesis hypothesis = Hypothesis::dp;
    int echo = 0;
    int a = 0;  ///< unknown index of frame k
    int b = 0;  ///< unknown index of frame k'
    RowCoefficients coeffs;
    double psi = 1.0;
};

/// Length of f(tau) for K unknowns.
inline int feature_dim(int K) { return K + K * (K + 1) / 2; }
/// Position of tau_i tau_j (i <= j) inside f(tau).
inline int feature_index(int K, int i, int j) { return K + i * K - i * (i - 1) / 2 + (j - i); }

Eigen::VectorXd features(const Eigen::VectorXd& tau);
Eigen::MatrixXd features_jacobian(const Eigen::VectorXd& tau);

struct ConstraintSystem {
    std::vector<int> frames;  ///< frame index of each unknown, increasing
    std::vector<ConstraintRow> rows;
    double lb = 0.5 / 343.0;
    double ub = 6.0 / 343.0;

    int unknowns() const { return static_cast<int>(frames.size()); }
    bool empty() const { return rows.empty(); }

    /// R x (K + K(K+1)/2) coefficient matrix.
    Eigen::SparseMatrix<double, Eigen::RowMajor> matrix() const;
    Eigen::VectorXd offsets() const;  ///< q (kappa per row)
    Eigen::VectorXd weights() const;  ///< psi per row
    /// Unweighted M f(tau) + q, row by row.
    Eigen::VectorXd residual(const Eigen::VectorXd& tau) const;
    /// Unknowns not touched by any row.
    int uncovered() const;
};

struct AssemblyConfig {
    bool use_dp = true;
    bool use_hv = true;
    bool all_pairs = false;
    /// Pair each frame k with the first available frame at or after
    /// k + m * stride for m in pair_multiples, searching stride/2 frames.
    int stride = 16;
    std::vector<int> pair_multiples{1, 2, 4, 8};
    bool weight_by_strength = true;
    double lb = 0.5 / 343.0;
    double ub = 6.0 / 343.0;

    void validate() const;
};

/// Rows over the given unknown frames (sorted, unique). Series samples at
/// frames outside the list are ignored. Throws NumericalError when no
/// non-vacuous row remains.
ConstraintSystem assemble(const std::vector<EchoSeries>& series, const std::vector<int>& frames,
                          const AssemblyConfig& cfg);

/// Unknown frames = union of all series frames.
ConstraintSystem assemble(const std::vector<EchoSeries>& series, const AssemblyConfig& cfg);

enum class Loss { squares, absolute, huber };

struct SolverConfig {
    Loss loss = Loss::absolute;
    double lambda = 0.0;       ///< weight of ||forward difference of tau||^2, s^-2 units of the data term
    double huber_delta = 1e-7; ///< s^2
    int max_iters = 3000;
    double tol = 1e-12;        ///< step size, relative to ub
    int restarts = 8;
    std::uint64_t seed = 1234;
    /// Non-smooth losses start from the squares solution rather than from
    /// the random points.
    bool warm_start = true;

    void validate() const;
};

/// Smoothness weight tuned on simulated moving-source scenes with noisy
/// observations. The absolute loss has a data term in s^2, the others in s^4.
double default_lambda(Loss loss);

struct SolveDiagnostics {
    double objective = 0.0;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    bool rank_deficient = false;
    int starts = 0;
};

struct ToaSolution {
    Eigen::VectorXd tau;
    SolveDiagnostics diag;
};

/// Objective value; fills the (sub)gradient when `grad` is non-null.
double objective(const ConstraintSystem& sys, const Eigen::VectorXd& tau, const SolverConfig& cfg,
                 Eigen::VectorXd* grad = nullptr);

ToaSolution solve_toa(const ConstraintSystem& sys, const SolverConfig& cfg);

struct SourcePositions {
    std::vector<Eigen::Vector3d> positions;
    std::vector<double> ranges;
};

SourcePositions toa_to_positions(const Eigen::VectorXd& tau, const std::vector<Direction>& doa, double c = 343.0);

}  // namespace ambiloc
