#include "ambiloc/error.hpp"
#include "ambiloc/ranging.hpp"
#include "ambiloc/simulator.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace ambiloc;

namespace {

constexpr double c = 343.0;

// Exact echo series for a source walking past a floor and one side wall.
struct Walk {
    std::vector<EchoSeries> series;
    std::vector<double> toa;
    std::vector<Direction> doa;
};

Walk exact_walk(int K) {
    Scene s;
    Shoebox box;
    box.absorption = {0.3, 1, 1, 1, 0.3, 1};
    s.geometry = box;
    s.mic = {3.0, 2.0, 1.5};
    s.trajectory = Trajectory({{0.0, {1.0, 1.0, 1.2}}, {8.0, {1.5, 3.0, 0.8}}});
    std::vector<double> times(K);
    for (int k = 0; k < K; ++k) times[k] = 8.0 * k / (K - 1);
    const auto truth = ground_truth(s, times);
    Walk w;
    int id = 0;
    for (const std::string label : {"box(0,0,0,0,0,1)", "box(0,1,0,0,0,0)"}) {
        EchoSeries es;
        es.track_id = id++;
        for (const TruthRecord& r : truth)
            for (const ImageTruth& im : r.images)
                if (im.label == label) {
                    es.frames.push_back(r.frame);
                    es.u0.push_back(r.doa);
                    es.un.push_back(im.u);
                    es.tau.push_back(im.tdoa);
                    es.g.push_back(im.gain);
                }
        w.series.push_back(es);
    }
    for (const TruthRecord& r : truth) {
        w.toa.push_back(r.toa);
        w.doa.push_back(r.doa);
    }
    return w;
}

Eigen::VectorXd random_tau(std::mt19937_64& rng, int K, double lo, double hi) {
    Eigen::VectorXd t(K);
    for (int i = 0; i < K; ++i) t[i] = oracle::uniform(rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("feature layout and Jacobian") {
    const int K = 5;
    CHECK(feature_dim(K) == 20);
    int expected = K;
    for (int i = 0; i < K; ++i)
        for (int j = i; j < K; ++j) CHECK(feature_index(K, i, j) == expected++);

    std::mt19937_64 rng(51);
    const Eigen::VectorXd tau = random_tau(rng, K, 0.001, 0.02);
    const Eigen::VectorXd f = features(tau);
    CHECK(f[feature_index(K, 1, 3)] == doctest::Approx(tau[1] * tau[3]));
    CHECK(f[feature_index(K, 2, 2)] == doctest::Approx(tau[2] * tau[2]));
    const Eigen::MatrixXd J = features_jacobian(tau);
    REQUIRE(J.rows() == feature_dim(K));
    REQUIRE(J.cols() == K);
    for (int r = 0; r < J.rows(); ++r) {
        const auto fr = [&](const Eigen::VectorXd& t) { return features(t)[r]; };
        CHECK((J.row(r).transpose() - oracle::numeric_gradient(fr, tau, 1e-6)).norm() < 1e-9);
    }
}

TEST_CASE("reflection rows vanish at the true delays") {
    // Property over random horizontal reflectors and source pairs.
    std::mt19937_64 rng(52);
    for (int t = 0; t < 200; ++t) {
        const double h = oracle::uniform(rng, -2.0, 2.0);  // plane z = h
        if (std::abs(h) < 0.3) continue;
        auto reflect = [&](Eigen::Vector3d p) {
            p.z() = 2.0 * h - p.z();
            return p;
        };
        Eigen::Vector3d s1 = oracle::random_unit(rng) * oracle::uniform(rng, 0.5, 4.0);
        Eigen::Vector3d s2 = oracle::random_unit(rng) * oracle::uniform(rng, 0.5, 4.0);
        // Keep both sources on the mic's side of the plane.
        if ((s1.z() - h) * (0.0 - h) <= 0.0 || (s2.z() - h) * (0.0 - h) <= 0.0) continue;
        const Eigen::Vector3d i1 = reflect(s1), i2 = reflect(s2);
        const EchoSample e1{Direction::from_vector(i1), (i1.norm() - s1.norm()) / c};
        const EchoSample e2{Direction::from_vector(i2), (i2.norm() - s2.norm()) / c};
        const Direction d1 = Direction::from_vector(s1), d2 = Direction::from_vector(s2);
        const double a = s1.norm() / c, b = s2.norm() / c;

        const RowCoefficients dp = dp_row(d1, d2, e1, e2);
        const RowCoefficients hv = hv_row(d1, d2, e1, e2);
        const double scale = (a + b + e1.tau + e2.tau) * (a + b + e1.tau + e2.tau);
        CHECK(std::abs(dp.evaluate(a, b)) < 1e-12 * scale);
        CHECK(std::abs(hv.evaluate(a, b)) < 1e-12 * scale);
        CHECK(dp.kappa >= 0.0);
        CHECK(hv.kappa >= 0.0);
        CHECK_FALSE(dp.vacuous());
    }
}

TEST_CASE("system matrix reproduces the row residuals") {
    const Walk w = exact_walk(12);
    AssemblyConfig acfg;
    acfg.all_pairs = true;
    const ConstraintSystem sys = assemble(w.series, acfg);
    CHECK(sys.unknowns() == 12);
    CHECK(sys.uncovered() == 0);
    std::mt19937_64 rng(53);
    for (int t = 0; t < 10; ++t) {
        const Eigen::VectorXd tau = random_tau(rng, 12, sys.lb, sys.ub);
        const Eigen::VectorXd r = sys.matrix() * features(tau) + sys.offsets();
        CHECK((r - sys.residual(tau)).norm() < 1e-15);
        for (std::size_t i = 0; i < sys.rows.size(); ++i) {
            const ConstraintRow& row = sys.rows[i];
            CHECK(r[i] == doctest::Approx(row.coeffs.evaluate(tau[row.a], tau[row.b])).scale(1e-6));
        }
    }
    const Eigen::VectorXd truth = Eigen::Map<const Eigen::VectorXd>(w.toa.data(), 12);
    CHECK(sys.residual(truth).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("objective gradients match finite differences") {
    const Walk w = exact_walk(10);
    AssemblyConfig acfg;
    acfg.stride = 2;
    const ConstraintSystem sys = assemble(w.series, acfg);
    std::mt19937_64 rng(54);
    for (Loss loss : {Loss::squares, Loss::huber}) {
        SolverConfig cfg;
        cfg.loss = loss;
        cfg.lambda = 1e-6;
        cfg.huber_delta = 1e-6;
        for (int t = 0; t < 20; ++t) {
            const Eigen::VectorXd tau = random_tau(rng, sys.unknowns(), sys.lb, sys.ub);
            Eigen::VectorXd g;
            objective(sys, tau, cfg, &g);
            const auto f = [&](const Eigen::VectorXd& x) { return objective(sys, x, cfg); };
            const Eigen::VectorXd ng = oracle::numeric_gradient(f, tau, 1e-6 * sys.ub);
            CHECK((g - ng).norm() <= 1e-5 * std::max(ng.norm(), 1e-30));
        }
    }
    CHECK_THROWS_AS(objective(sys, Eigen::VectorXd::Zero(3), SolverConfig{}), InputError);
}

TEST_CASE("exact series give back the true delays") {
    const Walk w = exact_walk(16);
    AssemblyConfig acfg;
    acfg.all_pairs = true;
    const ConstraintSystem sys = assemble(w.series, acfg);
    SolverConfig cfg;
    cfg.loss = Loss::squares;
    cfg.lambda = 0.0;
    const ToaSolution sol = solve_toa(sys, cfg);
    REQUIRE(sol.tau.size() == 16);
    for (int k = 0; k < 16; ++k) {
        CHECK(std::abs(sol.tau[k] - w.toa[k]) * c < 1e-4);
        CHECK(sol.tau[k] >= sys.lb);
        CHECK(sol.tau[k] <= sys.ub);
    }
    CHECK(objective(sys, sol.tau, cfg) <= objective(sys, Eigen::VectorXd::Constant(16, 0.5 * (sys.lb + sys.ub)), cfg));

    const SourcePositions pos = toa_to_positions(sol.tau, w.doa);
    for (int k = 0; k < 16; ++k) {
        CHECK(pos.ranges[k] == doctest::Approx(c * sol.tau[k]));
        CHECK((pos.positions[k] - c * sol.tau[k] * w.doa[k].unit()).norm() < 1e-12);
    }
    CHECK_THROWS_AS(toa_to_positions(sol.tau, {}), InputError);
}

TEST_CASE("solutions stay inside the box for every loss") {
    const Walk w = exact_walk(12);
    std::vector<EchoSeries> noisy = w.series;
    std::mt19937_64 rng(55);
    std::normal_distribution<double> n(0.0, 1.0 / 16000.0);
    for (auto& s : noisy)
        for (double& t : s.tau) t = std::max(1e-5, t + n(rng));
    AssemblyConfig acfg;
    acfg.stride = 2;
    const ConstraintSystem sys = assemble(noisy, acfg);
    for (Loss loss : {Loss::squares, Loss::absolute, Loss::huber}) {
        SolverConfig cfg;
        cfg.loss = loss;
        cfg.lambda = default_lambda(loss);
        const ToaSolution sol = solve_toa(sys, cfg);
        CHECK(sol.tau.minCoeff() >= sys.lb);
        CHECK(sol.tau.maxCoeff() <= sys.ub);
        CHECK(sol.diag.starts == cfg.restarts + 1);
    }
}

TEST_CASE("assembly errors and configuration checks") {
    CHECK_THROWS_AS(assemble({}, AssemblyConfig{}), InputError);
    // A frozen echo gives only vacuous DP rows.
    EchoSeries frozen;
    frozen.frames = {0, 20};
    frozen.u0 = {Direction(0.3, 0.1), Direction(0.3, 0.1)};
    frozen.un = {Direction(1.0, -0.4), Direction(1.0, -0.4)};
    frozen.tau = {0.004, 0.004};
    frozen.g = {0.3, 0.3};
    AssemblyConfig acfg;
    acfg.use_hv = false;
    CHECK_THROWS_AS(assemble({frozen}, acfg), NumericalError);
    acfg.use_dp = false;
    acfg.use_hv = false;
    CHECK_THROWS_AS(acfg.validate(), InputError);
    SolverConfig cfg;
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InputError);
    ConstraintSystem empty;
    CHECK_THROWS_AS(solve_toa(empty, SolverConfig{}), NumericalError);
    CHECK(default_lambda(Loss::absolute) == 100.0);
    CHECK(default_lambda(Loss::squares) == 1e-5);
}
