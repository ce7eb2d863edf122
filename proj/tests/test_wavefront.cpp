#include "ambiloc/error.hpp"
#include "ambiloc/wavefront.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace ambiloc;

namespace {

// Hand-built lag-domain frame: direct column at lag 0 plus first-order echo
// columns of the shape g (y_n - beta_n v0) at integer lags.
struct Echo {
    Direction u;
    int lag;
    double g;
};

GtvvFrame make_frame(const Direction& doa, const std::vector<Echo>& echoes, int order = 3) {
    GtvvFrame gf;
    gf.order = order;
    gf.sample_rate = 8000.0;
    gf.steer = doa;
    const int C = sh_channels(order);
    gf.v_time = Eigen::MatrixXd::Zero(C, 512);
    const BeamformerWeights w = max_directivity_beamformer(doa, order);
    const Eigen::VectorXd y0 = sh_eval(doa, order).coeffs;
    const Eigen::VectorXd v0 = y0 / w.weights.dot(y0);
    gf.v_time.col(0) = v0;
    for (const Echo& e : echoes) {
        const Eigen::VectorXd y = sh_eval(e.u, order).coeffs;
        gf.v_time.col(e.lag) += e.g * (y - w.weights.dot(y) * v0);
    }
    return gf;
}

}  // namespace

TEST_CASE("direct path DoA from lag zero") {
    const Direction doa(0.8, 0.2);
    const auto obs = extract_doa(make_frame(doa, {}));
    REQUIRE(obs);
    CHECK(rad2deg(angular_distance(obs->u, doa)) < 0.01);
    CHECK(obs->kind == EchoKind::direct);

    GtvvFrame empty = make_frame(doa, {});
    empty.v_time.setZero();
    CHECK_FALSE(extract_doa(empty).has_value());
}

TEST_CASE("leakage map annihilates the direct column") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 20; ++t) {
        const GtvvFrame gf = make_frame(Direction::from_vector(oracle::random_unit(rng)), {});
        CHECK((leakage_map(gf) * gf.v_time.col(0)).norm() < 1e-10);
    }
}

TEST_CASE("peak picking finds echoes and drops harmonic ghosts") {
    const Direction doa(0.0, 0.0);
    const Direction e1(2.0, 0.3), e2(-1.5, -0.2), ghost(1.0, 0.5);
    // Ghost at twice the first echo's lag, weaker than it.
    const GtvvFrame gf = make_frame(doa, {{e1, 40, 0.6}, {e2, 67, 0.4}, {ghost, 80, 0.3}});
    PeakPickConfig cfg;
    cfg.max_delay = 0.015;
    cfg.subsample = false;
    const auto peaks = pick_reflection_peaks(gf, cfg);
    REQUIRE(peaks.size() == 2);
    CHECK(peaks[0].lag_index == 40);
    CHECK(peaks[1].lag_index == 67);
    CHECK(peaks[0].lag == doctest::Approx(40 / 8000.0));
    CHECK(peaks[0].strength > peaks[1].strength);

    const ObservationBatch batch = peaks_to_observations(peaks, gf, cfg);
    REQUIRE(batch.observations.size() == 2);
    CHECK(rad2deg(angular_distance(batch.observations[0].u, e1)) < 0.05);
    CHECK(rad2deg(angular_distance(batch.observations[1].u, e2)) < 0.05);
    CHECK(batch.observations[0].kind == EchoKind::reflection);
    CHECK(batch.observations[1].tau == doctest::Approx(67 / 8000.0));
}

TEST_CASE("peaks below the relative threshold or past max delay are ignored") {
    const Direction doa(0.5, 0.0);
    const GtvvFrame gf = make_frame(doa, {{Direction(2.5, 0.0), 30, 0.01}, {Direction(-2.5, 0.0), 200, 0.8}});
    PeakPickConfig cfg;
    cfg.max_delay = 0.015;  // 120 lags
    CHECK(pick_reflection_peaks(gf, cfg).empty());
    cfg.max_delay = 0.03;
    const auto peaks = pick_reflection_peaks(gf, cfg);
    REQUIRE(peaks.size() == 1);
    CHECK(peaks[0].lag_index == 200);
}

TEST_CASE("peak configuration validation") {
    PeakPickConfig cfg;
    CHECK_NOTHROW(cfg.validate(2048, 16000.0));
    cfg.max_delay = 1.0;  // beyond half the lag axis
    CHECK_THROWS_AS(cfg.validate(2048, 16000.0), InputError);
    cfg = PeakPickConfig{};
    cfg.neighborhood = 0;
    CHECK_THROWS_AS(cfg.validate(2048, 16000.0), InputError);
}
