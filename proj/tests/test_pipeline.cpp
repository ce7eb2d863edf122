#include "ambiloc/error.hpp"
#include "ambiloc/pipeline.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ambiloc;
namespace fs = std::filesystem;

namespace {

FrameEstimate estimate(int k, double t, double az, double el, std::optional<double> range) {
    FrameEstimate e;
    e.k = k;
    e.t = t;
    e.az_deg = az;
    e.el_deg = el;
    e.doa_valid = true;
    e.range_valid = range.has_value();
    e.range_m = range.value_or(0.0);
    return e;
}

SceneSpec short_scene(bool reflective) {
    const std::string geometry = reflective
        ? R"("room": {"extent": [6.0, 4.0, 3.0], "absorption": [0.3, 1.0, 1.0, 1.0, 0.3, 1.0]}, "mic": [3.0, 2.0, 1.5],
             "trajectory": [{"t": 0.0, "position": [1.5, 1.0, 1.2]}, {"t": 3.0, "position": [1.7, 2.2, 1.3]}],)"
        : R"("panels": [], "mic": [0.0, 0.0, 0.0],
             "trajectory": [{"t": 0.0, "position": [1.5, 0.5, 0.2]}, {"t": 3.0, "position": [1.0, 1.5, 0.3]}],)";
    return scene_from_json("{" + geometry + R"("order": 2, "duration": 3.0, "signal": "noise", "seed": 3})");
}

}  // namespace

TEST_CASE("azimuth error wraps around") {
    CHECK(azimuth_error_deg(179.0, -179.0) == doctest::Approx(2.0));
    CHECK(azimuth_error_deg(10.0, 350.0) == doctest::Approx(20.0));
    CHECK(azimuth_error_deg(-90.0, 90.0) == doctest::Approx(180.0));
    CHECK(azimuth_error_deg(5.0, 5.0) == 0.0);
}

TEST_CASE("error statistics") {
    const ErrorStats s = error_stats({0.9, 0.1, 0.2});
    CHECK(s.median == doctest::Approx(0.2));
    CHECK(s.mean == doctest::Approx(0.4));
    CHECK(s.std == doctest::Approx(std::sqrt((0.09 + 0.04 + 0.25) / 3.0)));
    CHECK(s.count == 3);
    CHECK(error_stats({1.0, 3.0}).median == doctest::Approx(2.0));
    CHECK(std::isnan(error_stats({}).median));
}

TEST_CASE("metrics of a perfect estimate are zero") {
    const TruthTrack truth({{0.0, {1.0, 1.0, 0.5}}, {2.0, {1.0, 1.0, 0.5}}});
    const Direction d = Direction::from_vector(Eigen::Vector3d(1.0, 1.0, 0.5));
    const double r = Eigen::Vector3d(1.0, 1.0, 0.5).norm();
    std::vector<FrameEstimate> est;
    for (int k = 0; k < 5; ++k)
        est.push_back(estimate(k, 0.3 * k, rad2deg(d.azimuth()), rad2deg(d.elevation()), r));
    est.push_back(estimate(5, 5.0, 0.0, 0.0, 1.0));  // outside the truth span
    const MetricsReport m = compute_metrics(est, truth);
    CHECK(m.frames == 5);
    CHECK(m.azimuth_deg.median == doctest::Approx(0.0).scale(1.0));
    CHECK(m.elevation_deg.mean == doctest::Approx(0.0).scale(1.0));
    CHECK(m.range_m.median == doctest::Approx(0.0).scale(1.0));

    const MetricsReport back = metrics_from_json(metrics_to_json(m));
    CHECK(back.frames == 5);
    CHECK(back.range_m.count == 5);

    CHECK_THROWS_AS(compute_metrics({est.back()}, truth), InputError);
}

TEST_CASE("estimate CSV and JSON lines") {
    std::vector<FrameEstimate> est{estimate(15, 0.544, 10.0, -5.25, 2.5), estimate(16, 0.576, 11.0, -5.0, std::nullopt),
                                   estimate(17, 0.608, 12.0, -4.75, 2.75)};
    est[1].doa_valid = true;
    std::ostringstream csv;
    write_estimates_csv(csv, est);
    std::istringstream lines(csv.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) ++n;
    CHECK(n == 4);
    CHECK(csv.str().rfind("k,t,az_deg,el_deg,range_m,range_valid\n15,0.544000,10.0000,-5.2500,2.5000,1\n", 0) == 0);

    const fs::path p = fs::temp_directory_path() / ("ambiloc_est_" + std::to_string(std::random_device{}()) + ".csv");
    write_estimates_csv(p, est);
    const auto back = read_estimates_csv(p);
    fs::remove(p);
    REQUIRE(back.size() == 3);
    CHECK(back[1].k == 16);
    CHECK_FALSE(back[1].range_valid);
    CHECK(back[2].range_m == doctest::Approx(2.75));
    CHECK(back[0].doa_valid);

    std::ostringstream jl;
    write_estimates_jsonl(jl, est);
    CHECK(jl.str().find("{\"k\":16,\"t\":0.576000,\"az_deg\":11.0000,\"el_deg\":-5.0000,\"range_m\":null,"
                        "\"range_valid\":false}\n") != std::string::npos);
}

TEST_CASE("configuration JSON round trip and validation") {
    PipelineConfig cfg;
    cfg.order = 3;
    cfg.solver.loss = Loss::huber;
    cfg.solver.lambda = 2e-5;
    cfg.tracker.gate_radius = 0.2;
    cfg.range_max = 5.0;
    const PipelineConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.order == 3);
    CHECK(back.solver.loss == Loss::huber);
    CHECK(back.solver.lambda == doctest::Approx(2e-5));
    CHECK(back.tracker.gate_radius == doctest::Approx(0.2));
    CHECK(back.range_max == 5.0);
    CHECK(config_to_json(back) == config_to_json(cfg));

    CHECK_THROWS_AS(config_from_json(R"({"no_such_key": 1})"), InputError);
    CHECK_THROWS_AS(config_from_json("{not json"), InputError);

    // Changing the loss alone picks up that loss's default weight.
    CHECK(config_from_json(R"({"ranging": {"loss": "squares"}})").solver.lambda == default_lambda(Loss::squares));

    PipelineConfig bad;
    bad.block_overlap = bad.block_len;
    CHECK_THROWS_AS(bad.validate(), InputError);
    bad = PipelineConfig{};
    bad.range_min = 7.0;
    CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("estimate timestamps sit at the buffer centre") {
    PipelineConfig cfg;
    cfg.gtvv.buffer_len = 16;
    const double t = estimate_time(cfg, 15);
    // Frames 0..15; centre frame 7.5.
    CHECK(t == doctest::Approx((7.5 * 512 + 1024) / 16000.0));
    CHECK(estimate_time(cfg, 16) - t == doctest::Approx(512.0 / 16000.0));
}

TEST_CASE("anechoic input gives directions but no ranges") {
    const SceneSpec spec = short_scene(false);
    const SimulatedRecording rec = simulate(spec);
    PipelineConfig cfg;
    cfg.order = 2;
    const PipelineResult res = run_pipeline(cfg, rec.signal);
    REQUIRE_FALSE(res.estimates.empty());
    int valid = 0;
    for (const FrameEstimate& e : res.estimates) {
        CHECK_FALSE(e.range_valid);
        valid += e.doa_valid;
    }
    CHECK(valid == static_cast<int>(res.estimates.size()));
    const MetricsReport m = compute_metrics(res.estimates, rec.truth);
    CHECK(m.azimuth_deg.median < 2.0);
    CHECK(m.elevation_deg.median < 2.0);
    CHECK(m.range_m.count == 0);
}

TEST_CASE("reflective scene produces bounded ranges") {
    const SceneSpec spec = short_scene(true);
    const SimulatedRecording rec = simulate(spec);
    PipelineConfig cfg;
    cfg.order = 2;
    const PipelineResult res = run_pipeline(cfg, rec.signal);
    int ranged = 0;
    for (const FrameEstimate& e : res.estimates)
        if (e.range_valid) {
            ++ranged;
            CHECK(e.range_m >= cfg.range_min - 1e-9);
            CHECK(e.range_m <= cfg.range_max + 1e-9);
        }
    CHECK(ranged > 0);
    CHECK(res.diag.confirmed_tracks > 0);
    for (std::size_t i = 1; i < res.estimates.size(); ++i) CHECK(res.estimates[i].t > res.estimates[i - 1].t);
}

TEST_CASE("pipeline input checks") {
    PipelineConfig cfg;
    cfg.order = 2;
    CHECK_THROWS_AS(run_pipeline(cfg, MultichannelSignal::Random(16, 40000)), InputError);
    CHECK_THROWS_AS(run_pipeline(cfg, MultichannelSignal::Random(9, 3000)), InputError);
}

TEST_CASE("scene JSON round trip") {
    const SceneSpec a = short_scene(true);
    const SceneSpec b = scene_from_json(scene_to_json(a));
    CHECK(scene_to_json(a) == scene_to_json(b));
    CHECK(b.order == 2);
    CHECK(b.signal == "noise");
    CHECK(std::holds_alternative<Shoebox>(b.scene.geometry));
    CHECK_THROWS_AS(scene_from_json(R"({"mic": [0, 0, 0]})"), InputError);
}
