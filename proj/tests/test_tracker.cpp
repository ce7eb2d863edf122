#include "ambiloc/error.hpp"
#include "ambiloc/tracker.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <limits>
#include <random>

using namespace ambiloc;

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

constexpr double inf = std::numeric_limits<double>::infinity();

EchoObservation reflection(const Eigen::Vector3d& point, int frame, double c = 343.0) {
    EchoObservation o;
    o.u = Direction::from_vector(point);
    o.tau = point.norm() / c;
    o.g = 0.3;
    o.frame = frame;
    o.kind = EchoKind::reflection;
    return o;
}

EchoObservation direct(const Eigen::Vector3d& u, int frame) {
    EchoObservation o;
    o.u = Direction::from_vector(u);
    o.frame = frame;
    o.kind = EchoKind::direct;
    return o;
}

Mat6 cv_transition(int n) {
    Mat6 F = Mat6::Identity();
    for (int i = 0; i < 3; ++i) F(i, i + 3) = n;
    return F;
}

Mat6 random_spd(std::mt19937_64& rng, double scale) {
    Mat6 A;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) A(i, j) = oracle::uniform(rng, -1, 1);
    return scale * (A * A.transpose() + 0.5 * Mat6::Identity());
}

// A Kalman filter written out longhand; returns its history and the
// ingredients of the equivalent batch problem.
struct Chain {
    std::vector<FilterStep> steps;
    std::vector<Mat6> Q;
    std::vector<Eigen::Vector3d> z;
    Vec6 m0;
    Mat6 P0;
    Eigen::Matrix3d R;
};

Chain run_filter(std::mt19937_64& rng, int n, int first_frame) {
    Chain ch;
    ch.m0 = Vec6::Random();
    ch.P0 = random_spd(rng, 0.3);
    ch.R = 0.05 * Eigen::Matrix3d::Identity();
    ch.steps.push_back({first_frame, 0, ch.m0, ch.P0, ch.m0, ch.P0});
    ch.Q.push_back(Mat6::Zero());
    ch.z.push_back(Eigen::Vector3d::Zero());
    Vec6 x = ch.m0;
    Mat6 P = ch.P0;
    int frame = first_frame;
    for (int k = 1; k < n; ++k) {
        const int dn = (k % 4 == 0) ? 2 : 1;
        frame += dn;
        const Mat6 F = cv_transition(dn);
        const Mat6 Q = random_spd(rng, 0.01);
        const Vec6 xp = F * x;
        const Mat6 Pp = F * P * F.transpose() + Q;
        const Eigen::Vector3d z = Eigen::Vector3d::Random();
        const Eigen::Matrix<double, 3, 6> H = (Eigen::Matrix<double, 3, 6>() << Eigen::Matrix3d::Identity(),
                                               Eigen::Matrix3d::Zero()).finished();
        const Eigen::Matrix3d S = H * Pp * H.transpose() + ch.R;
        const Eigen::Matrix<double, 6, 3> K = Pp * H.transpose() * S.inverse();
        x = xp + K * (z - H * xp);
        P = (Mat6::Identity() - K * H) * Pp;
        ch.steps.push_back({frame, dn, xp, Pp, x, P});
        ch.Q.push_back(Q);
        ch.z.push_back(z);
    }
    return ch;
}

// Joint MAP estimate of all states by solving the full normal equations.
std::vector<Vec6> batch_map(const Chain& ch) {
    const int n = static_cast<int>(ch.steps.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6 * n, 6 * n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(6 * n);
    const Mat6 P0i = ch.P0.inverse();
    A.block<6, 6>(0, 0) += P0i;
    b.segment<6>(0) += P0i * ch.m0;
    const Eigen::Matrix3d Ri = ch.R.inverse();
    for (int k = 1; k < n; ++k) {
        const Mat6 F = cv_transition(ch.steps[k].steps);
        const Mat6 Qi = ch.Q[k].inverse();
        A.block<6, 6>(6 * k, 6 * k) += Qi;
        A.block<6, 6>(6 * k, 6 * (k - 1)) -= Qi * F;
        A.block<6, 6>(6 * (k - 1), 6 * k) -= F.transpose() * Qi;
        A.block<6, 6>(6 * (k - 1), 6 * (k - 1)) += F.transpose() * Qi * F;
        A.block<3, 3>(6 * k, 6 * k) += Ri;
        b.segment<3>(6 * k) += Ri * ch.z[k];
    }
    const Eigen::VectorXd x = A.ldlt().solve(b);
    std::vector<Vec6> out(n);
    for (int k = 0; k < n; ++k) out[k] = x.segment<6>(6 * k);
    return out;
}

double assignment_total(const Eigen::MatrixXd& cost, const std::vector<int>& a, int& count) {
    double total = 0.0;
    count = 0;
    for (int i = 0; i < static_cast<int>(a.size()); ++i)
        if (a[i] >= 0) {
            total += cost(i, a[i]);
            ++count;
        }
    return total;
}

}  // namespace

TEST_CASE("hungarian assignment matches brute force") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 300; ++trial) {
        const int r = 1 + static_cast<int>(rng() % 6), c = 1 + static_cast<int>(rng() % 6);
        Eigen::MatrixXd cost(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) cost(i, j) = oracle::uniform(rng, 0, 1) < 0.3 ? inf : oracle::uniform(rng, 0, 5);
        const std::vector<int> a = hungarian_assign(cost);
        REQUIRE(static_cast<int>(a.size()) == r);
        std::vector<int> used(c, 0);
        for (int i = 0; i < r; ++i)
            if (a[i] >= 0) {
                CHECK(std::isfinite(cost(i, a[i])));
                CHECK(++used[a[i]] == 1);
            }
        int count = 0;
        const double total = assignment_total(cost, a, count);
        // The oracle maximizes the number of finite pairs first.
        int best_count = 0;
        {
            const int n = std::max(r, c);
            std::vector<int> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            do {
                int k = 0;
                for (int i = 0; i < r; ++i) k += perm[i] < c && std::isfinite(cost(i, perm[i]));
                best_count = std::max(best_count, k);
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
        CHECK(count == best_count);
        CHECK(total == doctest::Approx(oracle::brute_force_assignment(cost)).scale(1.0).epsilon(1e-9));
    }
    CHECK(hungarian_assign(Eigen::MatrixXd(0, 3)).empty());
    CHECK(hungarian_assign(Eigen::MatrixXd(2, 0)) == std::vector<int>{-1, -1});
}

TEST_CASE("RTS smoother equals the batch MAP estimate") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        const Chain ch = run_filter(rng, 12 + trial, 3);
        const auto rts = rts_smooth(ch.steps);
        const auto map = batch_map(ch);
        REQUIRE(rts.size() == map.size());
        for (std::size_t k = 0; k < rts.size(); ++k) CHECK((rts[k] - map[k]).norm() < 1e-8);
        CHECK((rts.back() - ch.steps.back().x).norm() == 0.0);
    }
    CHECK(rts_smooth({}).empty());
}

TEST_CASE("RTS restarts split the history into independent segments") {
    std::mt19937_64 rng(43);
    const Chain a = run_filter(rng, 8, 0);
    const Chain b = run_filter(rng, 6, 20);
    std::vector<FilterStep> joined = a.steps;
    joined.insert(joined.end(), b.steps.begin(), b.steps.end());
    const auto all = rts_smooth(joined);
    const auto ra = rts_smooth(a.steps), rb = rts_smooth(b.steps);
    for (std::size_t k = 0; k < ra.size(); ++k) CHECK((all[k] - ra[k]).norm() < 1e-12);
    for (std::size_t k = 0; k < rb.size(); ++k) CHECK((all[ra.size() + k] - rb[k]).norm() < 1e-12);
}

TEST_CASE("echo track lifecycle") {
    TrackerConfig cfg;
    KalmanEchoTracker tr(cfg);
    const Eigen::Vector3d p(1.0, 0.5, -0.2);
    tr.update(0, {reflection(p, 0)});
    tr.update(1, {reflection(p, 1)});
    REQUIRE(tr.tracks().size() == 1);
    CHECK(tr.tracks()[0].state == TrackState::tentative);
    tr.update(2, {reflection(p, 2)});
    CHECK(tr.tracks()[0].state == TrackState::confirmed);
    CHECK(tr.tracks()[0].hits == 3);
    for (int k = 3; k < 7; ++k) tr.update(k, {});
    CHECK(tr.tracks()[0].state == TrackState::confirmed);
    tr.update(7, {});
    CHECK(tr.tracks()[0].state == TrackState::dead);
    CHECK(tr.tracks()[0].was_confirmed);
    // A dead track is never revived.
    tr.update(8, {reflection(p, 8)});
    CHECK(tr.tracks().size() == 2);

    // Direct-path or zero-delay observations are ignored.
    KalmanEchoTracker t2(cfg);
    t2.update(0, {direct(p, 0)});
    CHECK(t2.tracks().empty());
    CHECK_THROWS_AS(scaled_observation(direct(p, 0)), InputError);
}

TEST_CASE("two crossing-free echoes keep their identities") {
    TrackerConfig cfg;
    cfg.gate_radius = 0.1;
    cfg.smoothing = true;
    KalmanEchoTracker tr(cfg);
    std::mt19937_64 rng(44);
    std::normal_distribution<double> noise(0.0, 0.005);
    auto truth = [](int which, int k) {
        return which == 0 ? Eigen::Vector3d(1.0 + 0.002 * k, 0.3, 0.0) : Eigen::Vector3d(-0.5, 1.2 - 0.003 * k, 0.4);
    };
    for (int k = 0; k < 200; ++k) {
        std::vector<EchoObservation> obs;
        for (int which : {1, 0}) {
            Eigen::Vector3d p = truth(which, k);
            p += Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
            obs.push_back(reflection(p, k));
        }
        tr.update(k, obs);
    }
    tr.finish();
    REQUIRE(tr.tracks().size() == 2);
    double filtered_err = 0.0;
    for (const EchoTrack& t : tr.tracks()) {
        CHECK(t.history.size() == 200);
        const int which = (t.history.front().point - truth(0, 0)).norm() < 0.1 ? 0 : 1;
        for (const EchoHit& h : t.history) {
            CHECK((h.point - truth(which, h.frame)).norm() < 0.03);
            filtered_err += (h.point - truth(which, h.frame)).squaredNorm();
        }
    }
    // Smoothed points beat the raw observation noise (3 * 0.005^2 per point).
    CHECK(filtered_err / 400.0 < 3.0 * 0.005 * 0.005);
}

TEST_CASE("smoothing reduces the error of a noisy straight track") {
    std::mt19937_64 rng(45);
    std::normal_distribution<double> noise(0.0, 0.01);
    auto run = [&](bool smooth, std::uint64_t seed) {
        rng.seed(seed);
        TrackerConfig cfg;
        cfg.gate_radius = 0.2;
        cfg.smoothing = smooth;
        KalmanEchoTracker tr(cfg);
        for (int k = 0; k < 150; ++k) {
            const Eigen::Vector3d p(1.0 + 0.004 * k, 0.5, 0.2);
            tr.update(k, {reflection(p + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)), k)});
        }
        tr.finish();
        REQUIRE(tr.tracks().size() == 1);
        double e = 0.0;
        for (const EchoHit& h : tr.tracks()[0].history)
            e += (h.point - Eigen::Vector3d(1.0 + 0.004 * h.frame, 0.5, 0.2)).squaredNorm();
        return e;
    };
    for (std::uint64_t seed : {1, 2, 3}) CHECK(run(true, seed) < run(false, seed));
}

TEST_CASE("frames must increase") {
    std::vector<EchoTrack> tracks;
    int next = 0;
    const TrackerConfig cfg;
    reflections_update(tracks, {reflection({1, 0, 0}, 4)}, 4, cfg, next);
    CHECK(next == 1);
    CHECK_THROWS_AS(reflections_update(tracks, {}, 4, cfg, next), InputError);

    SourceTrack st(cfg);
    st.update(2, direct({1, 0, 0}, 2));
    CHECK_THROWS_AS(st.update(2, direct({1, 0, 0}, 2)), InputError);
    CHECK_THROWS_AS(st.update(3, reflection({1, 0, 0}, 3)), InputError);
}

TEST_CASE("source track stays on the sphere and follows motion") {
    TrackerConfig cfg;
    SourceTrack st(cfg);
    st.update(0, std::nullopt);
    CHECK_FALSE(st.initialized());
    CHECK_FALSE(st.at(0).has_value());
    std::mt19937_64 rng(46);
    for (int k = 1; k <= 300; ++k) {
        const double az = 0.002 * k;
        Eigen::Vector3d u = oracle::unit_from_angles(az, 0.1);
        u += 0.01 * oracle::random_unit(rng);
        st.update(k, k % 10 == 0 ? std::nullopt : std::optional<EchoObservation>(direct(u, k)));
    }
    for (const SourceSample& s : st.samples()) {
        CHECK(s.u.unit().norm() == doctest::Approx(1.0));
        if (s.frame > 50)
            CHECK(rad2deg(angular_distance(s.u, Direction(0.002 * s.frame, 0.1))) < 3.0);
    }
    CHECK_FALSE(st.samples()[9].observed);  // frame 10 had no observation
    st.smooth();
    CHECK(st.smoothed());
    for (const SourceSample& s : st.samples()) CHECK(s.u.unit().norm() == doctest::Approx(1.0));
    CHECK_THROWS_AS(st.update(301, std::nullopt), InputError);
}

TEST_CASE("source track reacquires after a sustained jump") {
    TrackerConfig cfg;
    cfg.source_reacquire = 3;
    SourceTrack st(cfg);
    for (int k = 0; k < 20; ++k) st.update(k, direct({1, 0, 0}, k));
    for (int k = 20; k < 30; ++k) st.update(k, direct({0, 1, 0}, k));
    CHECK(rad2deg(angular_distance(*st.at(29), Direction(kPi / 2, 0.0))) < 2.0);
    // Before the reacquire threshold the filter coasts on the old direction.
    CHECK(rad2deg(angular_distance(*st.at(21), Direction(0.0, 0.0))) < 2.0);
}

TEST_CASE("confirmed pairs join source and echo frames") {
    TrackerConfig cfg;
    cfg.smoothing = false;
    KalmanEchoTracker tr(cfg);
    SourceTrack st(cfg);
    const Eigen::Vector3d p(1.2, -0.4, 0.3);
    for (int k = 0; k < 10; ++k) {
        st.update(k, k == 4 ? std::nullopt : std::optional<EchoObservation>(direct({0, 0, 1}, k)));
        tr.update(k, k == 6 ? std::vector<EchoObservation>{} : std::vector<EchoObservation>{reflection(p, k)});
    }
    const auto pairs = confirmed_pairs(tr.tracks(), st);
    REQUIRE(pairs.size() == 1);
    const EchoSeries& s = pairs[0];
    CHECK(s.size() == 9);  // frame 6 missing; frame 4 has a coasted source sample
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(s.tau[i] == doctest::Approx(p.norm() / 343.0).epsilon(1e-6));
        CHECK(rad2deg(angular_distance(s.un[i], Direction::from_vector(p))) < 1e-3);
        CHECK(rad2deg(angular_distance(s.u0[i], Direction(0.0, kPi / 2))) < 1e-3);
    }
    const auto raw = confirmed_pairs(tr.tracks(), st, 343.0, true);
    REQUIRE(raw.size() == 1);
    CHECK(raw[0].tau[0] == doctest::Approx(p.norm() / 343.0));
}
