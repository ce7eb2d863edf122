#include "ambiloc/error.hpp"
#include "ambiloc/stft.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <complex>
#include <random>

using namespace ambiloc;

namespace {

std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<std::complex<double>> out(n / 2 + 1);
    for (int k = 0; k <= n / 2; ++k) {
        std::complex<double> s{0.0};
        for (int t = 0; t < n; ++t) s += x[t] * std::polar(1.0, -2.0 * oracle::pi * k * t / n);
        out[k] = s;
    }
    return out;
}

}  // namespace

TEST_CASE("tukey window shapes") {
    const auto rect = tukey_window(16, 0.0);
    for (double v : rect) CHECK(v == 1.0);

    const int n = 33;
    const auto hann = tukey_window(n, 1.0);
    for (int i = 0; i < n; ++i)
        CHECK(hann[i] == doctest::Approx(0.5 * (1.0 - std::cos(2.0 * oracle::pi * i / (n - 1)))).scale(1.0));

    const auto w = tukey_window(2048, 0.5);
    CHECK(w.front() == doctest::Approx(0.0).scale(1.0));
    CHECK(w[1024] == 1.0);
    for (int i = 0; i < 2048; ++i) CHECK(w[i] == doctest::Approx(w[2047 - i]));

    CHECK_THROWS_AS(tukey_window(1, 0.5), InputError);
    CHECK_THROWS_AS(tukey_window(8, 1.5), InputError);
}

TEST_CASE("real fft matches a naive DFT and inverts") {
    std::mt19937_64 rng(11);
    for (int n : {8, 30, 64}) {
        std::vector<double> x(n);
        for (double& v : x) v = oracle::uniform(rng, -1.0, 1.0);
        RealFft fft(n);
        std::vector<std::complex<double>> X(n / 2 + 1);
        fft.forward(x, X);
        const auto ref = naive_dft(x);
        for (int k = 0; k <= n / 2; ++k) CHECK(std::abs(X[k] - ref[k]) < 1e-10);
        std::vector<double> back(n);
        fft.inverse(X, back);
        for (int i = 0; i < n; ++i) CHECK(back[i] == doctest::Approx(x[i]).scale(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(RealFft(7), InputError);
}

TEST_CASE("stft frame bookkeeping") {
    StftConfig cfg;
    cfg.frame_len = 64;
    cfg.fft_len = 64;
    cfg.hop = 16;
    cfg.sample_rate = 1000.0;
    MultichannelSignal sig = MultichannelSignal::Random(4, 64 + 16 * 9 + 7);
    const Spectrogram spec = stft_analyze(sig, cfg, 4);
    CHECK(spec.frame_count() == 10);  // trailing partial frame dropped
    CHECK(spec.bins() == 33);
    CHECK(spec.frame(0).rows() == 4);
    CHECK(spec.frame_start(3) == 48);
    CHECK(spec.timestamp(3) == doctest::Approx((48 + 32) / 1000.0));
    for (int k = 0; k < spec.frame_count(); ++k) CHECK(spec.sample_index(spec.timestamp(k)) == spec.frame_start(k));

    CHECK_THROWS_AS(stft_analyze(sig, cfg, 9), InputError);
    CHECK_THROWS_AS(stft_analyze(MultichannelSignal::Zero(4, 10), cfg), InputError);
    StftConfig bad = cfg;
    bad.hop = 0;
    CHECK_THROWS_AS(stft_analyze(sig, bad), InputError);
}

TEST_CASE("stft frames are windowed transforms of the input") {
    StftConfig cfg;
    cfg.frame_len = 32;
    cfg.fft_len = 32;
    cfg.hop = 8;
    MultichannelSignal sig = MultichannelSignal::Random(2, 100);
    const Spectrogram spec = stft_analyze(sig, cfg);
    const auto win = tukey_window(32, cfg.tukey_alpha);
    for (int k : {0, 4, spec.frame_count() - 1})
        for (int ch = 0; ch < 2; ++ch) {
            std::vector<double> x(32);
            for (int i = 0; i < 32; ++i) x[i] = sig(ch, k * 8 + i) * win[i];
            const auto ref = naive_dft(x);
            for (int f = 0; f < 17; ++f) CHECK(std::abs(spec.frame(k)(ch, f) - ref[f]) < 1e-10);
        }
}

TEST_CASE("spectrum_to_lag of a linear phase is an impulse") {
    const int n = 64, d = 5;
    std::vector<std::complex<double>> x(n / 2 + 1);
    for (int k = 0; k <= n / 2; ++k) x[k] = 2.0 * std::polar(1.0, -2.0 * oracle::pi * k * d / n);
    const auto lag = spectrum_to_lag(x);
    REQUIRE(lag.size() == static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) CHECK(lag[t] == doctest::Approx(t == d ? 2.0 : 0.0).scale(1.0).epsilon(1e-12));
}
