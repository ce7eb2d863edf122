#include "ambiloc/stft.hpp"

#include "ambiloc/error.hpp"
#include "ambiloc/sh.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>

namespace ambiloc {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
    static std::mutex mu;
    return mu;
}

}  // namespace

void StftConfig::validate() const {
    if (!(sample_rate > 0.0)) throw InputError("stft: sample_rate must be positive");
    if (frame_len < 2) throw InputError("stft: frame_len must be at least 2");
    if (hop < 1 || hop > frame_len) throw InputError("stft: hop must be in [1, frame_len]");
    if (fft_len < frame_len) throw InputError("stft: fft_len must be >= frame_len");
    if (fft_len % 2 != 0) throw InputError("stft: fft_len must be even");
    if (!(tukey_alpha >= 0.0 && tukey_alpha <= 1.0)) throw InputError("stft: tukey_alpha must be in [0, 1]");
}

struct RealFft::Impl {
    double* time = nullptr;
    fftw_complex* freq = nullptr;
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
};

RealFft::RealFft(int n) : n_(n), impl_(std::make_unique<Impl>()) {
    if (n < 2 || n % 2 != 0) throw InputError("RealFft: length must be even and >= 2");
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    impl_->time = fftw_alloc_real(n);
    impl_->freq = fftw_alloc_complex(n / 2 + 1);
    impl_->fwd = fftw_plan_dft_r2c_1d(n, impl_->time, impl_->freq, FFTW_ESTIMATE);
    impl_->inv = fftw_plan_dft_c2r_1d(n, impl_->freq, impl_->time, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(impl_->fwd);
    fftw_destroy_plan(impl_->inv);
    fftw_free(impl_->time);
    fftw_free(impl_->freq);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
    if (in.size() > static_cast<std::size_t>(n_) || out.size() != static_cast<std::size_t>(n_ / 2 + 1))
        throw InputError("RealFft::forward: size mismatch");
    std::copy(in.begin(), in.end(), impl_->time);
    std::fill(impl_->time + in.size(), impl_->time + n_, 0.0);
    fftw_execute(impl_->fwd);
    for (int i = 0; i <= n_ / 2; ++i) out[i] = {impl_->freq[i][0], impl_->freq[i][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    if (in.size() != static_cast<std::size_t>(n_ / 2 + 1) || out.size() != static_cast<std::size_t>(n_))
        throw InputError("RealFft::inverse: size mismatch");
    for (int i = 0; i <= n_ / 2; ++i) {
        impl_->freq[i][0] = in[i].real();
        impl_->freq[i][1] = in[i].imag();
    }
    // The DC and Nyquist bins of a real sequence are real.
    impl_->freq[0][1] = 0.0;
    impl_->freq[n_ / 2][1] = 0.0;
    fftw_execute(impl_->inv);
    const double scale = 1.0 / n_;
    for (int i = 0; i < n_; ++i) out[i] = impl_->time[i] * scale;
}

double Spectrogram::timestamp(int k) const {
    return (static_cast<double>(frame_start(k)) + 0.5 * cfg_.frame_len) / cfg_.sample_rate;
}

long Spectrogram::sample_index(double timestamp) const {
    return std::lround(timestamp * cfg_.sample_rate - 0.5 * cfg_.frame_len);
}

void Spectrogram::push_frame(Eigen::MatrixXcd frame) {
    if (frame.rows() != channels_ || frame.cols() != bins())
        throw InputError("Spectrogram: frame shape mismatch");
    frames_.push_back(std::move(frame));
}

std::vector<double> tukey_window(int n, double alpha) {
    if (n < 2) throw InputError("tukey_window: n must be at least 2");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("tukey_window: alpha must be in [0, 1]");
    std::vector<double> w(n, 1.0);
    if (alpha == 0.0) return w;
    const double taper = alpha * (n - 1) / 2.0;
    for (int i = 0; i < n; ++i) {
        const double x = std::min(i, n - 1 - i);
        if (x < taper) w[i] = 0.5 * (1.0 + std::cos(kPi * (x / taper - 1.0)));
    }
    return w;
}

Spectrogram stft_analyze(const MultichannelSignal& signal, const StftConfig& cfg, int expected_channels) {
    cfg.validate();
    if (signal.rows() == 0 || signal.cols() == 0) throw InputError("stft_analyze: empty signal");
    if (expected_channels >= 0 && signal.rows() != expected_channels)
        throw InputError("stft_analyze: channel count mismatch");
    if (signal.cols() < cfg.frame_len) throw InputError("stft_analyze: signal shorter than one frame");

    const int channels = static_cast<int>(signal.rows());
    const long frames = (signal.cols() - cfg.frame_len) / cfg.hop + 1;
    const std::vector<double> window = tukey_window(cfg.frame_len, cfg.tukey_alpha);

    Spectrogram spec(cfg, channels);
    RealFft fft(cfg.fft_len);
    std::vector<double> buf(cfg.frame_len);
    std::vector<std::complex<double>> bins(cfg.bins());
    for (long k = 0; k < frames; ++k) {
        Eigen::MatrixXcd frame(channels, cfg.bins());
        const long start = k * cfg.hop;
        for (int ch = 0; ch < channels; ++ch) {
            const double* src = signal.row(ch).data() + start;
            for (int i = 0; i < cfg.frame_len; ++i) buf[i] = src[i] * window[i];
            fft.forward(buf, bins);
            for (int f = 0; f < cfg.bins(); ++f) frame(ch, f) = bins[f];
        }
        spec.push_frame(std::move(frame));
    }
    return spec;
}

std::vector<double> spectrum_to_lag(std::span<const std::complex<double>> x) {
    if (x.size() < 2) throw InputError("spectrum_to_lag: need at least two bins");
    const int n = static_cast<int>(2 * (x.size() - 1));
    RealFft fft(n);
    std::vector<double> out(n);
    fft.inverse(x, out);
    return out;
}

}  // namespace ambiloc
