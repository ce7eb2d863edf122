#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace ambiloc {

/// Channels x samples, one contiguous row per channel.
using MultichannelSignal = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct StftConfig {
    double sample_rate = 16000.0;
    int frame_len = 2048;
    int hop = 512;
    double tukey_alpha = 0.5;
    int fft_len = 2048;

    int bins() const { return fft_len / 2 + 1; }
    /// Throws InputError if the configuration is unusable.
    void validate() const;
};

/// Real FFT of fixed length. Owns FFTW plans and aligned scratch buffers;
/// one instance must not be used from two threads at once.
class RealFft {
public:
    explicit RealFft(int n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    int size() const { return n_; }

    /// n real samples (shorter input is zero-padded) -> n/2+1 bins.
    void forward(std::span<const double> in, std::span<std::complex<double>> out);
    /// n/2+1 bins -> n real samples, scaled by 1/n (exact inverse of forward).
    void inverse(std::span<const std::complex<double>> in, std::span<double> out);

private:
    struct Impl;
    int n_;
    std::unique_ptr<Impl> impl_;
};

/// STFT-domain HOA data: one (channels x bins) matrix per frame.
class Spectrogram {
public:
    Spectrogram(StftConfig cfg, int channels) : cfg_(cfg), channels_(channels) {}

    const StftConfig& config() const { return cfg_; }
    int channels() const { return channels_; }
    int bins() const { return cfg_.bins(); }
    int frame_count() const { return static_cast<int>(frames_.size()); }

    const Eigen::MatrixXcd& frame(int k) const { return frames_.at(k); }
    /// First input sample covered by frame k.
    long frame_start(int k) const { return static_cast<long>(k) * cfg_.hop; }
    /// Frame-center time in seconds.
    double timestamp(int k) const;
    /// Inverse of timestamp(): the frame start sample.
    long sample_index(double timestamp) const;

    void push_frame(Eigen::MatrixXcd frame);

private:
    StftConfig cfg_;
    int channels_;
    std::vector<Eigen::MatrixXcd> frames_;
};

/// Symmetric Tukey window of length n; alpha = 0 is rectangular, 1 is Hann.
std::vector<double> tukey_window(int n, double alpha);

/// Windowed real FFT of every full frame of every channel. A trailing partial
/// frame is dropped. `expected_channels` < 0 skips the channel-count check.
Spectrogram stft_analyze(const MultichannelSignal& signal, const StftConfig& cfg, int expected_channels = -1);

/// Inverse real FFT of a half spectrum (fft_len/2+1 bins) to fft_len lags,
/// lag 0 first; negative lags wrap to the upper half.
std::vector<double> spectrum_to_lag(std::span<const std::complex<double>> x);

}  // namespace ambiloc
