#pragma once

// Recording I/O: multichannel WAV files with a JSON-lines sidecar carrying
// the sample format and optional ground truth, and a thin adapter for
// LOCATA-style task directories.

#include "ambiloc/sh.hpp"
#include "ambiloc/stft.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ambiloc {

struct WavData {
    MultichannelSignal samples;  ///< channels x frames, full-scale = 1
    double sample_rate = 0.0;
};

/// 32-bit float, WAVE_FORMAT_EXTENSIBLE.
void write_wav(const std::filesystem::path& path, const MultichannelSignal& samples, double sample_rate);
/// PCM 16/24/32-bit and float 32/64-bit, plain or extensible headers.
WavData read_wav(const std::filesystem::path& path);

/// Source position relative to the array, in array coordinates, over time.
class TruthTrack {
public:
    struct Sample {
        double t = 0.0;
        Eigen::Vector3d position = Eigen::Vector3d::Zero();
    };

    TruthTrack() = default;
    explicit TruthTrack(std::vector<Sample> samples);

    const std::vector<Sample>& samples() const { return samples_; }
    bool empty() const { return samples_.empty(); }
    /// Linear interpolation; nullopt outside the covered time span.
    std::optional<Eigen::Vector3d> at(double t) const;

private:
    std::vector<Sample> samples_;
};

enum class Normalization { n3d, sn3d };

struct Recording {
    MultichannelSignal signal;  ///< ACN / N3D
    double sample_rate = 0.0;
    int order = 0;
    std::optional<TruthTrack> truth;
};

/// Scales SN3D channels to N3D in place (degree l channels by sqrt(2l+1)).
void sn3d_to_n3d(MultichannelSignal& signal, int order);

/// `<stem>.jsonl` next to the WAV file.
std::filesystem::path sidecar_path(const std::filesystem::path& wav);

struct SidecarHeader {
    double sample_rate = 16000.0;
    int order = 4;
    Normalization normalization = Normalization::n3d;
    Eigen::Vector3d mic = Eigen::Vector3d::Zero();  ///< informational
};

void write_sidecar(const std::filesystem::path& path, const SidecarHeader& header, const TruthTrack* truth);

/// WAV + optional sidecar. Without a sidecar the file is taken as N3D with
/// order inferred from the channel count.
Recording load_wave_recording(const std::filesystem::path& wav);

/// LOCATA-style directory: an HOA WAV (with optional sidecar) plus
/// position_source_*.txt and position_array_*.txt tables.
Recording load_locata_task(const std::filesystem::path& dir);

enum class RecordingFormat { automatic, wave, locata };

Recording load_recording(const std::filesystem::path& path, RecordingFormat format = RecordingFormat::automatic);

}  // namespace ambiloc
