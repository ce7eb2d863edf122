#pragma once

// End-to-end localization: STFT -> GTVV -> peaks -> tracking -> ranging,
// plus metrics, output files and JSON configuration for the CLI.

#include "ambiloc/gtvv.hpp"
#include "ambiloc/io.hpp"
#include "ambiloc/ranging.hpp"
#include "ambiloc/simulator.hpp"
#include "ambiloc/stft.hpp"
#include "ambiloc/tracker.hpp"
#include "ambiloc/wavefront.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ambiloc {

struct PipelineConfig {
    int order = 4;
    double c = 343.0;
    StftConfig stft;
    GtvvConfig gtvv;
    PeakPickConfig peaks;
    TrackerConfig tracker;
    AssemblyConfig assembly;
    SolverConfig solver;
    double range_min = 0.5;  ///< metres
    double range_max = 6.0;
    /// Unknown frames per ranging solve; consecutive blocks overlap.
    int block_len = 256;
    int block_overlap = 64;

    PipelineConfig();
    /// Checks every stage and the range bounds.
    void validate() const;
};

std::string config_to_json(const PipelineConfig& cfg);
/// Keys not present keep their defaults; unknown keys are an InputError.
PipelineConfig config_from_json(const std::string& text);

struct FrameEstimate {
    int k = 0;
    double t = 0.0;  ///< centre of the frames the estimate summarizes, seconds
    double az_deg = 0.0;
    double el_deg = 0.0;
    double range_m = 0.0;
    bool doa_valid = false;
    bool range_valid = false;
};

struct PipelineDiagnostics {
    int frames = 0;
    int confirmed_tracks = 0;
    int constraint_rows = 0;
    int blocks_solved = 0;
    int blocks_empty = 0;
    int undecodable_peaks = 0;
};

struct PipelineResult {
    std::vector<FrameEstimate> estimates;
    PipelineDiagnostics diag;
    std::vector<EchoTrack> tracks;
};

/// Timestamp attached to the estimate made at frame k.
double estimate_time(const PipelineConfig& cfg, int k);

PipelineResult run_pipeline(const PipelineConfig& cfg, const MultichannelSignal& signal);

struct ErrorStats {
    double median = 0.0;
    double mean = 0.0;
    double std = 0.0;
    int count = 0;
};

struct MetricsReport {
    ErrorStats azimuth_deg;
    ErrorStats elevation_deg;
    ErrorStats range_m;
    int frames = 0;  ///< estimates with truth available
    std::string config_json;
};

/// Azimuth difference wrapped to [0, 180] degrees.
double azimuth_error_deg(double a, double b);

ErrorStats error_stats(std::vector<double> errors);

/// Errors pooled over all given recordings. Throws InputError when no
/// estimate overlaps its truth.
MetricsReport compute_metrics(const std::vector<std::pair<const std::vector<FrameEstimate>*, const TruthTrack*>>& runs,
                              const std::string& config_json = "{}");
MetricsReport compute_metrics(const std::vector<FrameEstimate>& estimates, const TruthTrack& truth,
                              const std::string& config_json = "{}");

void write_estimates_csv(std::ostream& out, const std::vector<FrameEstimate>& estimates);
void write_estimates_csv(const std::filesystem::path& path, const std::vector<FrameEstimate>& estimates);
/// One JSON object per line with the CSV's fields; invalid values are null.
void write_estimates_jsonl(std::ostream& out, const std::vector<FrameEstimate>& estimates);
std::vector<FrameEstimate> read_estimates_csv(const std::filesystem::path& path);

std::string metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);

/// Simulation recipe used by the `simulate` subcommand.
struct SceneSpec {
    Scene scene;
    int order = 4;
    double duration = 10.0;
    std::string signal = "speech";  ///< "speech" or "noise"
    std::uint64_t seed = 1;
    std::optional<double> snr_db;
    /// Truth sampling period, seconds.
    double truth_period = 256.0 / 16000.0;
};

SceneSpec scene_from_json(const std::string& text);
std::string scene_to_json(const SceneSpec& spec);

struct SimulatedRecording {
    MultichannelSignal signal;
    TruthTrack truth;
};

SimulatedRecording simulate(const SceneSpec& spec);

}  // namespace ambiloc
