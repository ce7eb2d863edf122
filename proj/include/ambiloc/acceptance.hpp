#pragma once

// Acceptance suite on simulator oracles, shared by the acceptance test
// binary and the `selftest` subcommand.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ambiloc {

enum class Outcome { pass, fail, skipped };

struct CriterionResult {
    int id = 0;
    std::string name;
    Outcome outcome = Outcome::fail;
    std::string detail;
    double seconds = 0.0;
};

struct AcceptanceOptions {
    /// Root of a LOCATA-style dataset for the dataset-gated criterion.
    /// Falls back to the AMBILOC_LOCATA_ROOT environment variable.
    std::optional<std::filesystem::path> locata_root;
    /// Criteria to run; empty runs all.
    std::vector<int> only;
};

struct Criterion {
    int id = 0;
    std::string name;
    std::function<CriterionResult(const AcceptanceOptions&)> run;
};

const std::vector<Criterion>& acceptance_criteria();

/// Runs the selected criteria in order. `on_result` sees each result as soon
/// as it is available. Exceptions inside a criterion count as a failure.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opts,
                                            const std::function<void(const CriterionResult&)>& on_result = {});

/// "PASS  3 constraint-residual  (0.12 s)  detail".
std::string format_result(const CriterionResult& r);

bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace ambiloc
