#pragma once

// Independent checker for the controller's runtime guarantees.
//
// The checker never reads the controller's snapshot or reference. It keeps
// its own copy of the last accepted state and its own EWMA, recomputes every
// probe value from scratch, and compares bit for bit where the guarantee is
// exact.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stabguard/harness.hpp"

namespace stabguard {

struct Violation {
    std::string invariant;
    std::size_t seed = 0;
    std::uint64_t step = 0;
    std::string detail;
};

struct InvariantResult {
    std::string name;
    std::uint64_t checks = 0;
    std::vector<Violation> violations;

    bool passed() const { return violations.empty(); }
};

struct VerifyOptions {
    bool corrupt_restore = false; // test hook: perturb every restored state by one ulp
    bool paired_prefix = true;    // also run the baseline arm and compare prefixes
    bool gradient_check = true;
    std::size_t seeds = 0;        // 0 means cfg.num_seeds
    std::size_t jobs = 1;
};

struct VerifyReport {
    std::vector<InvariantResult> results;

    bool passed() const;
    const InvariantResult& get(const std::string& name) const;
};

// Invariant names, in report order.
inline constexpr const char* kBoundedDeviation = "bounded-deviation";
inline constexpr const char* kOneStepRecovery = "one-step-recovery";
inline constexpr const char* kSafetyEnvelope = "safety-envelope";
inline constexpr const char* kFreezeOnReject = "freeze-on-reject";
inline constexpr const char* kReferenceEwma = "reference-ewma";
inline constexpr const char* kProbeAccounting = "probe-accounting";
inline constexpr const char* kPairedPrefix = "paired-prefix";
inline constexpr const char* kGradientCheck = "gradient-check";

/// Runs every check over the seeds of `cfg` (epsilon must be resolved).
VerifyReport verify_invariants(const ExperimentConfig& cfg, const VerifyOptions& options = {});

/// Largest componentwise relative error between the analytic gradient and a
/// central difference with step h, over `coords` (all when empty). The
/// relative error is |a - f| / max(|a| + |f|, 1e-6).
double gradient_relative_error(const MlpSpec& spec, std::span<const double> params, const Dataset& data,
                               std::span<const std::size_t> rows, std::span<const std::size_t> coords = {},
                               double h = 1e-5);

/// Fixed-width pass/fail table, one row per invariant, then one line per
/// violation (capped at `max_listed`).
std::string format_report(const VerifyReport& report, std::size_t max_listed = 20);

} // namespace stabguard
