#pragma once

// On-disk layout of an experiment:
//
//   <out>/<tag>/config.cfg                 effective config (epsilon resolved)
//   <out>/<tag>/summary.json               per-seed summaries and aggregates
//   <out>/<tag>/<seed>/baseline.csv        per-step series, one row per step
//   <out>/<tag>/<seed>/controlled.csv
//   <out>/<tag>/timing/...                 wall-clock data, never reproducible
//
// Everything outside timing/ is a pure function of (config, master seed).

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "stabguard/harness.hpp"

namespace stabguard {

/// step,train_loss,probe_loss,y_prop,reference,innovation,param_l2,decision
void write_run_csv(std::ostream& out, const RunMetrics& run);

/// Reads the per-step series back. Throws FormatError on a bad header, a
/// short row or a value that does not parse.
std::vector<StepMetrics> read_run_csv(std::istream& in);

void write_summary_json(std::ostream& out, const ExperimentResult& result);

/// Writes the whole layout above and returns the experiment directory.
std::filesystem::path write_results(const std::filesystem::path& out_dir, const ExperimentResult& result);

/// Per-seed runs of one arm read back from an experiment directory. Every
/// seed in [0, seeds) must be present.
std::vector<RunMetrics> read_arm(const std::filesystem::path& exp_dir, std::size_t seeds, bool controlled,
                                 const ExperimentConfig& cfg);

} // namespace stabguard
