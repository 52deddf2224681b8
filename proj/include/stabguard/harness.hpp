#pragma once

// Fault injection, paired baseline/controlled runs, multi-seed aggregation,
// innovation-signal diagnostics and the probe overhead model.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stabguard/controller.hpp"
#include "stabguard/model.hpp"
#include "stabguard/numerics.hpp"
#include "stabguard/optimizers.hpp"

namespace stabguard {

/// Which vector the amplification factor multiplies inside the window.
enum class FaultTarget : std::uint8_t {
    Gradient, // raw gradient, before the optimizer
    Update,   // the optimizer's proposed delta
};

std::string_view to_string(FaultTarget t);
FaultTarget parse_fault_target(std::string_view text);

/// Amplification by `amplification` on the half-open window
/// [onset, onset + duration).
struct FaultSpec {
    bool enabled = true;
    std::uint64_t onset = 120;
    std::uint64_t duration = 10;
    double amplification = 300.0;
    FaultTarget target = FaultTarget::Update;

    bool active_at(std::uint64_t t) const { return enabled && t >= onset && t - onset < duration; }
    std::uint64_t window_end() const { return onset + duration; }

    friend bool operator==(const FaultSpec&, const FaultSpec&) = default;
};

/// zeta * grad inside the window, an exact copy of grad outside it.
Vec64 apply_fault(std::span<const double> grad, std::uint64_t t, const FaultSpec& fault);

enum class TaskKind : std::uint8_t { Vision, Sequence };
std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view text);

enum class ProbeSource : std::uint8_t {
    Heldout,       // the fixed held-out probe set
    TrainingBatch, // the current mini-batch (violates externality on purpose)
};
std::string_view to_string(ProbeSource s);
ProbeSource parse_probe_source(std::string_view text);

struct ExperimentConfig {
    std::string tag = "vision";
    TaskKind task = TaskKind::Vision;
    std::uint64_t master_seed = 0;
    std::size_t num_seeds = 20;
    std::size_t total_steps = 250;
    std::size_t batch_size = 128;
    std::size_t probe_size = 16;
    ProbeSource probe_source = ProbeSource::Heldout;
    std::vector<std::size_t> hidden{512};

    // Vision analogue: Gaussian blobs.
    std::size_t train_size = 1024;
    std::size_t data_dim = 2;
    std::size_t data_classes = 4;
    double separation = 3.0;

    // Sequence analogue: next character over a repeated phrase.
    std::string phrase = "she sells sea shells by the sea shore ";
    std::size_t window = 3;
    std::size_t repeats = 8;

    OptimizerConfig optimizer = OptimizerConfig::adamw(1e-3);
    ControllerConfig controller;
    bool epsilon_auto = true; // calibrate epsilon before running
    std::size_t calibration_steps = 50;
    double calibration_sigmas = 6.0;
    FaultSpec fault;

    /// Defaults for one task family.
    static ExperimentConfig preset(TaskKind task);

    /// Everything except epsilon when epsilon_auto is set.
    void validate() const;
    MlpSpec model_spec(std::size_t input_dim, std::size_t classes) const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Concrete data and model shape for one seed.
struct TaskData {
    MlpSpec spec;
    Dataset train;
    std::optional<ProbeSet> probe;
};

TaskData build_task(const ExperimentConfig& cfg, std::size_t seed_index);

/// Purpose keys of the per-seed streams.
namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kBatches = 4;
} // namespace streams

/// Independent per-purpose streams derived from (master seed, seed index).
RngStream seed_stream(const ExperimentConfig& cfg, std::size_t seed_index, std::uint64_t purpose);

struct StepMetrics {
    std::uint64_t step = 0;
    double train_loss = 0.0;  // batch loss at the pre-step parameters
    double probe_loss = 0.0;  // held-out probe loss after the step
    double y_prop = 0.0;      // measurement of the proposal
    double reference = 0.0;   // y_hat the step was judged against
    double innovation = 0.0;
    double param_l2 = 0.0;    // after the step
    Decision decision = Decision::Accept;
    std::uint64_t param_digest = 0;
};

struct RunMetrics {
    std::size_t seed_index = 0;
    bool controlled = false;
    bool probe_external = true;
    double initial_probe = 0.0;
    std::vector<StepMetrics> steps;

    double pre_fault_mean = 0.0;
    double peak_probe_loss = 0.0;
    std::optional<std::uint64_t> steps_to_recovery; // nullopt: never recovered
    std::size_t rollback_count = 0;
    std::vector<std::uint64_t> rollback_steps;
    double final_param_l2 = 0.0;
    double final_reference = 0.0; // y_hat after the last step (shadow EWMA for the baseline)
    std::uint64_t probe_evaluations = 0;

    // Wall-clock, excluded from every deterministic output.
    double probe_seconds = 0.0;
    double train_seconds = 0.0;
    std::vector<StepRecord> decision_log;
};

/// Everything an observer can see about one iteration.
struct StepView {
    std::uint64_t step;
    const ParameterVector& params_before;
    const OptimizerState& opt_before;
    const ParameterVector& params_after;
    const OptimizerState& opt_after;
    const StepRecord* record; // null for the unsupervised arm
    double epsilon;
};

struct RunHooks {
    std::function<void(StabilityController&)> on_controller;
    std::function<void(const StepView&)> on_step;
    /// Overrides the measurement used by the controller's decisions.
    std::function<double(const TaskData&, std::span<const double>)> measurement;
};

/// FNV-1a over the raw bytes of a vector.
std::uint64_t digest(std::span<const double> v);

/// One run of `total_steps`. The baseline arm applies every proposal; the
/// controlled arm routes each step through a StabilityController. Both arms
/// share initialization and batch order for a given seed index.
RunMetrics run_one(const ExperimentConfig& cfg, std::size_t seed_index, bool controlled, const RunHooks& hooks = {});

/// Recomputes the summary fields of `run` from its per-step series.
void summarize(RunMetrics& run, const ExperimentConfig& cfg);

struct SeriesStats {
    std::vector<double> mean;
    std::vector<double> std; // population standard deviation across seeds
};

struct SummaryStats {
    double mean = 0.0;
    double variance = 0.0;
    double std = 0.0;
};

struct AggregateStats {
    std::size_t runs = 0;
    SeriesStats probe_loss;
    SeriesStats innovation;
    SeriesStats param_l2;
    SummaryStats peak_probe_loss;
    SummaryStats steps_to_recovery; // never-recovered runs count as the censoring value
    SummaryStats rollback_count;
    SummaryStats final_param_l2;
    std::size_t never_recovered = 0;
};

/// Censoring value for a run that never recovers: one past the largest
/// attainable recovery time.
double recovery_censor_value(const ExperimentConfig& cfg);

AggregateStats aggregate(std::span<const RunMetrics> runs, const ExperimentConfig& cfg, std::size_t expected_runs);

struct ExperimentResult {
    ExperimentConfig config; // epsilon resolved
    std::vector<RunMetrics> baseline;
    std::vector<RunMetrics> controlled;
    AggregateStats baseline_stats;
    AggregateStats controlled_stats;
};

/// Thrown when one seed fails; carries the seed index.
class RunFailure : public std::runtime_error {
public:
    RunFailure(std::size_t seed_index, const std::string& what)
        : std::runtime_error("seed " + std::to_string(seed_index) + ": " + what), seed_index_(seed_index) {}
    std::size_t seed_index() const { return seed_index_; }

private:
    std::size_t seed_index_;
};

/// Resolves epsilon if needed, then runs `num_seeds` paired runs on up to
/// `jobs` threads. Results do not depend on `jobs`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1);

/// Runs `fn(i)` for i in [0, n) across `jobs` threads; rethrows the failure
/// of the lowest index.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct Calibration {
    double epsilon = 0.0;
    double sigma = 0.0;
    std::vector<double> innovations;
};

/// Fault-free unsupervised warmup of `calibration_steps` on seed 0; epsilon
/// is `calibration_sigmas` standard deviations of the warmup innovations.
Calibration calibrate_epsilon(const ExperimentConfig& cfg);

/// Copy of cfg with epsilon calibrated when epsilon_auto is set.
ExperimentConfig resolve_epsilon(const ExperimentConfig& cfg);

struct AdmissibilityReport {
    bool has_fault_window = false;
    bool externality = false;
    bool nominal_stability = false;
    bool catastrophic_sensitivity = false;
    bool admissible = false;
    double max_nominal_abs_nu = 0.0;
    double max_fault_nu = 0.0;
    std::optional<double> separation_ratio;
    std::string summary;
};

/// Nominal steps are the pre-fault steps; the fault window is
/// [onset, onset + duration). Requires at least 30 pre-fault steps.
AdmissibilityReport admissibility_report(const RunMetrics& run, const FaultSpec& fault);

/// Probe cost relative to a forward+backward pass, |P| / (3 |batch|).
double overhead_ratio(std::size_t probe_size, std::size_t batch_size);

/// Probe wall time over training (gradient + update) wall time.
double measured_overhead(const RunMetrics& run);

} // namespace stabguard
