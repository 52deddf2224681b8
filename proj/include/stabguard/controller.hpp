#pragma once

// Runtime stability controller with state recovery.
//
// Every optimizer proposal is scored on an external measurement (a held-out
// probe loss). The innovation nu = y(theta_prop) - y_hat is compared with a
// tolerance epsilon: nu <= epsilon commits the proposal and refreshes the
// snapshot and the EWMA reference y_hat; anything else restores the last
// accepted (params, optimizer state) exactly and freezes y_hat.

#include <cstdint>
#include <functional>
#include <future>
#include <iosfwd>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "stabguard/numerics.hpp"
#include "stabguard/optimizers.hpp"

namespace stabguard {

struct ControllerConfig {
    double epsilon = 0.0; // acceptance tolerance, must be > 0
    double alpha = 0.1;   // EWMA smoothing, in (0, 1)
    std::uint64_t probe_interval = 1;
    bool async_snapshot = false;

    void validate() const;

    friend bool operator==(const ControllerConfig&, const ControllerConfig&) = default;
};

enum class Decision : std::uint8_t {
    Accept = 0,
    Rollback = 1,
    Skipped = 2,
};

std::string_view to_string(Decision d);
Decision parse_decision(std::string_view text);

/// y_prop - y_hat, except that NaN or +inf probe values map to +inf so that
/// they always trigger a rollback.
double innovation(double y_prop, double y_hat);

/// Accept iff nu <= epsilon (the boundary accepts).
Decision decide(double nu, double epsilon);

struct Snapshot {
    ParameterVector params;
    OptimizerState opt_state;
    double y_hat = 0.0;
    std::uint64_t step_taken_at = 0;
};

/// "SNAP" | version u8 | OPT1 record | params f64[dim] | y_hat f64 | step u64.
std::vector<std::uint8_t> serialize_snapshot(const Snapshot& snap);
Snapshot deserialize_snapshot(std::span<const std::uint8_t> bytes);

/// Single-slot snapshot store with a consistency barrier.
///
/// In async mode `store` hands the copy to a worker and returns at once;
/// every read (and the next store) first waits for that copy to land, so a
/// reader never observes a partially written snapshot.
class SnapshotBuffer {
public:
    explicit SnapshotBuffer(bool async = false) : async_(async) {}
    SnapshotBuffer(const SnapshotBuffer&) = delete;
    SnapshotBuffer& operator=(const SnapshotBuffer&) = delete;
    SnapshotBuffer(SnapshotBuffer&&) = delete;
    SnapshotBuffer& operator=(SnapshotBuffer&&) = delete;
    ~SnapshotBuffer() { barrier(); }

    void store(std::span<const double> params, const OptimizerState& opt_state, double y_hat,
               std::uint64_t step_taken_at);
    const Snapshot& view();
    std::pair<ParameterVector, OptimizerState> restore();
    void barrier();
    bool has_value() const { return has_value_; }

private:
    bool async_;
    bool has_value_ = false;
    Snapshot committed_;
    std::future<void> pending_;
};

struct StepRecord {
    std::uint64_t step = 0;
    double y_prop = 0.0; // probe value of the proposal (NaN when skipped)
    double y_hat = 0.0;  // reference the decision was made against
    double nu = 0.0;     // innovation (NaN when skipped)
    Decision decision = Decision::Skipped;
    double param_l2 = 0.0; // norm of the parameters the step returns
    double probe_ms = 0.0;
    double update_ms = 0.0; // optimizer proposal time, not exported
};

struct StepResult {
    ParameterVector params;
    OptimizerState opt_state;
    StepRecord record;
};

/// Scalar measurement of a parameter vector; must be a pure function.
using Measurement = std::function<double(std::span<const double>)>;

class StabilityController {
public:
    /// Evaluates y(params0) as the initial reference and stores the initial
    /// snapshot. Throws InitializationError if that value is not finite.
    StabilityController(const ParameterVector& params0, const OptimizerState& opt0, OptimizerConfig optimizer,
                        Measurement measure, ControllerConfig config);

    StabilityController(const StabilityController&) = delete;
    StabilityController& operator=(const StabilityController&) = delete;

    /// One supervised iteration from (params, opt_state) with gradient `grad`.
    /// `update_gain` multiplies the proposed delta before it is measured; fault
    /// injection uses it, normal training leaves it at 1.
    StepResult step(const ParameterVector& params, const OptimizerState& opt_state, std::span<const double> grad,
                    double update_gain = 1.0);

    double reference() const { return y_hat_; }
    const ControllerConfig& config() const { return config_; }
    const OptimizerConfig& optimizer() const { return optimizer_; }
    std::uint64_t steps_taken() const { return step_; }
    std::uint64_t probe_evaluations() const { return probe_evaluations_; }
    const std::vector<StepRecord>& log() const { return log_; }

    const Snapshot& snapshot() { return snapshots_.view(); }
    void store_snapshot(std::span<const double> params, const OptimizerState& opt_state, double y_hat);
    std::pair<ParameterVector, OptimizerState> restore_snapshot();

    /// Test hook: runs on every state returned by a rollback. Used to seed a
    /// deliberately broken restore into verification runs.
    void set_restore_hook(std::function<void(ParameterVector&, OptimizerState&)> hook) {
        restore_hook_ = std::move(hook);
    }

private:
    OptimizerConfig optimizer_;
    Measurement measure_;
    ControllerConfig config_;
    double y_hat_ = 0.0;
    std::uint64_t step_ = 0;
    std::uint64_t probe_evaluations_ = 0;
    SnapshotBuffer snapshots_;
    std::vector<StepRecord> log_;
    std::function<void(ParameterVector&, OptimizerState&)> restore_hook_;
};

/// CSV with header step,y_prop,y_hat,nu,decision,param_l2,probe_ms.
void write_decision_log(std::ostream& out, std::span<const StepRecord> log);

} // namespace stabguard
