#include "stabguard/controller.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>

#include "stabguard/errors.hpp"

namespace stabguard {

namespace {

constexpr std::uint8_t kSnapshotVersion = 1;

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

} // namespace

void ControllerConfig::validate() const {
    if (!(epsilon > 0.0) || std::isnan(epsilon)) {
        throw ParameterError("controller: epsilon must be > 0");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ParameterError("controller: alpha must lie in (0, 1)");
    }
    if (probe_interval < 1) {
        throw ParameterError("controller: probe_interval must be >= 1");
    }
}

std::string_view to_string(Decision d) {
    switch (d) {
    case Decision::Accept:
        return "accept";
    case Decision::Rollback:
        return "rollback";
    case Decision::Skipped:
        return "skipped";
    }
    return "unknown";
}

Decision parse_decision(std::string_view text) {
    if (text == "accept") {
        return Decision::Accept;
    }
    if (text == "rollback") {
        return Decision::Rollback;
    }
    if (text == "skipped") {
        return Decision::Skipped;
    }
    throw FormatError("unknown decision '" + std::string(text) + "'");
}

double innovation(double y_prop, double y_hat) {
    if (std::isnan(y_prop) || y_prop == std::numeric_limits<double>::infinity()) {
        return std::numeric_limits<double>::infinity();
    }
    return y_prop - y_hat;
}

Decision decide(double nu, double epsilon) {
    return nu <= epsilon ? Decision::Accept : Decision::Rollback;
}

std::vector<std::uint8_t> serialize_snapshot(const Snapshot& snap) {
    if (snap.params.size() != snap.opt_state.dim()) {
        throw DimensionError("snapshot: params and optimizer state differ in dimension");
    }
    std::vector<std::uint8_t> out{'S', 'N', 'A', 'P', kSnapshotVersion};
    const auto opt = serialize_state(snap.opt_state);
    out.insert(out.end(), opt.begin(), opt.end());
    for (double x : snap.params) {
        detail::put_f64(out, x);
    }
    detail::put_f64(out, snap.y_hat);
    detail::put_u64(out, snap.step_taken_at);
    return out;
}

Snapshot deserialize_snapshot(std::span<const std::uint8_t> bytes) {
    detail::ByteReader in(bytes);
    in.expect_magic("SNAP");
    const std::uint8_t version = in.u8();
    if (version != kSnapshotVersion) {
        throw FormatError("unsupported snapshot version " + std::to_string(version));
    }
    Snapshot snap;
    snap.opt_state = detail::read_state(in);
    const std::size_t dim = snap.opt_state.dim();
    if (dim > in.remaining() / 8) {
        throw FormatError("snapshot: parameter payload truncated");
    }
    snap.params.resize(dim);
    for (auto& x : snap.params) {
        x = in.f64();
    }
    snap.y_hat = in.f64();
    snap.step_taken_at = in.u64();
    if (in.remaining() != 0) {
        throw FormatError("trailing bytes after snapshot");
    }
    return snap;
}

void SnapshotBuffer::barrier() {
    if (pending_.valid()) {
        pending_.get();
    }
}

void SnapshotBuffer::store(std::span<const double> params, const OptimizerState& opt_state, double y_hat,
                           std::uint64_t step_taken_at) {
    barrier();
    has_value_ = true;
    if (!async_) {
        committed_.params.assign(params.begin(), params.end());
        committed_.opt_state = opt_state;
        committed_.y_hat = y_hat;
        committed_.step_taken_at = step_taken_at;
        return;
    }
    // The worker owns private copies of the sources; the caller may mutate
    // its own buffers immediately.
    pending_ = std::async(std::launch::async,
                          [this, src = ParameterVector(params.begin(), params.end()), opt = opt_state, y_hat,
                           step_taken_at]() mutable {
                              committed_.params.assign(src.begin(), src.end());
                              committed_.opt_state = std::move(opt);
                              committed_.y_hat = y_hat;
                              committed_.step_taken_at = step_taken_at;
                          });
}

const Snapshot& SnapshotBuffer::view() {
    barrier();
    return committed_;
}

std::pair<ParameterVector, OptimizerState> SnapshotBuffer::restore() {
    barrier();
    return {committed_.params, committed_.opt_state};
}

StabilityController::StabilityController(const ParameterVector& params0, const OptimizerState& opt0,
                                         OptimizerConfig optimizer, Measurement measure, ControllerConfig config)
    : optimizer_(optimizer), measure_(std::move(measure)), config_(config), snapshots_(config.async_snapshot) {
    config_.validate();
    optimizer_.validate();
    if (!measure_) {
        throw ParameterError("controller: a measurement function is required");
    }
    if (params0.size() != opt0.dim()) {
        throw DimensionError("controller: params and optimizer state differ in dimension");
    }
    y_hat_ = measure_(params0);
    ++probe_evaluations_;
    if (!std::isfinite(y_hat_)) {
        throw InitializationError("controller: initial probe value is not finite");
    }
    snapshots_.store(params0, opt0, y_hat_, 0);
}

void StabilityController::store_snapshot(std::span<const double> params, const OptimizerState& opt_state,
                                         double y_hat) {
    snapshots_.store(params, opt_state, y_hat, step_);
}

std::pair<ParameterVector, OptimizerState> StabilityController::restore_snapshot() {
    return snapshots_.restore();
}

StepResult StabilityController::step(const ParameterVector& params, const OptimizerState& opt_state,
                                     std::span<const double> grad, double update_gain) {
    const std::uint64_t t = step_;
    const auto propose_start = std::chrono::steady_clock::now();
    Proposal proposal = propose_update(opt_state, optimizer_, params, grad);
    if (update_gain != 1.0) {
        for (auto& d : proposal.delta) {
            d *= update_gain;
        }
    }
    ParameterVector proposed = axpy(1.0, proposal.delta, params);
    StepRecord rec;
    rec.step = t;
    rec.update_ms = elapsed_ms(propose_start);
    rec.y_hat = y_hat_;
    ++step_;

    if (t % config_.probe_interval != 0) {
        rec.y_prop = std::numeric_limits<double>::quiet_NaN();
        rec.nu = std::numeric_limits<double>::quiet_NaN();
        rec.decision = Decision::Skipped;
        rec.param_l2 = l2_norm(proposed);
        log_.push_back(rec);
        return {std::move(proposed), std::move(proposal.next_state), rec};
    }

    const auto probe_start = std::chrono::steady_clock::now();
    rec.y_prop = measure_(proposed);
    rec.probe_ms = elapsed_ms(probe_start);
    ++probe_evaluations_;
    rec.nu = innovation(rec.y_prop, y_hat_);
    rec.decision = decide(rec.nu, config_.epsilon);

    StepResult out;
    if (rec.decision == Decision::Accept) {
        // y(theta_{t+1}) is the probe value just computed: theta_{t+1} is the
        // proposal and the measurement is pure.
        y_hat_ = (1.0 - config_.alpha) * y_hat_ + config_.alpha * rec.y_prop;
        snapshots_.store(proposed, proposal.next_state, y_hat_, step_);
        out.params = std::move(proposed);
        out.opt_state = std::move(proposal.next_state);
    } else {
        auto [p, o] = snapshots_.restore();
        if (restore_hook_) {
            restore_hook_(p, o);
        }
        out.params = std::move(p);
        out.opt_state = std::move(o);
    }
    rec.param_l2 = l2_norm(out.params);
    out.record = rec;
    log_.push_back(rec);
    return out;
}

void write_decision_log(std::ostream& out, std::span<const StepRecord> log) {
    out << "step,y_prop,y_hat,nu,decision,param_l2,probe_ms\n";
    char buf[256];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%s,%.17g,%.6f\n",
                      static_cast<unsigned long long>(r.step), r.y_prop, r.y_hat, r.nu,
                      std::string(to_string(r.decision)).c_str(), r.param_l2, r.probe_ms);
        out << buf;
    }
}

} // namespace stabguard
