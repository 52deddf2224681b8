#include "stabguard/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <thread>

#include "stabguard/errors.hpp"

namespace stabguard {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

SummaryStats summary_stats(std::span<const double> xs) {
    SummaryStats s;
    s.mean = mean(xs);
    double acc = 0.0;
    for (double x : xs) {
        acc += (x - s.mean) * (x - s.mean);
    }
    s.variance = xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
    s.std = std::sqrt(s.variance);
    return s;
}

SeriesStats series_stats(std::span<const RunMetrics> runs, std::size_t steps, double StepMetrics::*field) {
    SeriesStats out;
    out.mean.resize(steps);
    out.std.resize(steps);
    std::vector<double> column(runs.size());
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t r = 0; r < runs.size(); ++r) {
            column[r] = runs[r].steps[t].*field;
        }
        const SummaryStats s = summary_stats(column);
        out.mean[t] = s.mean;
        out.std[t] = s.std;
    }
    return out;
}

} // namespace

std::string_view to_string(FaultTarget t) {
    return t == FaultTarget::Gradient ? "gradient" : "update";
}

FaultTarget parse_fault_target(std::string_view text) {
    if (text == "gradient") {
        return FaultTarget::Gradient;
    }
    if (text == "update") {
        return FaultTarget::Update;
    }
    throw ParameterError("unknown fault target '" + std::string(text) + "'");
}

Vec64 apply_fault(std::span<const double> grad, std::uint64_t t, const FaultSpec& fault) {
    if (!fault.active_at(t)) {
        return Vec64(grad.begin(), grad.end());
    }
    return scaled(fault.amplification, grad);
}

std::string_view to_string(TaskKind k) {
    return k == TaskKind::Vision ? "vision" : "sequence";
}

TaskKind parse_task_kind(std::string_view text) {
    if (text == "vision") {
        return TaskKind::Vision;
    }
    if (text == "sequence") {
        return TaskKind::Sequence;
    }
    throw ParameterError("unknown task '" + std::string(text) + "'");
}

std::string_view to_string(ProbeSource s) {
    return s == ProbeSource::Heldout ? "heldout" : "training_batch";
}

ProbeSource parse_probe_source(std::string_view text) {
    if (text == "heldout") {
        return ProbeSource::Heldout;
    }
    if (text == "training_batch") {
        return ProbeSource::TrainingBatch;
    }
    throw ParameterError("unknown probe source '" + std::string(text) + "'");
}

ExperimentConfig ExperimentConfig::preset(TaskKind task) {
    ExperimentConfig c;
    c.task = task;
    if (task == TaskKind::Vision) {
        c.tag = "vision";
        c.batch_size = 128;
        c.hidden = {512};
        c.optimizer = OptimizerConfig::adamw(1e-3);
    } else {
        c.tag = "sequence";
        c.batch_size = 64;
        c.hidden = {512};
        c.optimizer = OptimizerConfig::adamw(5e-4);
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (num_seeds < 1) {
        throw ParameterError("config: seeds must be >= 1");
    }
    if (total_steps < 1) {
        throw ParameterError("config: steps must be >= 1");
    }
    if (batch_size < 1 || probe_size < 1) {
        throw ParameterError("config: batch_size and probe_size must be >= 1");
    }
    if (hidden.empty() || std::find(hidden.begin(), hidden.end(), 0u) != hidden.end()) {
        throw ParameterError("config: model.hidden needs at least one positive width");
    }
    if (task == TaskKind::Vision) {
        if (train_size < 1 || data_dim < 1 || data_classes < 2 || !(separation >= 0.0)) {
            throw ParameterError("config: invalid vision data parameters");
        }
    } else if (window < 1 || repeats < 1 || phrase.size() < 2) {
        throw ParameterError("config: invalid sequence data parameters");
    }
    optimizer.validate();
    if (epsilon_auto) {
        ControllerConfig probe_cfg = controller;
        probe_cfg.epsilon = 1.0;
        probe_cfg.validate();
        if (calibration_steps < 2 || !(calibration_sigmas > 0.0) || !std::isfinite(calibration_sigmas)) {
            throw ParameterError("config: calibration needs >= 2 steps and a positive sigma multiple");
        }
    } else {
        controller.validate();
    }
    if (!std::isfinite(fault.amplification)) {
        throw ParameterError("config: fault.zeta must be finite");
    }
    if (fault.enabled && total_steps < fault.window_end()) {
        throw ParameterError("config: steps must cover the whole fault window");
    }
}

MlpSpec ExperimentConfig::model_spec(std::size_t input_dim, std::size_t classes) const {
    MlpSpec spec;
    spec.layer_sizes.push_back(input_dim);
    spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
    spec.layer_sizes.push_back(classes);
    spec.validate();
    return spec;
}

RngStream seed_stream(const ExperimentConfig& cfg, std::size_t seed_index, std::uint64_t purpose) {
    return RngStream(cfg.master_seed, seed_index).split(purpose);
}

TaskData build_task(const ExperimentConfig& cfg, std::size_t seed_index) {
    Dataset pool;
    if (cfg.task == TaskKind::Vision) {
        RngStream data_rng = seed_stream(cfg, seed_index, streams::kData);
        pool = make_blobs(data_rng, cfg.train_size + cfg.probe_size, cfg.data_classes, cfg.data_dim, cfg.separation);
    } else {
        pool = make_char_task(cfg.phrase, cfg.window, cfg.repeats);
    }
    auto [train, probe] = split_holdout(pool, cfg.probe_size, seed_stream(cfg, seed_index, streams::kSplit));
    if (cfg.batch_size > train.size()) {
        throw ParameterError("config: batch_size exceeds the training set (" + std::to_string(train.size()) + ")");
    }
    TaskData task{cfg.model_spec(train.dim(), train.num_classes), std::move(train), std::nullopt};
    task.probe.emplace(std::move(probe));
    return task;
}

std::uint64_t digest(std::span<const double> v) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

RunMetrics run_one(const ExperimentConfig& cfg, std::size_t seed_index, bool controlled, const RunHooks& hooks) {
    const TaskData task = build_task(cfg, seed_index);
    const ProbeSet& probe = *task.probe;
    RngStream init_rng = seed_stream(cfg, seed_index, streams::kInit);
    ParameterVector params = init_params(task.spec, init_rng);
    OptimizerState opt = OptimizerState::zeros(cfg.optimizer.kind, params.size());
    const BatchStream batches(task.train.size(), cfg.batch_size, seed_stream(cfg, seed_index, streams::kBatches));

    // The measurement may read the current batch, which is refreshed at the
    // top of every iteration before the controller sees the proposal.
    std::vector<std::size_t> rows;
    const bool heldout = !hooks.measurement && cfg.probe_source == ProbeSource::Heldout;
    Measurement measure;
    if (hooks.measurement) {
        measure = [&](std::span<const double> p) { return hooks.measurement(task, p); };
    } else if (heldout) {
        measure = [&](std::span<const double> p) { return probe_loss(task.spec, p, probe); };
    } else {
        measure = [&](std::span<const double> p) { return mean_loss(task.spec, p, task.train, rows); };
    }

    RunMetrics run;
    run.seed_index = seed_index;
    run.controlled = controlled;
    run.probe_external = heldout;
    run.initial_probe = probe_loss(task.spec, params, probe);
    run.steps.reserve(cfg.total_steps);

    rows = batches.batch_at(0);
    std::unique_ptr<StabilityController> ctl;
    double shadow_ref = 0.0;
    if (controlled) {
        ctl = std::make_unique<StabilityController>(params, opt, cfg.optimizer, measure, cfg.controller);
        if (hooks.on_controller) {
            hooks.on_controller(*ctl);
        }
    } else {
        shadow_ref = measure(params);
        ++run.probe_evaluations;
    }

    const FaultSpec& fault = cfg.fault;
    for (std::uint64_t t = 0; t < cfg.total_steps; ++t) {
        rows = batches.batch_at(t);
        const auto grad_start = Clock::now();
        LossAndGrad lg = loss_and_grad(task.spec, params, task.train, rows);
        if (fault.target == FaultTarget::Gradient && fault.active_at(t)) {
            lg.grad = apply_fault(lg.grad, t, fault);
        }
        run.train_seconds += seconds_since(grad_start);
        const double gain =
            fault.target == FaultTarget::Update && fault.active_at(t) ? fault.amplification : 1.0;

        StepMetrics m;
        m.step = t;
        m.train_loss = lg.loss;
        ParameterVector next;
        OptimizerState next_opt;
        const StepRecord* record = nullptr;
        StepRecord rec;
        if (controlled) {
            StepResult res = ctl->step(params, opt, lg.grad, gain);
            rec = res.record;
            record = &rec;
            run.train_seconds += rec.update_ms / 1000.0;
            run.probe_seconds += rec.probe_ms / 1000.0;
            m.y_prop = rec.y_prop;
            m.reference = rec.y_hat;
            m.innovation = rec.nu;
            m.decision = rec.decision;
            // An accepted proposal was already scored on the probe.
            m.probe_loss = heldout && rec.decision == Decision::Accept ? rec.y_prop
                                                                       : probe_loss(task.spec, res.params, probe);
            next = std::move(res.params);
            next_opt = std::move(res.opt_state);
        } else {
            const auto update_start = Clock::now();
            Proposal prop = propose_update(opt, cfg.optimizer, params, lg.grad);
            if (gain != 1.0) {
                for (auto& d : prop.delta) {
                    d *= gain;
                }
            }
            next = axpy(1.0, prop.delta, params);
            next_opt = std::move(prop.next_state);
            run.train_seconds += seconds_since(update_start);

            const auto probe_start = Clock::now();
            m.y_prop = measure(next);
            run.probe_seconds += seconds_since(probe_start);
            ++run.probe_evaluations;
            m.reference = shadow_ref;
            m.innovation = innovation(m.y_prop, shadow_ref);
            m.decision = Decision::Accept;
            m.probe_loss = heldout ? m.y_prop : probe_loss(task.spec, next, probe);
            if (std::isfinite(m.y_prop)) {
                shadow_ref = (1.0 - cfg.controller.alpha) * shadow_ref + cfg.controller.alpha * m.y_prop;
            }
        }
        m.param_l2 = l2_norm(next);
        m.param_digest = digest(next);
        if (hooks.on_step) {
            hooks.on_step(StepView{t, params, opt, next, next_opt, record, cfg.controller.epsilon});
        }
        params = std::move(next);
        opt = std::move(next_opt);
        run.steps.push_back(m);
    }
    if (controlled) {
        run.probe_evaluations = ctl->probe_evaluations();
        run.final_reference = ctl->reference();
        run.decision_log = ctl->log();
    } else {
        run.final_reference = shadow_ref;
    }
    summarize(run, cfg);
    return run;
}

void summarize(RunMetrics& run, const ExperimentConfig& cfg) {
    const std::uint64_t onset = cfg.fault.onset;
    const std::uint64_t end = cfg.fault.window_end();
    const std::size_t n = run.steps.size();

    const std::uint64_t pre_begin = onset >= 20 ? onset - 20 : 0;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::uint64_t t = pre_begin; t < onset && t < n; ++t) {
        acc += run.steps[t].probe_loss;
        ++count;
    }
    run.pre_fault_mean = count > 0 ? acc / static_cast<double>(count) : kNaN;

    run.peak_probe_loss = -kInf;
    for (std::uint64_t t = onset; t < n; ++t) {
        const double y = run.steps[t].probe_loss;
        run.peak_probe_loss = std::isnan(y) ? kInf : std::max(run.peak_probe_loss, y);
        if (run.peak_probe_loss == kInf) {
            break;
        }
    }

    run.steps_to_recovery.reset();
    const double threshold = 1.1 * run.pre_fault_mean;
    for (std::uint64_t t = end; t < n; ++t) {
        if (run.steps[t].probe_loss <= threshold) {
            run.steps_to_recovery = t - end;
            break;
        }
    }

    run.rollback_steps.clear();
    for (const auto& s : run.steps) {
        if (s.decision == Decision::Rollback) {
            run.rollback_steps.push_back(s.step);
        }
    }
    run.rollback_count = run.rollback_steps.size();
    run.final_param_l2 = n > 0 ? run.steps.back().param_l2 : kNaN;
}

double recovery_censor_value(const ExperimentConfig& cfg) {
    const std::uint64_t end = cfg.fault.window_end();
    return cfg.total_steps > end ? static_cast<double>(cfg.total_steps - end) : 0.0;
}

AggregateStats aggregate(std::span<const RunMetrics> runs, const ExperimentConfig& cfg, std::size_t expected_runs) {
    if (runs.size() != expected_runs || runs.empty()) {
        throw ParameterError("aggregate: expected " + std::to_string(expected_runs) + " runs, got " +
                             std::to_string(runs.size()));
    }
    for (const auto& r : runs) {
        if (r.steps.size() != cfg.total_steps) {
            throw ParameterError("aggregate: seed " + std::to_string(r.seed_index) + " has " +
                                 std::to_string(r.steps.size()) + " steps, expected " +
                                 std::to_string(cfg.total_steps));
        }
    }
    AggregateStats out;
    out.runs = runs.size();
    out.probe_loss = series_stats(runs, cfg.total_steps, &StepMetrics::probe_loss);
    out.innovation = series_stats(runs, cfg.total_steps, &StepMetrics::innovation);
    out.param_l2 = series_stats(runs, cfg.total_steps, &StepMetrics::param_l2);

    std::vector<double> peak, recovery, rollbacks, norm;
    const double censor = recovery_censor_value(cfg);
    for (const auto& r : runs) {
        peak.push_back(r.peak_probe_loss);
        if (r.steps_to_recovery) {
            recovery.push_back(static_cast<double>(*r.steps_to_recovery));
        } else {
            recovery.push_back(censor);
            ++out.never_recovered;
        }
        rollbacks.push_back(static_cast<double>(r.rollback_count));
        norm.push_back(r.final_param_l2);
    }
    out.peak_probe_loss = summary_stats(peak);
    out.steps_to_recovery = summary_stats(recovery);
    out.rollback_count = summary_stats(rollbacks);
    out.final_param_l2 = summary_stats(norm);
    return out;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), n);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t k = 0; k < threads; ++k) {
            pool.emplace_back(worker);
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs) {
    ExperimentResult result;
    result.config = resolve_epsilon(cfg);
    const ExperimentConfig& c = result.config;
    result.baseline.resize(c.num_seeds);
    result.controlled.resize(c.num_seeds);
    parallel_for(c.num_seeds, jobs, [&](std::size_t seed) {
        try {
            result.baseline[seed] = run_one(c, seed, false);
            result.controlled[seed] = run_one(c, seed, true);
        } catch (const std::exception& e) {
            throw RunFailure(seed, e.what());
        }
    });
    result.baseline_stats = aggregate(result.baseline, c, c.num_seeds);
    result.controlled_stats = aggregate(result.controlled, c, c.num_seeds);
    return result;
}

Calibration calibrate_epsilon(const ExperimentConfig& cfg) {
    ExperimentConfig warm = cfg;
    warm.fault.enabled = false;
    warm.total_steps = cfg.calibration_steps;
    const RunMetrics run = run_one(warm, 0, false);

    Calibration cal;
    for (const auto& s : run.steps) {
        cal.innovations.push_back(s.innovation);
    }
    cal.sigma = stddev(cal.innovations);
    cal.epsilon = cfg.calibration_sigmas * cal.sigma;
    if (!(cal.epsilon > 0.0) || !std::isfinite(cal.epsilon)) {
        throw InitializationError("calibration: warmup innovations give a non-positive or non-finite epsilon");
    }
    return cal;
}

ExperimentConfig resolve_epsilon(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentConfig out = cfg;
    if (cfg.epsilon_auto) {
        out.controller.epsilon = calibrate_epsilon(cfg).epsilon;
        out.epsilon_auto = false;
    }
    out.controller.validate();
    return out;
}

AdmissibilityReport admissibility_report(const RunMetrics& run, const FaultSpec& fault) {
    AdmissibilityReport rep;
    rep.externality = run.probe_external;
    rep.has_fault_window = fault.enabled;
    const std::uint64_t nominal_end = fault.enabled ? fault.onset : run.steps.size();
    if (nominal_end < 30 || run.steps.size() < 30) {
        throw ParameterError("admissibility_report: needs at least 30 pre-fault steps");
    }

    bool nominal_rollback = false;
    for (std::uint64_t t = 0; t < nominal_end && t < run.steps.size(); ++t) {
        const auto& s = run.steps[t];
        if (s.decision == Decision::Skipped || std::isnan(s.innovation)) {
            continue;
        }
        rep.max_nominal_abs_nu = std::max(rep.max_nominal_abs_nu, std::fabs(s.innovation));
        nominal_rollback = nominal_rollback || s.decision == Decision::Rollback;
    }
    rep.nominal_stability = std::isfinite(rep.max_nominal_abs_nu) && !nominal_rollback;

    if (!fault.enabled) {
        rep.summary = "no fault window";
        return rep;
    }
    rep.max_fault_nu = -kInf;
    for (std::uint64_t t = fault.onset; t < fault.window_end() && t < run.steps.size(); ++t) {
        const double nu = run.steps[t].innovation;
        if (!std::isnan(nu)) {
            rep.max_fault_nu = std::max(rep.max_fault_nu, nu);
        }
    }
    rep.separation_ratio =
        rep.max_nominal_abs_nu > 0.0 ? rep.max_fault_nu / rep.max_nominal_abs_nu : kInf;
    rep.catastrophic_sensitivity = *rep.separation_ratio > 5.0;
    rep.admissible = rep.externality && rep.nominal_stability && rep.catastrophic_sensitivity;

    std::string s;
    s += rep.externality ? "externality ok" : "externality violated (probe is the training batch)";
    s += rep.nominal_stability ? "; nominal stability ok" : "; nominal stability violated";
    s += rep.catastrophic_sensitivity ? "; catastrophic sensitivity ok" : "; catastrophic sensitivity too weak";
    rep.summary = s;
    return rep;
}

double overhead_ratio(std::size_t probe_size, std::size_t batch_size) {
    if (batch_size == 0) {
        throw ParameterError("overhead_ratio: batch_size must be > 0");
    }
    return static_cast<double>(probe_size) / (3.0 * static_cast<double>(batch_size));
}

double measured_overhead(const RunMetrics& run) {
    return run.train_seconds > 0.0 ? run.probe_seconds / run.train_seconds : 0.0;
}

} // namespace stabguard
