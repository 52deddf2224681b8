#include "stabguard/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "stabguard/errors.hpp"

namespace stabguard {

namespace {

bool same_bits(double a, double b) {
    return bit_equal(std::span<const double>(&a, 1), std::span<const double>(&b, 1));
}

// Relative slack on the floating-point comparisons of the inequality checks.
bool within(double lhs, double rhs) {
    return lhs <= rhs + 1e-12 * std::max(1.0, std::fabs(rhs));
}

class SeedChecker {
public:
    SeedChecker(const ExperimentConfig& cfg, std::size_t seed, const VerifyOptions& opt)
        : cfg_(cfg), seed_(seed), opt_(opt), task_(build_task(cfg, seed)),
          batches_(task_.train.size(), cfg.batch_size, seed_stream(cfg, seed, streams::kBatches)) {
        for (const char* name : {kBoundedDeviation, kOneStepRecovery, kSafetyEnvelope, kFreezeOnReject,
                                 kReferenceEwma, kProbeAccounting, kPairedPrefix}) {
            results_[name].name = name;
        }
    }

    std::map<std::string, InvariantResult> run() {
        RunHooks hooks;
        hooks.on_controller = [this](StabilityController& ctl) {
            if (opt_.corrupt_restore) {
                ctl.set_restore_hook([](ParameterVector& p, OptimizerState&) {
                    p[0] = std::nextafter(p[0], std::numeric_limits<double>::infinity());
                });
            }
        };
        hooks.on_step = [this](const StepView& v) { on_controlled_step(v); };
        const RunMetrics run = run_one(cfg_, seed_, true, hooks);
        finish_controlled(run);

        if (opt_.paired_prefix) {
            RunHooks base;
            base.on_step = [this](const StepView& v) {
                if (v.step < prefix_.size()) {
                    check(kPairedPrefix, v.step, bit_equal(v.params_after, prefix_[v.step]),
                          "baseline and controlled parameters differ before the first rollback");
                }
            };
            run_one(cfg_, seed_, false, base);
        }
        return std::move(results_);
    }

private:
    double measure(std::uint64_t t, std::span<const double> params) const {
        if (cfg_.probe_source == ProbeSource::Heldout) {
            return probe_loss(task_.spec, params, *task_.probe);
        }
        return mean_loss(task_.spec, params, task_.train, batches_.batch_at(t));
    }

    void check(const char* name, std::uint64_t step, bool ok, const std::string& detail) {
        auto& r = results_[name];
        ++r.checks;
        if (!ok) {
            r.violations.push_back({name, seed_, step, detail});
        }
    }

    void on_controlled_step(const StepView& v) {
        const StepRecord& rec = *v.record;
        const std::uint64_t t = v.step;
        const double eps = v.epsilon;
        if (t == 0) {
            y0_ = measure(0, v.params_before);
            reference_ = y0_;
            max_y_ = y0_;
            safe_params_ = v.params_before;
            safe_opt_ = serialize_state(v.opt_before);
        }

        char buf[160];
        std::snprintf(buf, sizeof buf, "reference %.17g, expected %.17g", rec.y_hat, reference_);
        check(kReferenceEwma, t, same_bits(rec.y_hat, reference_), buf);
        if (frozen_) {
            std::snprintf(buf, sizeof buf, "reference moved from %.17g to %.17g after a rollback", *frozen_, rec.y_hat);
            check(kFreezeOnReject, t, same_bits(rec.y_hat, *frozen_), buf);
            frozen_.reset();
        }

        const double y_next = measure(t, v.params_after);
        if (rec.decision == Decision::Accept) {
            std::snprintf(buf, sizeof buf, "y(theta_{t+1}) = %.17g exceeds y_hat + eps = %.17g", y_next,
                          rec.y_hat + eps);
            check(kBoundedDeviation, t, within(y_next, rec.y_hat + eps) && rec.nu <= eps, buf);
            safe_params_ = v.params_after;
            safe_opt_ = serialize_state(v.opt_after);
            reference_ = (1.0 - cfg_.controller.alpha) * reference_ + cfg_.controller.alpha * y_next;
        } else if (rec.decision == Decision::Rollback) {
            seen_rollback_ = true;
            const bool params_ok = bit_equal(v.params_after, safe_params_);
            const bool opt_ok = serialize_state(v.opt_after) == safe_opt_;
            check(kOneStepRecovery, t, params_ok && opt_ok && rec.nu > eps,
                  params_ok ? (opt_ok ? "rollback with nu <= eps" : "optimizer state differs from last accepted state")
                            : "parameters differ from last accepted state");
            frozen_ = rec.y_hat;
        }
        if (!seen_rollback_ && opt_.paired_prefix) {
            prefix_.push_back(v.params_after);
        }

        max_y_ = std::isnan(y_next) ? std::numeric_limits<double>::infinity() : std::max(max_y_, y_next);
        const double bound = y0_ + static_cast<double>(t + 1) * eps;
        std::snprintf(buf, sizeof buf, "max_k y = %.17g exceeds y0 + (t+1) eps = %.17g", max_y_, bound);
        check(kSafetyEnvelope, t, within(max_y_, bound), buf);
    }

    void finish_controlled(const RunMetrics& run) {
        const std::uint64_t steps = cfg_.total_steps;
        if (frozen_) {
            check(kFreezeOnReject, steps, same_bits(run.final_reference, *frozen_),
                  "reference moved after a final rollback");
        }
        const std::uint64_t interval = cfg_.controller.probe_interval;
        const std::uint64_t expected = 1 + (steps + interval - 1) / interval;
        check(kProbeAccounting, steps, run.probe_evaluations == expected,
              "probe evaluations " + std::to_string(run.probe_evaluations) + ", expected " + std::to_string(expected));
    }

    const ExperimentConfig& cfg_;
    std::size_t seed_;
    const VerifyOptions& opt_;
    TaskData task_;
    BatchStream batches_;
    std::map<std::string, InvariantResult> results_;

    double y0_ = 0.0;
    double reference_ = 0.0;
    double max_y_ = 0.0;
    std::optional<double> frozen_;
    ParameterVector safe_params_;
    std::vector<std::uint8_t> safe_opt_;
    bool seen_rollback_ = false;
    std::vector<ParameterVector> prefix_;
};

InvariantResult gradient_suite(const ExperimentConfig& cfg) {
    InvariantResult r{kGradientCheck, 0, {}};
    const TaskData task = build_task(cfg, 0);
    RngStream rng(cfg.master_seed, 0xfd);
    for (std::uint64_t instance = 0; instance < 10; ++instance) {
        RngStream inst = rng.split(instance);
        ParameterVector params = init_params(task.spec, inst);
        // Move away from the zero biases of a fresh init.
        const Vec64 jitter = gaussian(inst, params.size(), 0.0, 0.1);
        axpy_inplace(1.0, jitter, params);
        std::vector<std::size_t> rows;
        for (int k = 0; k < 8; ++k) {
            rows.push_back(static_cast<std::size_t>(inst.next_below(task.train.size())));
        }
        std::vector<std::size_t> coords;
        for (int k = 0; k < 64; ++k) {
            coords.push_back(static_cast<std::size_t>(inst.next_below(params.size())));
        }
        const double err = gradient_relative_error(task.spec, params, task.train, rows, coords);
        ++r.checks;
        if (!(err < 1e-4)) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "max relative error %.3g on instance %llu", err,
                          static_cast<unsigned long long>(instance));
            r.violations.push_back({kGradientCheck, 0, instance, buf});
        }
    }
    return r;
}

} // namespace

bool VerifyReport::passed() const {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed(); });
}

const InvariantResult& VerifyReport::get(const std::string& name) const {
    for (const auto& r : results) {
        if (r.name == name) {
            return r;
        }
    }
    throw ParameterError("no invariant named '" + name + "' in report");
}

double gradient_relative_error(const MlpSpec& spec, std::span<const double> params, const Dataset& data,
                               std::span<const std::size_t> rows, std::span<const std::size_t> coords, double h) {
    const LossAndGrad lg = loss_and_grad(spec, params, data, rows);
    ParameterVector p(params.begin(), params.end());
    double worst = 0.0;
    auto check = [&](std::size_t i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double up = mean_loss(spec, p, data, rows);
        p[i] = orig - h;
        const double down = mean_loss(spec, p, data, rows);
        p[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        const double a = lg.grad[i];
        worst = std::max(worst, std::fabs(a - fd) / std::max(std::fabs(a) + std::fabs(fd), 1e-6));
    };
    if (coords.empty()) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            check(i);
        }
    } else {
        for (std::size_t i : coords) {
            check(i);
        }
    }
    return worst;
}

VerifyReport verify_invariants(const ExperimentConfig& cfg, const VerifyOptions& options) {
    cfg.controller.validate();
    const std::size_t seeds = options.seeds == 0 ? cfg.num_seeds : options.seeds;
    std::vector<std::map<std::string, InvariantResult>> per_seed(seeds);
    parallel_for(seeds, options.jobs, [&](std::size_t s) { per_seed[s] = SeedChecker(cfg, s, options).run(); });

    VerifyReport report;
    for (const char* name : {kBoundedDeviation, kOneStepRecovery, kSafetyEnvelope, kFreezeOnReject, kReferenceEwma,
                             kProbeAccounting, kPairedPrefix}) {
        if (name == std::string(kPairedPrefix) && !options.paired_prefix) {
            continue;
        }
        InvariantResult merged{name, 0, {}};
        for (auto& m : per_seed) {
            auto& r = m[name];
            merged.checks += r.checks;
            merged.violations.insert(merged.violations.end(), r.violations.begin(), r.violations.end());
        }
        report.results.push_back(std::move(merged));
    }
    if (options.gradient_check) {
        report.results.push_back(gradient_suite(cfg));
    }
    return report;
}

std::string format_report(const VerifyReport& report, std::size_t max_listed) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-20s %10s %11s  %s\n", "invariant", "checks", "violations", "status");
    out += buf;
    for (const auto& r : report.results) {
        std::snprintf(buf, sizeof buf, "%-20s %10llu %11zu  %s\n", r.name.c_str(),
                      static_cast<unsigned long long>(r.checks), r.violations.size(), r.passed() ? "PASS" : "FAIL");
        out += buf;
    }
    std::size_t listed = 0;
    std::size_t total = 0;
    for (const auto& r : report.results) {
        total += r.violations.size();
        for (const auto& v : r.violations) {
            if (listed < max_listed) {
                std::snprintf(buf, sizeof buf, "violation: %s seed %zu step %llu: %s\n", v.invariant.c_str(), v.seed,
                              static_cast<unsigned long long>(v.step), v.detail.c_str());
                out += buf;
                ++listed;
            }
        }
    }
    if (total > listed) {
        out += "... " + std::to_string(total - listed) + " more violations\n";
    }
    return out;
}

} // namespace stabguard
