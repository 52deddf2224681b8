// stabguard: run, verify, plot and calibrate controller experiments.
//
// Exit codes: 0 success, 1 runtime or invariant failure, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stabguard/config.hpp"
#include "stabguard/errors.hpp"
#include "stabguard/harness.hpp"
#include "stabguard/plot.hpp"
#include "stabguard/results.hpp"
#include "stabguard/verify.hpp"

namespace {

using namespace stabguard;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "experiment config file")->required();
    cmd->add_option("--set", args.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", args.seed, "master seed (overrides the config)");
    cmd->add_option("--jobs", args.jobs, "parallel seeds")->check(CLI::PositiveNumber);
}

ExperimentConfig load(const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (args.seed) {
        overrides.push_back("seed=" + std::to_string(*args.seed));
    }
    return load_config(args.config, overrides);
}

void print_arm(const char* name, const AggregateStats& a) {
    std::printf("  %-10s peak %.4g (std %.3g)  recovery %.4g (std %.3g, %zu never)  rollbacks %.3g  final norm %.4g\n",
                name, a.peak_probe_loss.mean, a.peak_probe_loss.std, a.steps_to_recovery.mean,
                a.steps_to_recovery.std, a.never_recovered, a.rollback_count.mean, a.final_param_l2.mean);
}

int cmd_run(const CommonArgs& args, const std::string& out) {
    const ExperimentConfig cfg = load(args);
    const ExperimentResult result = run_experiment(cfg, args.jobs);
    const auto dir = write_results(out, result);
    std::printf("%s: %zu seeds x %zu steps, epsilon %.6g\n", result.config.tag.c_str(), result.config.num_seeds,
                result.config.total_steps, result.config.controller.epsilon);
    print_arm("baseline", result.baseline_stats);
    print_arm("controlled", result.controlled_stats);
    std::printf("results in %s\n", dir.string().c_str());
    return kOk;
}

int cmd_verify(const CommonArgs& args, bool corrupt_restore) {
    const ExperimentConfig cfg = resolve_epsilon(load(args));
    VerifyOptions opt;
    opt.corrupt_restore = corrupt_restore;
    opt.jobs = args.jobs;
    const VerifyReport report = verify_invariants(cfg, opt);
    std::printf("%s: %zu seeds x %zu steps, epsilon %.6g\n", cfg.tag.c_str(), cfg.num_seeds, cfg.total_steps,
                cfg.controller.epsilon);
    std::fputs(format_report(report).c_str(), stdout);
    return report.passed() ? kOk : kFailure;
}

int cmd_calibrate(const CommonArgs& args) {
    const ExperimentConfig cfg = load(args);
    const Calibration cal = calibrate_epsilon(cfg);
    std::printf("warmup steps %zu, innovation std %.17g, sigmas %.17g\n", cal.innovations.size(), cal.sigma,
                cfg.calibration_sigmas);
    std::printf("controller.epsilon = %.17g\n", cal.epsilon);
    return kOk;
}

int cmd_plot(const std::string& dir) {
    for (const auto& f : plot_results(dir)) {
        std::printf("%s\n", f.string().c_str());
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Runtime stability controller experiments"};
    app.require_subcommand(1);

    CommonArgs run_args, verify_args, calib_args;
    std::string out = "results";
    bool corrupt_restore = false;
    std::string plot_dir;

    auto* run = app.add_subcommand("run", "run paired baseline/controlled experiments and write results");
    add_common(run, run_args);
    run->add_option("--out", out, "output directory");

    auto* verify = app.add_subcommand("verify", "check the controller invariants and print a pass/fail table");
    add_common(verify, verify_args);
    verify->add_flag("--corrupt-restore", corrupt_restore,
                     "test hook: perturb every restored snapshot by one ulp");

    auto* plot = app.add_subcommand("plot", "render SVG charts from a results directory");
    plot->add_option("dir", plot_dir, "results directory written by run")->required();

    auto* calibrate = app.add_subcommand("calibrate", "estimate epsilon from fault-free warmup innovations");
    add_common(calibrate, calib_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*run) {
            return cmd_run(run_args, out);
        }
        if (*verify) {
            return cmd_verify(verify_args, corrupt_restore);
        }
        if (*plot) {
            return cmd_plot(plot_dir);
        }
        return cmd_calibrate(calib_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
