#include "stabguard/results.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "stabguard/config.hpp"
#include "stabguard/errors.hpp"

namespace stabguard {

namespace {

constexpr const char* kRunHeader = "step,train_loss,probe_loss,y_prop,reference,innovation,param_l2,decision";

using Json = nlohmann::ordered_json;

// JSON has no NaN or infinity; those become null.
Json number(double x) {
    return std::isfinite(x) ? Json(x) : Json(nullptr);
}

Json run_summary(const RunMetrics& r) {
    Json j;
    j["pre_fault_mean"] = number(r.pre_fault_mean);
    j["peak_probe_loss"] = number(r.peak_probe_loss);
    j["steps_to_recovery"] = r.steps_to_recovery ? Json(*r.steps_to_recovery) : Json(nullptr);
    j["rollback_count"] = r.rollback_count;
    j["rollback_steps"] = r.rollback_steps;
    j["final_param_l2"] = number(r.final_param_l2);
    j["probe_evaluations"] = r.probe_evaluations;
    return j;
}

Json series_json(const SeriesStats& s) {
    Json mean = Json::array();
    Json std = Json::array();
    for (double x : s.mean) {
        mean.push_back(number(x));
    }
    for (double x : s.std) {
        std.push_back(number(x));
    }
    return Json{{"mean", mean}, {"std", std}};
}

Json stat_json(const SummaryStats& s) {
    return Json{{"mean", number(s.mean)}, {"variance", number(s.variance)}, {"std", number(s.std)}};
}

Json aggregate_json(const AggregateStats& a) {
    Json j;
    j["runs"] = a.runs;
    j["peak_probe_loss"] = stat_json(a.peak_probe_loss);
    j["steps_to_recovery"] = stat_json(a.steps_to_recovery);
    j["never_recovered"] = a.never_recovered;
    j["rollback_count"] = stat_json(a.rollback_count);
    j["final_param_l2"] = stat_json(a.final_param_l2);
    j["probe_loss"] = series_json(a.probe_loss);
    j["innovation"] = series_json(a.innovation);
    j["param_l2"] = series_json(a.param_l2);
    return j;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
}

double parse_field(std::string_view s, std::size_t line) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
        throw FormatError("run csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
    }
    return x;
}

} // namespace

void write_run_csv(std::ostream& out, const RunMetrics& run) {
    out << kRunHeader << '\n';
    char buf[512];
    for (const auto& s : run.steps) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                      static_cast<unsigned long long>(s.step), s.train_loss, s.probe_loss, s.y_prop, s.reference,
                      s.innovation, s.param_l2, std::string(to_string(s.decision)).c_str());
        out << buf;
    }
}

std::vector<StepMetrics> read_run_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kRunHeader) {
        throw FormatError("run csv: missing or unexpected header");
    }
    std::vector<StepMetrics> steps;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string_view> cols;
        std::string_view rest = line;
        for (auto comma = rest.find(','); comma != std::string_view::npos; comma = rest.find(',')) {
            cols.push_back(rest.substr(0, comma));
            rest.remove_prefix(comma + 1);
        }
        cols.push_back(rest);
        if (cols.size() != 8) {
            throw FormatError("run csv line " + std::to_string(line_no) + ": expected 8 columns");
        }
        StepMetrics m;
        const double step = parse_field(cols[0], line_no);
        m.step = static_cast<std::uint64_t>(step);
        if (m.step != steps.size()) {
            throw FormatError("run csv line " + std::to_string(line_no) + ": steps out of sequence");
        }
        m.train_loss = parse_field(cols[1], line_no);
        m.probe_loss = parse_field(cols[2], line_no);
        m.y_prop = parse_field(cols[3], line_no);
        m.reference = parse_field(cols[4], line_no);
        m.innovation = parse_field(cols[5], line_no);
        m.param_l2 = parse_field(cols[6], line_no);
        m.decision = parse_decision(cols[7]);
        steps.push_back(m);
    }
    return steps;
}

void write_summary_json(std::ostream& out, const ExperimentResult& result) {
    const ExperimentConfig& cfg = result.config;
    Json j;
    Json echo;
    for (const auto& [key, value] : config_entries(cfg)) {
        echo[key] = value;
    }
    j["config"] = echo;
    j["epsilon"] = cfg.controller.epsilon;
    j["overhead_ratio"] = overhead_ratio(cfg.probe_size, cfg.batch_size);

    Json seeds = Json::array();
    for (std::size_t s = 0; s < result.baseline.size(); ++s) {
        const auto rep = admissibility_report(result.controlled[s], cfg.fault.enabled && cfg.fault.onset >= 30
                                                                         ? cfg.fault
                                                                         : FaultSpec{.enabled = false});
        Json seed;
        seed["seed"] = s;
        seed["baseline"] = run_summary(result.baseline[s]);
        seed["controlled"] = run_summary(result.controlled[s]);
        seed["admissibility"] = Json{{"externality", rep.externality},
                                     {"nominal_stability", rep.nominal_stability},
                                     {"catastrophic_sensitivity", rep.catastrophic_sensitivity},
                                     {"max_nominal_abs_nu", number(rep.max_nominal_abs_nu)},
                                     {"max_fault_nu", number(rep.max_fault_nu)},
                                     {"separation_ratio",
                                      rep.separation_ratio ? number(*rep.separation_ratio) : Json(nullptr)},
                                     {"summary", rep.summary}};
        seeds.push_back(seed);
    }
    j["seeds"] = seeds;
    j["aggregates"] = Json{{"baseline", aggregate_json(result.baseline_stats)},
                           {"controlled", aggregate_json(result.controlled_stats)}};
    out << j.dump(2) << '\n';
}

std::filesystem::path write_results(const std::filesystem::path& out_dir, const ExperimentResult& result) {
    namespace fs = std::filesystem;
    const ExperimentConfig& cfg = result.config;
    const fs::path exp = out_dir / cfg.tag;
    fs::create_directories(exp);
    write_file(exp / "config.cfg", format_config(cfg));
    {
        std::ofstream out(exp / "summary.json", std::ios::binary);
        write_summary_json(out, result);
    }
    const fs::path timing = exp / "timing";
    fs::create_directories(timing);
    std::string overhead = "seed,arm,probe_seconds,train_seconds,measured_overhead\n";
    char buf[256];
    for (std::size_t s = 0; s < result.baseline.size(); ++s) {
        const fs::path seed_dir = exp / std::to_string(s);
        fs::create_directories(seed_dir);
        for (const RunMetrics* run : {&result.baseline[s], &result.controlled[s]}) {
            const char* arm = run->controlled ? "controlled" : "baseline";
            std::ofstream out(seed_dir / (std::string(arm) + ".csv"), std::ios::binary);
            write_run_csv(out, *run);
            std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f\n", s, arm, run->probe_seconds, run->train_seconds,
                          measured_overhead(*run));
            overhead += buf;
        }
        std::ofstream log(timing / ("decisions_" + std::to_string(s) + ".csv"), std::ios::binary);
        write_decision_log(log, result.controlled[s].decision_log);
    }
    write_file(timing / "overhead.csv", overhead);
    return exp;
}

std::vector<RunMetrics> read_arm(const std::filesystem::path& exp_dir, std::size_t seeds, bool controlled,
                                 const ExperimentConfig& cfg) {
    std::vector<RunMetrics> runs;
    for (std::size_t s = 0; s < seeds; ++s) {
        const auto path = exp_dir / std::to_string(s) / (controlled ? "controlled.csv" : "baseline.csv");
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw FormatError("missing run file '" + path.string() + "'");
        }
        RunMetrics run;
        run.seed_index = s;
        run.controlled = controlled;
        try {
            run.steps = read_run_csv(in);
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
        if (run.steps.size() != cfg.total_steps) {
            throw FormatError(path.string() + ": truncated (" + std::to_string(run.steps.size()) + " of " +
                              std::to_string(cfg.total_steps) + " steps)");
        }
        summarize(run, cfg);
        runs.push_back(std::move(run));
    }
    return runs;
}

} // namespace stabguard
