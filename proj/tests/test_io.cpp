#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stabguard/config.hpp"
#include "stabguard/errors.hpp"
#include "stabguard/plot.hpp"
#include "stabguard/results.hpp"
#include "support.hpp"

using namespace stabguard;
namespace fs = std::filesystem;

TEST_SUITE("config") {

TEST_CASE("task key selects the preset") {
    const auto v = parse_config("task = vision\n");
    CHECK(v == ExperimentConfig::preset(TaskKind::Vision));
    const auto s = parse_config("# comment only\ntask = sequence   # trailing comment\n");
    CHECK(s == ExperimentConfig::preset(TaskKind::Sequence));
}

TEST_CASE("keys, quoting and overrides") {
    const std::vector<std::string> overrides{"optimizer.lr=2e-3", "seeds = 3"};
    const auto cfg = parse_config("task = sequence\n"
                                  "data.phrase = \" ab \\\"c\\\\ \"\n"
                                  "model.hidden = 16, 8\n"
                                  "optimizer.lr = 1e-2\n"
                                  "controller.epsilon = 0.25\n"
                                  "fault.target = gradient\n",
                                  overrides);
    CHECK(cfg.phrase == " ab \"c\\ ");
    CHECK(cfg.hidden == std::vector<std::size_t>{16, 8});
    CHECK(cfg.optimizer.learning_rate == 2e-3);
    CHECK(cfg.num_seeds == 3);
    CHECK_FALSE(cfg.epsilon_auto);
    CHECK(cfg.controller.epsilon == 0.25);
    CHECK(cfg.fault.target == FaultTarget::Gradient);
}

TEST_CASE("effective config echo round trips") {
    ExperimentConfig cfg = ExperimentConfig::preset(TaskKind::Sequence);
    cfg.optimizer.learning_rate = 0.1 + 0.2;
    cfg.separation = 1.0 / 3.0;
    cfg.phrase = "x \"y\" # z ";
    cfg.hidden = {7, 5};
    cfg.epsilon_auto = false;
    cfg.controller.epsilon = std::nextafter(0.3, 1.0);
    cfg.fault.enabled = false;
    cfg.controller.async_snapshot = true;
    const std::string text = format_config(cfg);
    CHECK(parse_config(text) == cfg);
    CHECK(format_config(parse_config(text)) == text);
    for (TaskKind k : {TaskKind::Vision, TaskKind::Sequence}) {
        const auto p = ExperimentConfig::preset(k);
        CHECK(parse_config(format_config(p)) == p);
    }
}

TEST_CASE("bad values are config errors") {
    CHECK_THROWS_AS(parse_config("controller.epsilon = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("controller.epsilon = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("controller.alpha = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = ten\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = -5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("data.phrase = \"open\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tag = ../escape\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("fault.enabled = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = 100\n"), ConfigError); // fault window ends at 130
    const std::vector<std::string> bad_override{"controller.epsilon=0"};
    CHECK_THROWS_AS(parse_config("task = vision\n", bad_override), ConfigError);
    try {
        parse_config("task = vision\nsteps = 10\nbatch_size = x\n");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("missing file names the path") {
    const fs::path p = "/nonexistent/dir/run.cfg";
    try {
        load_config(p);
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
    }
}

TEST_CASE("shipped configs match the task presets") {
    const auto v = load_config(fs::path(STABGUARD_SOURCE_DIR) / "configs" / "vision.cfg");
    CHECK(v == ExperimentConfig::preset(TaskKind::Vision));
    const auto s = load_config(fs::path(STABGUARD_SOURCE_DIR) / "configs" / "sequence.cfg");
    CHECK(s == ExperimentConfig::preset(TaskKind::Sequence));
}

}

TEST_SUITE("results") {

TEST_CASE("run csv round trips") {
    RunMetrics r;
    for (std::uint64_t t = 0; t < 5; ++t) {
        StepMetrics s;
        s.step = t;
        s.train_loss = 1.0 / double(t + 3);
        s.probe_loss = t == 2 ? std::numeric_limits<double>::infinity() : 0.1 * double(t);
        s.y_prop = std::nan("");
        s.reference = -0.0;
        s.innovation = 1e-300;
        s.param_l2 = 12.5;
        s.decision = t == 3 ? Decision::Rollback : Decision::Accept;
        r.steps.push_back(s);
    }
    std::stringstream ss;
    write_run_csv(ss, r);
    const auto back = read_run_csv(ss);
    REQUIRE(back.size() == 5);
    for (std::size_t t = 0; t < 5; ++t) {
        const auto& a = r.steps[t];
        const auto& b = back[t];
        CHECK(b.step == a.step);
        CHECK(bit_equal(Vec64{a.train_loss, a.probe_loss, a.reference, a.innovation, a.param_l2},
                        Vec64{b.train_loss, b.probe_loss, b.reference, b.innovation, b.param_l2}));
        CHECK(std::isnan(b.y_prop));
        CHECK(b.decision == a.decision);
    }
}

TEST_CASE("malformed run csv is rejected") {
    std::stringstream bad_header("step,loss\n0,1\n");
    CHECK_THROWS_AS(read_run_csv(bad_header), FormatError);
    std::stringstream short_row("step,train_loss,probe_loss,y_prop,reference,innovation,param_l2,decision\n0,1,2\n");
    CHECK_THROWS_AS(read_run_csv(short_row), FormatError);
    std::stringstream bad_value(
        "step,train_loss,probe_loss,y_prop,reference,innovation,param_l2,decision\n0,1,x,1,1,1,1,accept\n");
    CHECK_THROWS_AS(read_run_csv(bad_value), FormatError);
}

TEST_CASE("written layout, aggregation by brute force and plots") {
    const fs::path out = test_support::fresh_dir("layout");
    ExperimentConfig cfg = test_support::small_config();
    const ExperimentResult result = run_experiment(cfg, 2);
    const fs::path exp = write_results(out, result);
    CHECK(exp == out / cfg.tag);
    CHECK(fs::exists(exp / "config.cfg"));
    CHECK(fs::exists(exp / "summary.json"));
    CHECK(fs::exists(exp / "timing"));
    CHECK(test_support::count_csvs(exp) == 2 * cfg.num_seeds);
    CHECK(load_config(exp / "config.cfg") == result.config);

    const auto summary = test_support::read_json(exp / "summary.json");
    CHECK(summary["epsilon"].get<double>() == result.config.controller.epsilon);

    // Brute-force per-step mean and population std from the CSV files.
    for (const char* arm : {"baseline", "controlled"}) {
        const auto series = test_support::read_columns(exp, cfg.num_seeds, arm);
        const auto& agg = summary["aggregates"][arm];
        for (const char* field : {"probe_loss", "innovation", "param_l2"}) {
            const auto& cols = series.at(field);
            for (std::size_t t = 0; t < cfg.total_steps; ++t) {
                double sum = 0.0;
                for (std::size_t s = 0; s < cfg.num_seeds; ++s) {
                    sum += cols[s][t];
                }
                const double m = sum / double(cfg.num_seeds);
                double ss = 0.0;
                for (std::size_t s = 0; s < cfg.num_seeds; ++s) {
                    ss += (cols[s][t] - m) * (cols[s][t] - m);
                }
                const double sd = std::sqrt(ss / double(cfg.num_seeds));
                REQUIRE(agg[field]["mean"][t].get<double>() == m);
                REQUIRE(agg[field]["std"][t].get<double>() == sd);
            }
        }
    }

    // Runs read back from disk summarize to the same aggregates.
    const auto back = read_arm(exp, cfg.num_seeds, true, result.config);
    const AggregateStats again = aggregate(back, result.config, cfg.num_seeds);
    CHECK(again.peak_probe_loss.mean == result.controlled_stats.peak_probe_loss.mean);
    CHECK(again.steps_to_recovery.std == result.controlled_stats.steps_to_recovery.std);

    // Plots.
    const auto files = plot_results(exp);
    CHECK(files.size() == 4);
    for (const char* name : {"recovery.svg", "innovation.svg", "norms.svg", "overlay.svg"}) {
        const std::string svg = test_support::slurp(exp / name);
        std::string error;
        CHECK_MESSAGE(test_support::well_formed_xml(svg, error), name, ": ", error);
    }
    const std::string innovation = test_support::slurp(exp / "innovation.svg");
    CHECK(test_support::count(innovation, "class=\"threshold\"") == 1);
    char want[64];
    std::snprintf(want, sizeof want, "data-value=\"%.17g\"", result.config.controller.epsilon);
    CHECK(innovation.find(want) != std::string::npos);

    // The parent directory form finds the experiment too.
    CHECK(plot_results(out).size() == 4);

    // A truncated CSV is an error.
    {
        std::ofstream trunc(exp / "1" / "controlled.csv", std::ios::trunc);
        trunc << "step,train_loss,probe_loss,y_prop,reference,innovation,param_l2,decision\n0,1,1,1,1,0,1,accept\n";
    }
    CHECK_THROWS_AS(plot_results(exp), FormatError);
    fs::remove_all(out);
}

TEST_CASE("an empty results directory cannot be plotted") {
    const fs::path out = test_support::fresh_dir("empty");
    CHECK_THROWS_AS(plot_results(out), FormatError);
    CHECK_THROWS_AS(plot_results(out / "missing"), FormatError);
    fs::remove_all(out);
}

}

TEST_SUITE("plot") {

TEST_CASE("chart rendering") {
    Chart c;
    c.title = "a < b & c";
    c.series.push_back({"one", "#123456", {0, 1, 2, 3}, {1, 2, std::nan(""), 4}, {}, {}});
    c.series.push_back({"two", "#654321", {0, 1, 2, 3}, {1, 1, 1, 1}, {0, 0, 0, 0}, {2, 2, 2, 2}});
    c.thresholds = {1.5};
    c.windows = {{1.0, 2.0}};
    const std::string svg = render_svg(c);
    std::string error;
    CHECK_MESSAGE(test_support::well_formed_xml(svg, error), error);
    CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
    CHECK(test_support::count(svg, "class=\"threshold\"") == 1);
    CHECK(test_support::count(svg, "class=\"window\"") == 1);
    CHECK(test_support::count(svg, "class=\"band\"") == 1);
    // The NaN point splits the first series into two subpaths.
    const auto path_at = svg.find("class=\"series\"");
    REQUIRE(path_at != std::string::npos);
    const auto d_end = svg.find('"', svg.find("d=\"", path_at) + 3);
    const std::string d = svg.substr(svg.find("d=\"", path_at) + 3, d_end - svg.find("d=\"", path_at) - 3);
    CHECK(test_support::count(d, "M") == 2);
}

TEST_CASE("degenerate charts still render") {
    Chart c;
    c.series.push_back({"flat", "#000", {0}, {0}, {}, {}});
    std::string error;
    CHECK(test_support::well_formed_xml(render_svg(c), error));
    Chart empty;
    CHECK(test_support::well_formed_xml(render_svg(empty), error));
}

}
