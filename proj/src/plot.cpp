#include "stabguard/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "stabguard/config.hpp"
#include "stabguard/errors.hpp"
#include "stabguard/harness.hpp"
#include "stabguard/results.hpp"

namespace stabguard {

namespace {

constexpr int kLeft = 70;
constexpr int kRight = 20;
constexpr int kTop = 40;
constexpr int kBottom = 50;

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", std::fabs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

// 1, 2 or 5 times a power of ten, giving about `target` intervals.
double nice_step(double range, int target) {
    const double raw = range / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0}) {
        if (m * mag >= raw) {
            return m * mag;
        }
    }
    return 10.0 * mag;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    void settle() {
        if (!(lo <= hi)) {
            lo = 0.0;
            hi = 1.0;
        }
        if (hi - lo < 1e-12) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

} // namespace

std::string render_svg(const Chart& chart) {
    Range xr, yr;
    for (const auto& s : chart.series) {
        if (s.x.size() != s.y.size() || (!s.band_lo.empty() && s.band_lo.size() != s.x.size()) ||
            s.band_lo.size() != s.band_hi.size()) {
            throw DimensionError("render_svg: series '" + s.label + "' has mismatched lengths");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xr.add(s.x[i]);
            yr.add(s.y[i]);
            if (!s.band_lo.empty()) {
                yr.add(s.band_lo[i]);
                yr.add(s.band_hi[i]);
            }
        }
    }
    for (double t : chart.thresholds) {
        yr.add(t);
    }
    xr.settle();
    yr.settle();
    const double ystep = nice_step(yr.hi - yr.lo, 6);
    yr.lo = std::floor(yr.lo / ystep) * ystep;
    yr.hi = std::ceil(yr.hi / ystep) * ystep;
    const double xstep = nice_step(xr.hi - xr.lo, 8);

    const double pw = chart.width - kLeft - kRight;
    const double ph = chart.height - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto py = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

    std::string o;
    o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(chart.width) + "\" height=\"" +
         std::to_string(chart.height) + "\" viewBox=\"0 0 " + std::to_string(chart.width) + " " +
         std::to_string(chart.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o += "<text x=\"" + num(chart.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(chart.title) + "</text>\n";

    for (const auto& [lo, hi] : chart.windows) {
        const double a = px(std::max(lo, xr.lo));
        const double b = px(std::min(hi, xr.hi));
        o += "<rect class=\"window\" x=\"" + num(a) + "\" y=\"" + num(kTop) + "\" width=\"" + num(b - a) +
             "\" height=\"" + num(ph) + "\" fill=\"#f4a261\" fill-opacity=\"0.18\"/>\n";
    }

    // Grid and ticks.
    for (double y = yr.lo; y <= yr.hi + ystep * 1e-9; y += ystep) {
        o += "<line x1=\"" + num(kLeft) + "\" x2=\"" + num(kLeft + pw) + "\" y1=\"" + num(py(y)) + "\" y2=\"" +
             num(py(y)) + "\" stroke=\"#e5e5e5\"/>\n";
        o += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(y) + 4) + "\" text-anchor=\"end\">" + tick_label(y) +
             "</text>\n";
    }
    for (double x = std::ceil(xr.lo / xstep) * xstep; x <= xr.hi + xstep * 1e-9; x += xstep) {
        o += "<text x=\"" + num(px(x)) + "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\">" +
             tick_label(x) + "</text>\n";
    }
    o += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
    o += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(chart.height - 12.0) + "\" text-anchor=\"middle\">" +
         escape(chart.x_label) + "</text>\n";
    o += "<text transform=\"translate(16 " + num(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(chart.y_label) + "</text>\n";

    for (const auto& s : chart.series) {
        if (!s.band_lo.empty()) {
            // One polygon per finite stretch.
            std::size_t i = 0;
            while (i < s.x.size()) {
                while (i < s.x.size() && !(std::isfinite(s.band_lo[i]) && std::isfinite(s.band_hi[i]))) {
                    ++i;
                }
                const std::size_t start = i;
                while (i < s.x.size() && std::isfinite(s.band_lo[i]) && std::isfinite(s.band_hi[i])) {
                    ++i;
                }
                if (i - start < 2) {
                    continue;
                }
                std::string pts;
                for (std::size_t k = start; k < i; ++k) {
                    pts += num(px(s.x[k])) + "," + num(py(s.band_hi[k])) + " ";
                }
                for (std::size_t k = i; k-- > start;) {
                    pts += num(px(s.x[k])) + "," + num(py(s.band_lo[k])) + " ";
                }
                pts.pop_back();
                o += "<polygon class=\"band\" points=\"" + pts + "\" fill=\"" + s.color +
                     "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
            }
        }
        std::string d;
        bool pen_down = false;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                pen_down = false;
                continue;
            }
            d += (pen_down ? "L" : "M") + num(px(s.x[i])) + " " + num(py(s.y[i])) + " ";
            pen_down = true;
        }
        if (!d.empty()) {
            d.pop_back();
            o += "<path class=\"series\" d=\"" + d + "\" fill=\"none\" stroke=\"" + s.color +
                 "\" stroke-width=\"1.5\"/>\n";
        }
    }

    for (double t : chart.thresholds) {
        o += "<line class=\"threshold\" x1=\"" + num(kLeft) + "\" x2=\"" + num(kLeft + pw) + "\" y1=\"" + num(py(t)) +
             "\" y2=\"" + num(py(t)) + "\" stroke=\"#c1121f\" stroke-dasharray=\"6 4\" data-value=\"" +
             exact(t) + "\"/>\n";
    }

    // Legend, top right.
    double ly = kTop + 14;
    for (const auto& s : chart.series) {
        const double lx = kLeft + pw - 150;
        o += "<line x1=\"" + num(lx) + "\" x2=\"" + num(lx + 22) + "\" y1=\"" + num(ly - 4) + "\" y2=\"" +
             num(ly - 4) + "\" stroke=\"" + s.color + "\" stroke-width=\"2\"/>\n";
        o += "<text x=\"" + num(lx + 28) + "\" y=\"" + num(ly) + "\">" + escape(s.label) + "</text>\n";
        ly += 16;
    }
    o += "</svg>\n";
    return o;
}

namespace {

constexpr const char* kBaselineColor = "#d62828";
constexpr const char* kControlledColor = "#1d70b8";

std::vector<double> steps_axis(std::size_t n) {
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t) {
        x[t] = static_cast<double>(t);
    }
    return x;
}

LineSeries band_series(const std::string& label, const char* color, const SeriesStats& s) {
    LineSeries out{label, color, steps_axis(s.mean.size()), s.mean, {}, {}};
    for (std::size_t t = 0; t < s.mean.size(); ++t) {
        out.band_lo.push_back(s.mean[t] - s.std[t]);
        out.band_hi.push_back(s.mean[t] + s.std[t]);
    }
    return out;
}

LineSeries run_series(const std::string& label, const char* color, const RunMetrics& run) {
    LineSeries out{label, color, steps_axis(run.steps.size()), {}, {}, {}};
    for (const auto& s : run.steps) {
        out.y.push_back(s.probe_loss);
    }
    return out;
}

void write_svg(const std::filesystem::path& path, const Chart& chart) {
    std::ofstream out(path, std::ios::binary);
    out << render_svg(chart);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
}

std::vector<std::filesystem::path> plot_experiment(const std::filesystem::path& dir) {
    const ExperimentConfig cfg = load_config(dir / "config.cfg");
    const auto base = read_arm(dir, cfg.num_seeds, false, cfg);
    const auto ctl = read_arm(dir, cfg.num_seeds, true, cfg);
    const AggregateStats b = aggregate(base, cfg, cfg.num_seeds);
    const AggregateStats c = aggregate(ctl, cfg, cfg.num_seeds);

    std::vector<std::pair<double, double>> window;
    if (cfg.fault.enabled) {
        window.emplace_back(static_cast<double>(cfg.fault.onset), static_cast<double>(cfg.fault.window_end()));
    }
    const std::string n = " (" + std::to_string(cfg.num_seeds) + " seeds, mean ± 1 std)";
    std::vector<std::filesystem::path> written;
    auto emit = [&](const char* name, const Chart& chart) {
        written.push_back(dir / name);
        write_svg(written.back(), chart);
    };

    emit("recovery.svg", Chart{cfg.tag + ": probe loss" + n, "step", "probe loss",
                               {band_series("baseline", kBaselineColor, b.probe_loss),
                                band_series("controlled", kControlledColor, c.probe_loss)},
                               {}, window});
    emit("innovation.svg", Chart{cfg.tag + ": innovation" + n, "step", "innovation",
                                 {band_series("baseline", kBaselineColor, b.innovation),
                                  band_series("controlled", kControlledColor, c.innovation)},
                                 {cfg.controller.epsilon}, window});
    emit("norms.svg", Chart{cfg.tag + ": parameter L2 norm" + n, "step", "L2 norm",
                            {band_series("baseline", kBaselineColor, b.param_l2),
                             band_series("controlled", kControlledColor, c.param_l2)},
                            {}, window});
    emit("overlay.svg", Chart{cfg.tag + ": paired runs, seed 0", "step", "probe loss",
                              {run_series("baseline", kBaselineColor, base.front()),
                               run_series("controlled", kControlledColor, ctl.front())},
                              {}, window});
    return written;
}

} // namespace

std::vector<std::filesystem::path> plot_results(const std::filesystem::path& results) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(results)) {
        throw FormatError("results directory '" + results.string() + "' does not exist");
    }
    std::vector<fs::path> experiments;
    if (fs::exists(results / "config.cfg")) {
        experiments.push_back(results);
    } else {
        for (const auto& entry : fs::directory_iterator(results)) {
            if (entry.is_directory() && fs::exists(entry.path() / "config.cfg")) {
                experiments.push_back(entry.path());
            }
        }
        std::sort(experiments.begin(), experiments.end());
    }
    if (experiments.empty()) {
        throw FormatError("no experiment results under '" + results.string() + "'");
    }
    std::vector<fs::path> written;
    for (const auto& dir : experiments) {
        try {
            const auto files = plot_experiment(dir);
            written.insert(written.end(), files.begin(), files.end());
        } catch (const ConfigError& e) {
            throw FormatError(e.what());
        }
    }
    return written;
}

} // namespace stabguard
