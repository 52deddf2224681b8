#pragma once

// Static SVG line charts for experiment results.

#include <filesystem>
#include <string>
#include <vector>

namespace stabguard {

struct LineSeries {
    std::string label;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    // Optional shaded band; both empty or both the length of x.
    std::vector<double> band_lo;
    std::vector<double> band_hi;
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<LineSeries> series;
    std::vector<double> thresholds;                   // horizontal marker lines
    std::vector<std::pair<double, double>> windows;   // shaded x ranges [lo, hi)
    int width = 760;
    int height = 420;
};

/// One <svg> root. Non-finite points break the line rather than being drawn.
std::string render_svg(const Chart& chart);

/// Writes recovery.svg, innovation.svg, norms.svg and overlay.svg into every
/// experiment directory found at `results` (the directory itself, or its
/// immediate subdirectories holding a config.cfg). Returns the files written.
/// Throws FormatError on missing or truncated inputs.
std::vector<std::filesystem::path> plot_results(const std::filesystem::path& results);

} // namespace stabguard
