#pragma once

// Shared helpers for the test programs.

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "stabguard/harness.hpp"

namespace test_support {

namespace fs = std::filesystem;

// A scaled-down vision experiment that runs in well under a second per seed.
inline stabguard::ExperimentConfig small_config() {
    using namespace stabguard;
    ExperimentConfig cfg = ExperimentConfig::preset(TaskKind::Vision);
    cfg.tag = "small";
    cfg.hidden = {32};
    cfg.train_size = 256;
    cfg.batch_size = 32;
    cfg.num_seeds = 3;
    cfg.total_steps = 60;
    cfg.calibration_steps = 20;
    cfg.fault.onset = 35;
    cfg.fault.duration = 5;
    return cfg;
}

// The same shrinkage as `--set` arguments for the command line.
inline std::string small_overrides() {
    return " --set model.hidden=32 --set data.train_size=256 --set batch_size=32 --set steps=60"
           " --set calibration.steps=20 --set fault.onset=35 --set fault.duration=5";
}

inline fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() /
                       ("stabguard_test_" + name + "_" + std::to_string(std::hash<std::string>{}(fs::current_path().string())));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::size_t count(const std::string& haystack, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = haystack.find(needle); at != std::string::npos; at = haystack.find(needle, at + needle.size())) {
        ++n;
    }
    return n;
}

inline std::size_t count_csvs(const fs::path& exp) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(exp)) {
        if (!e.is_directory() || e.path().filename() == "timing") {
            continue;
        }
        for (const auto& f : fs::directory_iterator(e.path())) {
            n += f.path().extension() == ".csv";
        }
    }
    return n;
}

inline nlohmann::json read_json(const fs::path& p) {
    return nlohmann::json::parse(slurp(p));
}

// column name -> per-seed series, parsed from <exp>/<seed>/<arm>.csv.
inline std::map<std::string, std::vector<std::vector<double>>> read_columns(const fs::path& exp, std::size_t seeds,
                                                                            const std::string& arm) {
    std::map<std::string, std::vector<std::vector<double>>> out;
    for (std::size_t s = 0; s < seeds; ++s) {
        std::ifstream in(exp / std::to_string(s) / (arm + ".csv"));
        std::string line;
        std::getline(in, line);
        std::vector<std::string> names;
        {
            std::stringstream hs(line);
            std::string cell;
            while (std::getline(hs, cell, ',')) {
                names.push_back(cell);
                out[cell].emplace_back();
            }
        }
        while (std::getline(in, line)) {
            std::stringstream ls(line);
            std::string cell;
            for (std::size_t c = 0; c < names.size() && std::getline(ls, cell, ','); ++c) {
                out[names[c]].back().push_back(std::strtod(cell.c_str(), nullptr));
            }
        }
    }
    return out;
}

// Structural XML check: one root element, balanced tags, quoted attributes,
// no stray markup characters in text.
inline bool well_formed_xml(const std::string& s, std::string& error) {
    std::vector<std::string> stack;
    std::size_t roots = 0;
    std::size_t i = 0;
    auto fail = [&](const std::string& what) {
        error = what + " at offset " + std::to_string(i);
        return false;
    };
    auto name_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == ':' || c == '.';
    };
    while (i < s.size()) {
        if (s[i] != '<') {
            if (s[i] == '>') {
                return fail("stray '>'");
            }
            if (s[i] == '&') {
                const auto semi = s.find(';', i);
                if (semi == std::string::npos || semi - i > 8) {
                    return fail("bad entity");
                }
            }
            if (stack.empty() && !std::isspace(static_cast<unsigned char>(s[i]))) {
                return fail("text outside the root element");
            }
            ++i;
            continue;
        }
        if (s.compare(i, 5, "<?xml") == 0) {
            const auto end = s.find("?>", i);
            if (end == std::string::npos || roots > 0 || !stack.empty()) {
                return fail("bad declaration");
            }
            i = end + 2;
            continue;
        }
        if (s.compare(i, 4, "<!--") == 0) {
            const auto end = s.find("-->", i);
            if (end == std::string::npos) {
                return fail("unterminated comment");
            }
            i = end + 3;
            continue;
        }
        const bool closing = i + 1 < s.size() && s[i + 1] == '/';
        std::size_t j = i + (closing ? 2 : 1);
        const std::size_t name_start = j;
        while (j < s.size() && name_char(s[j])) {
            ++j;
        }
        const std::string name = s.substr(name_start, j - name_start);
        if (name.empty()) {
            return fail("missing tag name");
        }
        if (closing) {
            while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) {
                ++j;
            }
            if (j >= s.size() || s[j] != '>') {
                return fail("bad closing tag");
            }
            if (stack.empty() || stack.back() != name) {
                return fail("mismatched </" + name + ">");
            }
            stack.pop_back();
            i = j + 1;
            continue;
        }
        // Attributes.
        bool self_closing = false;
        for (;;) {
            while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) {
                ++j;
            }
            if (j >= s.size()) {
                return fail("unterminated tag");
            }
            if (s[j] == '>') {
                ++j;
                break;
            }
            if (s[j] == '/' && j + 1 < s.size() && s[j + 1] == '>') {
                self_closing = true;
                j += 2;
                break;
            }
            const std::size_t a = j;
            while (j < s.size() && name_char(s[j])) {
                ++j;
            }
            if (j == a || j + 1 >= s.size() || s[j] != '=' || (s[j + 1] != '"' && s[j + 1] != '\'')) {
                return fail("bad attribute in <" + name + ">");
            }
            const char q = s[j + 1];
            const auto end = s.find(q, j + 2);
            if (end == std::string::npos || s.substr(j + 2, end - j - 2).find('<') != std::string::npos) {
                return fail("bad attribute value in <" + name + ">");
            }
            j = end + 1;
        }
        if (stack.empty()) {
            ++roots;
            if (roots > 1) {
                return fail("second root element");
            }
        }
        if (!self_closing) {
            stack.push_back(name);
        }
        i = j;
    }
    if (!stack.empty()) {
        return fail("unclosed <" + stack.back() + ">");
    }
    if (roots != 1) {
        return fail("no root element");
    }
    return true;
}

// Runs a shell command, returning its exit status and captured stdout+stderr.
struct CommandResult {
    int status = -1;
    std::string output;
};

inline CommandResult run_command(const std::string& cmd) {
    const fs::path log = fs::temp_directory_path() / ("stabguard_cmd_" + std::to_string(std::hash<std::string>{}(cmd)));
    const int raw = std::system((cmd + " > '" + log.string() + "' 2>&1").c_str());
    CommandResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.output = slurp(log);
    fs::remove(log);
    return r;
}

} // namespace test_support
