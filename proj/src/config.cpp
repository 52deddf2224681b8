#include "stabguard/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "stabguard/errors.hpp"

namespace stabguard {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double to_double(std::string_view key, std::string_view v) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
        throw ConfigError(std::string(key) + ": '" + std::string(v) + "' is not a number");
    }
    return x;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
        throw ConfigError(std::string(key) + ": '" + std::string(v) + "' is not a non-negative integer");
    }
    return x;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError(std::string(key) + ": '" + std::string(v) + "' is not a boolean");
}

std::string quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out += '\\';
        }
        out += c;
    }
    out += '"';
    return out;
}

// Splits the right-hand side of an assignment into its value, honoring
// quotes and trailing comments.
std::string parse_value(std::string_view rhs) {
    rhs = trim(rhs);
    if (rhs.empty() || rhs.front() != '"') {
        return std::string(trim(rhs.substr(0, rhs.find('#'))));
    }
    std::string out;
    std::size_t i = 1;
    for (; i < rhs.size() && rhs[i] != '"'; ++i) {
        if (rhs[i] == '\\' && i + 1 < rhs.size()) {
            ++i;
        }
        out += rhs[i];
    }
    if (i >= rhs.size()) {
        throw ConfigError("unterminated quoted value");
    }
    const std::string_view rest = trim(rhs.substr(i + 1));
    if (!rest.empty() && rest.front() != '#') {
        throw ConfigError("unexpected text after quoted value");
    }
    return out;
}

struct Field {
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename T>
Field size_field(const char* key, T ExperimentConfig::*member) {
    return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
            [key, member](ExperimentConfig& c, std::string_view v) { c.*member = static_cast<T>(to_u64(key, v)); }};
}

Field double_field(const char* key, std::function<double&(ExperimentConfig&)> ref) {
    return {key, [ref](const ExperimentConfig& c) { return fmt_double(ref(const_cast<ExperimentConfig&>(c))); },
            [key, ref](ExperimentConfig& c, std::string_view v) { ref(c) = to_double(key, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"task", [](const ExperimentConfig& c) { return std::string(to_string(c.task)); },
                     [](ExperimentConfig& c, std::string_view v) { c.task = parse_task_kind(v); }});
        f.push_back({"tag", [](const ExperimentConfig& c) { return c.tag; },
                     [](ExperimentConfig& c, std::string_view v) {
                         if (v.empty() || v.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
                                                              "0123456789_.-") != std::string_view::npos ||
                             v == "." || v == "..") {
                             throw ConfigError("tag: '" + std::string(v) + "' must be a plain directory name");
                         }
                         c.tag = std::string(v);
                     }});
        f.push_back(size_field("seed", &ExperimentConfig::master_seed));
        f.push_back(size_field("seeds", &ExperimentConfig::num_seeds));
        f.push_back(size_field("steps", &ExperimentConfig::total_steps));
        f.push_back(size_field("batch_size", &ExperimentConfig::batch_size));
        f.push_back(size_field("probe_size", &ExperimentConfig::probe_size));
        f.push_back({"probe_source", [](const ExperimentConfig& c) { return std::string(to_string(c.probe_source)); },
                     [](ExperimentConfig& c, std::string_view v) { c.probe_source = parse_probe_source(v); }});
        f.push_back({"model.hidden",
                     [](const ExperimentConfig& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.hidden.size(); ++i) {
                             out += (i ? "," : "") + std::to_string(c.hidden[i]);
                         }
                         return out;
                     },
                     [](ExperimentConfig& c, std::string_view v) {
                         c.hidden.clear();
                         while (true) {
                             const auto comma = v.find(',');
                             c.hidden.push_back(to_u64("model.hidden", trim(v.substr(0, comma))));
                             if (comma == std::string_view::npos) {
                                 break;
                             }
                             v.remove_prefix(comma + 1);
                         }
                     }});
        f.push_back(size_field("data.train_size", &ExperimentConfig::train_size));
        f.push_back(size_field("data.dim", &ExperimentConfig::data_dim));
        f.push_back(size_field("data.classes", &ExperimentConfig::data_classes));
        f.push_back(double_field("data.separation", [](ExperimentConfig& c) -> double& { return c.separation; }));
        f.push_back({"data.phrase", [](const ExperimentConfig& c) { return quote(c.phrase); },
                     [](ExperimentConfig& c, std::string_view v) { c.phrase = std::string(v); }});
        f.push_back(size_field("data.window", &ExperimentConfig::window));
        f.push_back(size_field("data.repeats", &ExperimentConfig::repeats));
        f.push_back({"optimizer.kind", [](const ExperimentConfig& c) { return std::string(to_string(c.optimizer.kind)); },
                     [](ExperimentConfig& c, std::string_view v) { c.optimizer.kind = parse_optimizer_kind(v); }});
        f.push_back(double_field("optimizer.lr", [](ExperimentConfig& c) -> double& { return c.optimizer.learning_rate; }));
        f.push_back(double_field("optimizer.momentum", [](ExperimentConfig& c) -> double& { return c.optimizer.momentum; }));
        f.push_back(double_field("optimizer.beta1", [](ExperimentConfig& c) -> double& { return c.optimizer.beta1; }));
        f.push_back(double_field("optimizer.beta2", [](ExperimentConfig& c) -> double& { return c.optimizer.beta2; }));
        f.push_back(double_field("optimizer.eps", [](ExperimentConfig& c) -> double& { return c.optimizer.eps; }));
        f.push_back(double_field("optimizer.weight_decay",
                                 [](ExperimentConfig& c) -> double& { return c.optimizer.weight_decay; }));
        f.push_back({"controller.epsilon",
                     [](const ExperimentConfig& c) {
                         return c.epsilon_auto ? std::string("auto") : fmt_double(c.controller.epsilon);
                     },
                     [](ExperimentConfig& c, std::string_view v) {
                         if (v == "auto") {
                             c.epsilon_auto = true;
                             return;
                         }
                         const double eps = to_double("controller.epsilon", v);
                         if (!(eps > 0.0) || !std::isfinite(eps)) {
                             throw ConfigError("controller.epsilon must be > 0 (got " + std::string(v) + ")");
                         }
                         c.epsilon_auto = false;
                         c.controller.epsilon = eps;
                     }});
        f.push_back(double_field("controller.alpha", [](ExperimentConfig& c) -> double& { return c.controller.alpha; }));
        f.push_back({"controller.probe_interval",
                     [](const ExperimentConfig& c) { return std::to_string(c.controller.probe_interval); },
                     [](ExperimentConfig& c, std::string_view v) {
                         c.controller.probe_interval = to_u64("controller.probe_interval", v);
                     }});
        f.push_back({"controller.async_snapshot",
                     [](const ExperimentConfig& c) { return std::string(c.controller.async_snapshot ? "true" : "false"); },
                     [](ExperimentConfig& c, std::string_view v) {
                         c.controller.async_snapshot = to_bool("controller.async_snapshot", v);
                     }});
        f.push_back(size_field("calibration.steps", &ExperimentConfig::calibration_steps));
        f.push_back(double_field("calibration.sigmas", [](ExperimentConfig& c) -> double& { return c.calibration_sigmas; }));
        f.push_back({"fault.enabled", [](const ExperimentConfig& c) { return std::string(c.fault.enabled ? "true" : "false"); },
                     [](ExperimentConfig& c, std::string_view v) { c.fault.enabled = to_bool("fault.enabled", v); }});
        f.push_back({"fault.onset", [](const ExperimentConfig& c) { return std::to_string(c.fault.onset); },
                     [](ExperimentConfig& c, std::string_view v) { c.fault.onset = to_u64("fault.onset", v); }});
        f.push_back({"fault.duration", [](const ExperimentConfig& c) { return std::to_string(c.fault.duration); },
                     [](ExperimentConfig& c, std::string_view v) { c.fault.duration = to_u64("fault.duration", v); }});
        f.push_back(double_field("fault.zeta", [](ExperimentConfig& c) -> double& { return c.fault.amplification; }));
        f.push_back({"fault.target", [](const ExperimentConfig& c) { return std::string(to_string(c.fault.target)); },
                     [](ExperimentConfig& c, std::string_view v) { c.fault.target = parse_fault_target(v); }});
        return f;
    }();
    return table;
}

struct Assignment {
    std::string key;
    std::string value;
    std::string where;
};

Assignment split_assignment(std::string_view line, std::string where) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError(where + ": expected key = value");
    }
    Assignment a;
    a.key = std::string(trim(line.substr(0, eq)));
    a.where = std::move(where);
    try {
        a.value = parse_value(line.substr(eq + 1));
    } catch (const ConfigError& e) {
        throw ConfigError(a.where + ": " + e.what());
    }
    if (a.key.empty()) {
        throw ConfigError(a.where + ": empty key");
    }
    return a;
}

} // namespace

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            try {
                f.set(cfg, value);
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError(std::string(key) + ": " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown key '" + std::string(key) + "'");
}

ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides) {
    std::vector<Assignment> assignments;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view raw = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        assignments.push_back(split_assignment(line, "line " + std::to_string(line_no)));
    }
    for (const auto& o : overrides) {
        assignments.push_back(split_assignment(o, "override '" + o + "'"));
    }

    // The last `task` assignment picks the preset; everything else layers on it.
    TaskKind task = TaskKind::Vision;
    for (const auto& a : assignments) {
        if (a.key == "task") {
            try {
                task = parse_task_kind(a.value);
            } catch (const std::exception& e) {
                throw ConfigError(a.where + ": " + e.what());
            }
        }
    }
    ExperimentConfig cfg = ExperimentConfig::preset(task);
    for (const auto& a : assignments) {
        try {
            apply_setting(cfg, a.key, a.value);
        } catch (const ConfigError& e) {
            throw ConfigError(a.where + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read config file '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config(buf.str(), overrides);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, value] : config_entries(cfg)) {
        out += key + " = " + value + '\n';
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) {
        out.emplace_back(f.key, f.get(cfg));
    }
    return out;
}

} // namespace stabguard
