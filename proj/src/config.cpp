#include "ordermerge/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ordermerge/errors.hpp"

namespace ordermerge {

namespace {

std::string trim(std::string_view s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string_view::npos) return {};
    auto end = s.find_last_not_of(" \t\r");
    return std::string(s.substr(begin, end - begin + 1));
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

std::string unquote(const std::string& value, const std::string& where) {
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        std::string out;
        for (std::size_t i = 1; i + 1 < value.size(); ++i) {
            if (value[i] == '\\' && i + 2 < value.size()) {
                char next = value[++i];
                out += next == 'n' ? '\n' : next == 't' ? '\t' : next;
            } else {
                out += value[i];
            }
        }
        return out;
    }
    if (!value.empty() && value.front() == '"') throw ConfigError(where + ": unterminated string");
    return value;
}

} // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
    ConfigFile file;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto where = fmt::format("{}:{}", origin, line_no);
        auto content = trim(strip_comment(line));
        if (content.empty()) continue;
        if (content.front() == '[') {
            if (content.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(std::string_view(content).substr(1, content.size() - 2));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            continue;
        }
        auto eq = content.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        auto key = trim(std::string_view(content).substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        auto value = unquote(trim(std::string_view(content).substr(eq + 1)), where);
        file.values_[section.empty() ? key : section + "." + key] = value;
    }
    return file;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

std::string env_override_name(const std::string& key) {
    std::string name = "ORDERMERGE_";
    for (char c : key) {
        name += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return name;
}

void ConfigFile::apply_env(const std::vector<std::string>& known,
                           const std::function<std::optional<std::string>(const std::string&)>& getenv) {
    for (const auto& key : known) {
        if (auto value = getenv(env_override_name(key))) values_[key] = *value;
    }
}

std::optional<std::string> ConfigFile::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string ConfigFile::string_or(const std::string& key, std::string fallback) const {
    auto v = get(key);
    return v ? *v : std::move(fallback);
}

double ConfigFile::number_or(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) {
        throw ConfigError(fmt::format("{}: '{}' is not a number", key, *v));
    }
    return out;
}

long long ConfigFile::integer_or(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) {
        throw ConfigError(fmt::format("{}: '{}' is not an integer", key, *v));
    }
    return out;
}

bool ConfigFile::boolean_or(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, *v));
}

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys{
        "service.listen",          "service.data_dir",         "service.fleet",
        "service.dispatch_delay_ms", "service.max_poll_wait_ms",
        "agent.clearance_mm",      "agent.max_iterations",     "agent.memory_k",
        "agent.render_images",     "agent.batch_window_count", "agent.batch_window_seconds",
        "agent.parallel_runs",     "agent.device_preference",  "agent.allow_yaw_swap",
        "agent.template",          "planner.kind",             "planner.script",
        "planner.scripted_delay_ms", "planner.endpoint",       "planner.model",
        "planner.api_key_env",     "planner.max_retries",      "planner.backoff_ms",
        "planner.timeout_s",
    };
    return keys;
}

ServiceConfig service_config_from(const ConfigFile& file) {
    const auto& known = known_config_keys();
    for (const auto& [key, value] : file.values()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(fmt::format("unknown config key '{}'", key));
        }
    }

    ServiceConfig cfg;
    if (auto listen = file.get("service.listen")) {
        auto colon = listen->rfind(':');
        if (colon == std::string::npos) throw ConfigError("service.listen must be host:port");
        cfg.host = listen->substr(0, colon);
        int port = 0;
        auto digits = std::string_view(*listen).substr(colon + 1);
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
        if (ec != std::errc() || ptr != digits.data() + digits.size() || port < 0 || port > 65535) {
            throw ConfigError(fmt::format("service.listen: invalid port in '{}'", *listen));
        }
        cfg.port = port;
    }
    cfg.data_dir = file.string_or("service.data_dir", cfg.data_dir.string());
    cfg.fleet_seed = file.string_or("service.fleet", "");
    cfg.dispatch_delay = std::chrono::milliseconds(file.integer_or("service.dispatch_delay_ms", 500));
    cfg.max_poll_wait = std::chrono::milliseconds(file.integer_or("service.max_poll_wait_ms", 25000));
    if (cfg.dispatch_delay.count() < 0) throw ConfigError("service.dispatch_delay_ms must be non-negative");

    auto& agent = cfg.agent;
    agent.clearance_mm = file.number_or("agent.clearance_mm", agent.clearance_mm);
    agent.max_iterations = static_cast<int>(file.integer_or("agent.max_iterations", agent.max_iterations));
    auto k = file.integer_or("agent.memory_k", static_cast<long long>(agent.memory_k));
    if (k < 0) throw ConfigError("agent.memory_k must be non-negative");
    agent.memory_k = static_cast<std::size_t>(k);
    agent.render_images = file.boolean_or("agent.render_images", agent.render_images);
    auto window = file.integer_or("agent.batch_window_count", 0);
    if (window < 0) throw ConfigError("agent.batch_window_count must be non-negative");
    agent.batch_window_count = static_cast<std::size_t>(window);
    agent.batch_window_seconds = file.integer_or("agent.batch_window_seconds", 0);
    agent.parallel_runs = file.boolean_or("agent.parallel_runs", agent.parallel_runs);
    if (auto pref = file.get("agent.device_preference")) {
        try {
            agent.match_policy.device_preference = parse_device_preference(*pref);
        } catch (const ValueError& e) {
            throw ConfigError(e.what());
        }
    }
    agent.match_policy.allow_yaw_swap = file.boolean_or("agent.allow_yaw_swap", agent.match_policy.allow_yaw_swap);
    agent.template_path = file.string_or("agent.template", "");

    auto& planner = agent.planner;
    planner.kind = file.string_or("planner.kind", planner.kind);
    planner.script_path = file.string_or("planner.script", "");
    planner.scripted_delay_ms = static_cast<int>(file.integer_or("planner.scripted_delay_ms", 0));
    planner.endpoint = file.string_or("planner.endpoint", "");
    planner.model = file.string_or("planner.model", "");
    planner.api_key_env = file.string_or("planner.api_key_env", planner.api_key_env);
    planner.max_retries = static_cast<int>(file.integer_or("planner.max_retries", planner.max_retries));
    planner.backoff_ms = static_cast<int>(file.integer_or("planner.backoff_ms", planner.backoff_ms));
    planner.timeout_s = static_cast<int>(file.integer_or("planner.timeout_s", planner.timeout_s));
    if (planner.kind != "heuristic" && planner.kind != "remote" && planner.kind != "scripted") {
        throw ConfigError(fmt::format("planner.kind '{}' is not heuristic, remote or scripted", planner.kind));
    }
    if (planner.kind == "scripted" && planner.script_path.empty()) {
        throw ConfigError("planner.kind = scripted requires planner.script");
    }
    return cfg;
}

ServiceConfig load_service_config(const std::filesystem::path& path,
                                  const std::function<std::optional<std::string>(const std::string&)>& getenv) {
    ConfigFile file = path.empty() ? ConfigFile{} : ConfigFile::load(path);
    auto lookup = getenv ? getenv : [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
    file.apply_env(known_config_keys(), lookup);
    auto cfg = service_config_from(file);
    // Relative paths in a config file are resolved against its directory.
    if (!path.empty()) {
        auto base = path.parent_path();
        auto resolve = [&](std::filesystem::path p) {
            return p.empty() || p.is_absolute() ? p : base / p;
        };
        cfg.data_dir = resolve(cfg.data_dir);
        cfg.fleet_seed = resolve(cfg.fleet_seed);
        if (!cfg.agent.template_path.empty()) cfg.agent.template_path = resolve(cfg.agent.template_path).string();
        if (!cfg.agent.planner.script_path.empty()) {
            cfg.agent.planner.script_path = resolve(cfg.agent.planner.script_path).string();
        }
    }
    return cfg;
}

} // namespace ordermerge
