#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "ordermerge/agent.hpp"

namespace ordermerge {

/// Flat view of a `key = value` file with `[section]` headers. Keys are
/// stored as "section.key"; values are unquoted strings.
class ConfigFile {
public:
    static ConfigFile parse(const std::string& text, const std::string& origin = "<config>");
    static ConfigFile load(const std::filesystem::path& path);

    /// Applies ORDERMERGE_<SECTION>_<KEY> overrides for every key in `known`.
    void apply_env(const std::vector<std::string>& known,
                   const std::function<std::optional<std::string>(const std::string&)>& getenv);

    std::optional<std::string> get(const std::string& key) const;
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    std::string string_or(const std::string& key, std::string fallback) const;
    double number_or(const std::string& key, double fallback) const;
    long long integer_or(const std::string& key, long long fallback) const;
    bool boolean_or(const std::string& key, bool fallback) const;

private:
    std::map<std::string, std::string> values_;
};

/// Environment variable name overriding `section.key`.
std::string env_override_name(const std::string& key);

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "data";
    /// Fleet document loaded when the data dir holds no fleet yet.
    std::filesystem::path fleet_seed;
    /// Quiet period after the last order intake before pending orders are
    /// dispatched.
    std::chrono::milliseconds dispatch_delay{500};
    std::chrono::milliseconds max_poll_wait{25000};
    AgentConfig agent;
};

/// Every key recognised in a service config file.
const std::vector<std::string>& known_config_keys();

/// Reads the config (unknown keys are a ConfigError), then applies
/// environment overrides. `path` may be empty for defaults plus environment.
ServiceConfig load_service_config(
    const std::filesystem::path& path,
    const std::function<std::optional<std::string>(const std::string&)>& getenv = {});

ServiceConfig service_config_from(const ConfigFile& file);

} // namespace ordermerge
