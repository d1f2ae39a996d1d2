#include "ordermerge/planner.hpp"

#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ordermerge/errors.hpp"
#include "ordermerge/packing.hpp"

namespace ordermerge {

PlannerSettings parse_planner_spec(const std::string& spec, PlannerSettings base) {
    if (spec == "heuristic" || spec == "remote") {
        base.kind = spec;
    } else if (spec.rfind("scripted:", 0) == 0 && spec.size() > 9) {
        base.kind = "scripted";
        base.script_path = spec.substr(9);
    } else {
        throw ConfigError(fmt::format("unknown planner '{}' (expected heuristic, remote or scripted:FILE)", spec));
    }
    return base;
}

// --- heuristic ---

namespace {

// Shortest text that parses back to the same double. Six-digit rounding would
// push parts packed flush against a wall outside the volume.
std::string exact_number(double v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw ValueError("number out of formatting range");
    return std::string(buf.data(), end);
}

} // namespace

PlannerReply HeuristicPlanner::propose(const PromptBundle& bundle) {
    const auto& layout = bundle.context.layout;
    PackRequest request{layout.device_id, {}, bundle.context.volume, layout.clearance_mm};
    for (const auto& p : layout.placements) request.parts.push_back(PartSpec{p.order_id, p.dims});
    auto outcome = shelf_pack(request);
    if (!outcome.rejected.empty()) {
        return PlannerReply{fmt::format("Cannot place {} of {} parts in this build volume.", outcome.rejected.size(),
                                        request.parts.size()),
                            true};
    }
    std::string text = "positions = [";
    for (std::size_t i = 0; i < layout.placements.size(); ++i) {
        for (const auto& q : outcome.placed.placements) {
            if (q.order_id != layout.placements[i].order_id) continue;
            if (i) text += ", ";
            text += fmt::format("({}, {}, {})", exact_number(q.center.x), exact_number(q.center.y),
                                exact_number(q.center.z));
            break;
        }
    }
    return PlannerReply{text + "]", false};
}

// --- scripted ---

ScriptedPlanner::ScriptedPlanner(std::vector<std::string> answers) : shared_(std::move(answers)) {}

ScriptedPlanner::ScriptedPlanner(std::map<std::string, std::vector<std::string>> per_device)
    : per_device_(std::move(per_device)), keyed_(true) {}

namespace {

std::vector<std::string> string_array(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) throw ConfigError(what + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& item : j) {
        if (!item.is_string()) throw ConfigError(what + " must be an array of strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

} // namespace

std::unique_ptr<ScriptedPlanner> ScriptedPlanner::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("planner script is not valid JSON: ") + e.what());
    }
    if (j.is_array()) return std::make_unique<ScriptedPlanner>(string_array(j, "planner script"));
    if (j.is_object() && j.contains("answers")) {
        return std::make_unique<ScriptedPlanner>(string_array(j.at("answers"), "answers"));
    }
    if (j.is_object() && j.contains("devices") && j.at("devices").is_object()) {
        std::map<std::string, std::vector<std::string>> per_device;
        for (const auto& [device, answers] : j.at("devices").items()) {
            per_device[device] = string_array(answers, "devices." + device);
        }
        return std::make_unique<ScriptedPlanner>(std::move(per_device));
    }
    throw ConfigError("planner script must be an array, {\"answers\": [...]} or {\"devices\": {...}}");
}

std::unique_ptr<ScriptedPlanner> ScriptedPlanner::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read planner script '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

void ScriptedPlanner::set_before_answer(std::function<void(const PromptBundle&, int)> hook) {
    std::lock_guard lock(mutex_);
    hook_ = std::move(hook);
}

PlannerReply ScriptedPlanner::propose(const PromptBundle& bundle) {
    int call = ++calls_;
    {
        std::lock_guard lock(received_mutex_);
        received_.push_back(bundle);
    }
    std::function<void(const PromptBundle&, int)> hook;
    {
        std::lock_guard lock(mutex_);
        hook = hook_;
    }
    if (hook) hook(bundle, call);
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);

    std::lock_guard lock(mutex_);
    if (keyed_) {
        const auto& device = bundle.context.layout.device_id;
        auto it = per_device_.find(device);
        auto& next = per_device_next_[device];
        if (it == per_device_.end() || next >= it->second.size()) {
            throw PlannerTransportError(fmt::format("planner script has no answer left for device '{}'", device));
        }
        return PlannerReply{it->second[next++], false};
    }
    if (shared_next_ >= shared_.size()) throw PlannerTransportError("planner script exhausted");
    return PlannerReply{shared_[shared_next_++], false};
}

std::vector<PromptBundle> ScriptedPlanner::received() const {
    std::lock_guard lock(received_mutex_);
    return received_;
}

std::unique_ptr<Planner> make_planner(const PlannerSettings& settings) {
    if (settings.kind == "heuristic") return std::make_unique<HeuristicPlanner>();
    if (settings.kind == "scripted") {
        auto planner = ScriptedPlanner::from_file(settings.script_path);
        planner->set_delay(std::chrono::milliseconds(settings.scripted_delay_ms));
        return planner;
    }
    if (settings.kind == "remote") return std::make_unique<RemotePlanner>(settings);
    throw ConfigError(fmt::format("unknown planner kind '{}'", settings.kind));
}

} // namespace ordermerge
