#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ordermerge/prompting.hpp"

namespace ordermerge {

struct PlannerReply {
    std::string text;
    /// The planner judged that the batch cannot fit the device at all.
    bool capacity_exceeded = false;
};

/// Proposes part positions for a prompt. Implementations must not touch
/// engine state; they may be called from several threads at once.
class Planner {
public:
    virtual ~Planner() = default;
    virtual PlannerReply propose(const PromptBundle& bundle) = 0;
    virtual std::string kind() const = 0;
};

struct PlannerSettings {
    /// "heuristic", "remote", or "scripted" (script_path required).
    std::string kind = "heuristic";
    std::string script_path;
    int scripted_delay_ms = 0;
    /// Full chat-completions URL, e.g. http://localhost:8080/v1/chat/completions
    std::string endpoint;
    std::string model;
    /// Name of the environment variable holding the bearer token.
    std::string api_key_env = "ORDERMERGE_API_KEY";
    int max_retries = 2;
    int backoff_ms = 500;
    int timeout_s = 120;
};

/// Accepts "heuristic", "remote", "scripted:FILE".
PlannerSettings parse_planner_spec(const std::string& spec, PlannerSettings base = {});

/// Shelf-packs the parts in the bundle's context and answers with their
/// positions in layout order. Signals capacity_exceeded when any part is
/// rejected by the packer.
class HeuristicPlanner final : public Planner {
public:
    PlannerReply propose(const PromptBundle& bundle) override;
    std::string kind() const override { return "heuristic"; }
};

/// Replays canned answers. A flat list is shared by all runs; a per-device
/// map keeps an independent queue for each device id. Running out of answers
/// is a transport failure.
class ScriptedPlanner final : public Planner {
public:
    explicit ScriptedPlanner(std::vector<std::string> answers);
    explicit ScriptedPlanner(std::map<std::string, std::vector<std::string>> per_device);

    /// JSON: either `["answer", ...]`, `{"answers": [...]}` or
    /// `{"devices": {"EQ01": [...], ...}}`.
    static std::unique_ptr<ScriptedPlanner> from_json_text(const std::string& text);
    static std::unique_ptr<ScriptedPlanner> from_file(const std::string& path);

    /// Called inside propose() before answering (tests use it to interleave
    /// operator actions with a run).
    void set_before_answer(std::function<void(const PromptBundle&, int call)> hook);
    void set_delay(std::chrono::milliseconds delay) { delay_ = delay; }

    PlannerReply propose(const PromptBundle& bundle) override;
    std::string kind() const override { return "scripted"; }

    int calls() const { return calls_.load(); }
    std::vector<PromptBundle> received() const;

private:
    std::mutex mutex_;
    std::vector<std::string> shared_;
    std::size_t shared_next_ = 0;
    std::map<std::string, std::vector<std::string>> per_device_;
    std::map<std::string, std::size_t> per_device_next_;
    bool keyed_ = false;
    std::function<void(const PromptBundle&, int)> hook_;
    std::chrono::milliseconds delay_{0};
    std::atomic<int> calls_{0};
    mutable std::mutex received_mutex_;
    std::vector<PromptBundle> received_;
};

/// Chat-completions client. One system message and one user message whose
/// content is a text part followed by one image_url part per rendered view.
class RemotePlanner final : public Planner {
public:
    explicit RemotePlanner(PlannerSettings settings);

    PlannerReply propose(const PromptBundle& bundle) override;
    std::string kind() const override { return "remote"; }

    /// Request body for a bundle (exposed for wire-format tests).
    nlohmann::json request_body(const PromptBundle& bundle) const;
    /// Text of the first choice. Throws PlannerTransportError when absent.
    static std::string extract_answer(const nlohmann::json& response);

private:
    PlannerSettings settings_;
    std::string api_key_;
};

std::unique_ptr<Planner> make_planner(const PlannerSettings& settings);

} // namespace ordermerge
