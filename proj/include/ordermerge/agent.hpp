#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ordermerge/geometry.hpp"
#include "ordermerge/matching.hpp"
#include "ordermerge/memory.hpp"
#include "ordermerge/model.hpp"
#include "ordermerge/planner.hpp"
#include "ordermerge/prompting.hpp"

namespace ordermerge {

struct AgentConfig {
    double clearance_mm = kDefaultClearanceMm;
    int max_iterations = 10;
    std::size_t memory_k = kDefaultMemoryK;
    bool render_images = true;
    /// Orders per dispatch; 0 dispatches everything pending at the end of the
    /// stream (or when the time window closes).
    std::size_t batch_window_count = 0;
    /// Arrival-time window in seconds; 0 disables it.
    std::int64_t batch_window_seconds = 0;
    bool parallel_runs = true;
    // Placement never rotates parts, so matching must not rely on a yaw swap.
    MatchPolicy match_policy{DevicePreference::SmallestFit, false};
    PlannerSettings planner{};
    /// Prompt template file; builtin template when empty.
    std::string template_path;
    /// Clock for memory timestamps (injectable for tests).
    std::function<Timestamp()> clock;
};

enum class RunStatus { Running, Succeeded, Failed, NeedsSplit };

std::string_view to_string(RunStatus status);
RunStatus parse_run_status(std::string_view text);

struct IterationRecord {
    int index = 0;
    std::string raw_answer;
    /// As answered by the planner (z unmodified); absent on a parse error.
    std::optional<std::vector<Vec3>> proposed_positions;
    std::optional<std::string> parse_error;
    /// Layout after the answer was applied with z reset to h / 2.
    Layout applied_layout;
    InterferenceReport report;
    std::string prompt_template_id;
    std::string planner_kind;
    std::vector<std::string> memory_case_ids;
    std::optional<std::string> intervention;
    std::vector<std::string> images;

    friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct MergeRun {
    std::string run_id;
    std::string device_id;
    std::vector<std::string> batch;
    BuildVolume volume{1.0, 1.0, 1.0};
    double clearance_mm = kDefaultClearanceMm;
    RunStatus status = RunStatus::Running;
    /// "initial" or "memory:<case id>".
    std::string start_source = "initial";
    Layout start_layout;
    InterferenceReport start_report;
    std::vector<IterationRecord> iterations;
    std::optional<Layout> final_layout;
    std::optional<std::string> failure_cause;
    std::optional<std::string> recorded_case_id;

    int planner_calls() const { return static_cast<int>(iterations.size()); }

    friend bool operator==(const MergeRun&, const MergeRun&) = default;
};

nlohmann::json to_json(const IterationRecord& record);
nlohmann::json to_json(const MergeRun& run);
IterationRecord iteration_from_json(const nlohmann::json& j, const std::string& path = "");
MergeRun merge_run_from_json(const nlohmann::json& j, const std::string& path = "");
/// Compact per-run listing entry.
nlohmann::json run_summary_json(const MergeRun& run);

/// Receives progress from running merges. Callbacks may arrive from several
/// threads (one per concurrently running device).
class RunObserver {
public:
    virtual ~RunObserver() = default;
    virtual void on_run_started(const MergeRun&) {}
    virtual void on_iteration(const MergeRun&, const IterationRecord&) {}
    virtual void on_status_changed(const MergeRun&) {}
    virtual void on_intervention_queued(const std::string& /*run_id*/, const std::string& /*instruction*/) {}
};

struct OrderArrival {
    WorkOrder order;
    Timestamp arrived_at{};
};

struct StreamOutcome {
    std::vector<MergeRun> runs;
    std::vector<Unassigned> unassigned;
};

/// Runs the propose/check/refine loop. The interference checker is the only
/// authority on success: a run is Succeeded only when the checker reports the
/// final layout clear.
class MergeAgent {
public:
    explicit MergeAgent(AgentConfig config, MemoryStore* memory = nullptr, RunObserver* observer = nullptr);

    const AgentConfig& config() const noexcept { return config_; }
    const PromptTemplate& prompt_template() const noexcept { return template_; }

    /// Every order must be compatible with the device (throws ValueError).
    /// Planner transport failures end the run as Failed with the cause set.
    MergeRun run_merge(std::span<const WorkOrder> batch, const Device& device, Planner& planner);

    /// Buffers arrivals per the batch window, matches each dispatch, and runs
    /// one merge per device batch. NeedsSplit batches drop their last order,
    /// which is re-queued for the next dispatch.
    StreamOutcome process_order_stream(std::span<const OrderArrival> events, const Fleet& fleet, Planner& planner);

    /// Queues an operator instruction for the next prompt of a running merge.
    /// Throws UnknownRunError or RunNotActiveError.
    void inject_intervention(const std::string& run_id, const std::string& instruction);

    /// Run ids are `run-<device>-<n>` with a per-device sequence, so ids do
    /// not depend on how concurrent device runs interleave. After a restart
    /// the caller restores each device's last used sequence number.
    void restore_run_sequence(const std::string& device_id, std::uint64_t last_used);

private:
    struct RunControl;

    std::string next_run_id(const std::string& device_id);
    std::shared_ptr<RunControl> register_run(const std::string& run_id);
    std::mutex& device_lock(const std::string& device_id);
    void finish(MergeRun& run, RunControl& control);

    AgentConfig config_;
    MemoryStore* memory_;
    RunObserver* observer_;
    PromptTemplate template_;

    std::mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<RunControl>> runs_;
    std::map<std::string, std::unique_ptr<std::mutex>> device_locks_;
    std::map<std::string, std::uint64_t> run_sequences_;
};

} // namespace ordermerge
