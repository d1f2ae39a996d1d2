#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ordermerge/agent.hpp"
#include "ordermerge/config.hpp"

namespace ordermerge {

enum class RunEventKind { IterationCompleted, StatusChanged, InterventionQueued };

std::string_view to_string(RunEventKind kind);
RunEventKind parse_run_event_kind(std::string_view text);

struct RunEvent {
    std::string run_id;
    std::uint64_t seq = 0; ///< 1-based, gap-free per run
    RunEventKind kind = RunEventKind::StatusChanged;
    nlohmann::json payload;

    friend bool operator==(const RunEvent&, const RunEvent&) = default;
};

nlohmann::json to_json(const RunEvent& event);
RunEvent run_event_from_json(const nlohmann::json& j, const std::string& path = "");

/// SHA-256 of a run's canonical JSON trace.
std::string trace_hash(const MergeRun& run);

/// HTTP facade over the merge agent with file-backed state under the data
/// directory:
///
///   fleet.json            device registry (seeded from the config on first start)
///   orders.json           every accepted order
///   unassigned.json       orders the matcher could not place
///   runs/<run id>.json    run traces, rewritten after every iteration
///   events/<run id>.jsonl run event log
///   memory.jsonl          experience memory
///
/// Pending orders are not stored separately: on start they are re-derived as
/// the accepted orders that are in no terminal run and not unassigned.
class Service {
public:
    /// Loads state from the data directory. When `planner` is null one is
    /// built from the agent's planner settings.
    explicit Service(ServiceConfig config, std::unique_ptr<Planner> planner = nullptr);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds (port 0 picks a free port), starts the HTTP and dispatch
    /// threads, and returns the bound port.
    int start();
    /// Stops accepting requests, waits for an in-flight dispatch to finish,
    /// and joins all threads. Idempotent.
    void stop();
    /// Blocks until stop() is called from another thread.
    void wait();

    int port() const;
    const ServiceConfig& config() const;

    /// Requests an immediate dispatch of pending orders.
    void request_dispatch();
    /// Waits until nothing is pending or running. Returns false on timeout.
    bool wait_idle(std::chrono::milliseconds timeout);

    std::vector<MergeRun> runs() const;
    std::optional<MergeRun> run(const std::string& run_id) const;
    std::vector<RunEvent> events(const std::string& run_id, std::uint64_t after = 0) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace ordermerge
