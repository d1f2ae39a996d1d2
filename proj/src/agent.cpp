#include "ordermerge/agent.hpp"

#include <algorithm>
#include <future>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "json_util.hpp"
#include "ordermerge/errors.hpp"
#include "ordermerge/packing.hpp"

namespace ordermerge {

using detail::child_path;
using detail::json;
using detail::ObjectReader;

std::string_view to_string(RunStatus status) {
    switch (status) {
    case RunStatus::Running:
        return "Running";
    case RunStatus::Succeeded:
        return "Succeeded";
    case RunStatus::Failed:
        return "Failed";
    case RunStatus::NeedsSplit:
        return "NeedsSplit";
    }
    return "Running";
}

RunStatus parse_run_status(std::string_view text) {
    if (text == "Running") return RunStatus::Running;
    if (text == "Succeeded") return RunStatus::Succeeded;
    if (text == "Failed") return RunStatus::Failed;
    if (text == "NeedsSplit") return RunStatus::NeedsSplit;
    throw ValueError(fmt::format("unknown run status '{}'", text));
}

struct MergeAgent::RunControl {
    std::mutex mutex;
    std::vector<std::string> mailbox;
    RunStatus status = RunStatus::Running;

    std::optional<std::string> take_intervention() {
        std::lock_guard lock(mutex);
        if (mailbox.empty()) return std::nullopt;
        std::string joined;
        for (const auto& m : mailbox) {
            if (!joined.empty()) joined += '\n';
            joined += m;
        }
        mailbox.clear();
        return joined;
    }
};

namespace {

Timestamp system_now() {
    return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

} // namespace

MergeAgent::MergeAgent(AgentConfig config, MemoryStore* memory, RunObserver* observer)
    : config_(std::move(config)),
      memory_(memory),
      observer_(observer),
      template_(config_.template_path.empty() ? PromptTemplate::builtin()
                                              : PromptTemplate::load(config_.template_path)) {
    if (config_.max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
    if (!(config_.clearance_mm >= 0.0)) throw ConfigError("clearance_mm must be non-negative");
    if (!config_.clock) config_.clock = system_now;
}

std::string MergeAgent::next_run_id(const std::string& device_id) {
    std::lock_guard lock(registry_mutex_);
    return fmt::format("run-{}-{:04d}", device_id, ++run_sequences_[device_id]);
}

void MergeAgent::restore_run_sequence(const std::string& device_id, std::uint64_t last_used) {
    std::lock_guard lock(registry_mutex_);
    auto& seq = run_sequences_[device_id];
    seq = std::max(seq, last_used);
}

std::shared_ptr<MergeAgent::RunControl> MergeAgent::register_run(const std::string& run_id) {
    auto control = std::make_shared<RunControl>();
    std::lock_guard lock(registry_mutex_);
    runs_[run_id] = control;
    return control;
}

std::mutex& MergeAgent::device_lock(const std::string& device_id) {
    std::lock_guard lock(registry_mutex_);
    auto& slot = device_locks_[device_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

void MergeAgent::inject_intervention(const std::string& run_id, const std::string& instruction) {
    std::shared_ptr<RunControl> control;
    {
        std::lock_guard lock(registry_mutex_);
        auto it = runs_.find(run_id);
        if (it == runs_.end()) throw UnknownRunError(run_id);
        control = it->second;
    }
    {
        std::lock_guard lock(control->mutex);
        if (control->status != RunStatus::Running) throw RunNotActiveError(run_id);
        control->mailbox.push_back(instruction);
    }
    if (observer_) observer_->on_intervention_queued(run_id, instruction);
}

void MergeAgent::finish(MergeRun& run, RunControl& control) {
    {
        std::lock_guard lock(control.mutex);
        control.status = run.status;
        control.mailbox.clear();
    }
    if (observer_) observer_->on_status_changed(run);
}

MergeRun MergeAgent::run_merge(std::span<const WorkOrder> batch, const Device& device, Planner& planner) {
    if (batch.empty()) throw ValueError("merge batch is empty");
    for (const auto& order : batch) {
        if (auto c = compatible(order, device, config_.match_policy); !c) {
            throw ValueError(fmt::format("order '{}' is not compatible with device '{}' ({})", order.id(),
                                         device.id(), c.reason));
        }
    }

    const auto& vol = device.volume();
    PackRequest request{device.id(), {}, vol, config_.clearance_mm};
    for (const auto& order : batch) request.parts.push_back(PartSpec{order.id(), order.spatial()});
    const Layout defaults = initial_positions(request);

    std::vector<ScoredCase> similar;
    std::optional<Layout> seeded;
    if (memory_) {
        similar = memory_->retrieve_similar(make_signature(device, request.parts), config_.memory_k);
        seeded = seed_layout(similar, device.id(), request.parts, vol, config_.clearance_mm);
    }

    MergeRun run;
    run.run_id = next_run_id(device.id());
    run.device_id = device.id();
    for (const auto& order : batch) run.batch.push_back(order.id());
    run.volume = vol;
    run.clearance_mm = config_.clearance_mm;
    run.start_layout = seeded ? *seeded : defaults;
    if (seeded) run.start_source = "memory:" + similar.front().case_id;
    auto control = register_run(run.run_id);

    std::lock_guard device_guard(device_lock(device.id()));
    if (observer_) observer_->on_run_started(run);

    Layout layout = run.start_layout;
    InterferenceReport report = check_layout(layout, vol);
    run.start_report = report;

    std::vector<std::string> memory_ids;
    for (const auto& sc : similar) memory_ids.push_back(sc.case_id);

    const double footprint =
        std::accumulate(request.parts.begin(), request.parts.end(), 0.0,
                        [](double acc, const PartSpec& p) { return acc + p.dims.footprint(); });

    if (report.clear) {
        run.status = RunStatus::Succeeded;
    } else if (footprint > vol.footprint()) {
        run.status = RunStatus::NeedsSplit;
        run.failure_cause = fmt::format("batch footprint {:.2f} mm2 exceeds bed area {:.2f} mm2", footprint,
                                        vol.footprint());
    } else {
        std::optional<std::string> repair;
        for (int index = 1; index <= config_.max_iterations; ++index) {
            IterationRecord record;
            record.index = index;
            record.prompt_template_id = template_.id();
            record.planner_kind = planner.kind();
            record.memory_case_ids = memory_ids;
            record.intervention = control->take_intervention();

            PromptOptions options;
            options.prompt_template = &template_;
            options.include_images = config_.render_images;
            options.repair_answer = repair;
            auto bundle = build_prompt(layout, defaults, vol, report, similar, record.intervention, options);
            for (const auto& image : bundle.images) record.images.push_back(image.label);

            PlannerReply reply;
            try {
                reply = planner.propose(bundle);
            } catch (const std::exception& e) {
                // Transport failures and planner bugs alike end the run; they
                // never count as a proposal.
                run.status = RunStatus::Failed;
                run.failure_cause = e.what();
                break;
            }
            record.raw_answer = reply.text;
            repair.reset();

            if (reply.capacity_exceeded) {
                record.parse_error = "planner reported that the batch does not fit";
                record.applied_layout = layout;
                record.report = report;
                run.iterations.push_back(record);
                if (observer_) observer_->on_iteration(run, run.iterations.back());
                run.status = RunStatus::NeedsSplit;
                run.failure_cause = reply.text;
                break;
            }

            try {
                auto answer = parse_positions(reply.text, layout.placements.size());
                record.proposed_positions = answer.positions;
                for (std::size_t i = 0; i < layout.placements.size(); ++i) {
                    auto& p = layout.placements[i];
                    // z is pinned to the bed-resting height whatever the planner said.
                    p.center = Vec3{answer.positions[i].x, answer.positions[i].y, p.dims.h() / 2.0};
                }
                report = check_layout(layout, vol);
            } catch (const Error& e) {
                if (e.code() != "parse_error" && e.code() != "count_mismatch" && e.code() != "non_finite") throw;
                record.parse_error = e.what();
                repair = reply.text;
            }
            record.applied_layout = layout;
            record.report = report;
            run.iterations.push_back(record);
            if (observer_) observer_->on_iteration(run, run.iterations.back());

            if (!record.parse_error && report.clear) {
                run.status = RunStatus::Succeeded;
                break;
            }
        }
        if (run.status == RunStatus::Running) {
            run.status = RunStatus::Failed;
            run.failure_cause = fmt::format("no interference-free layout after {} proposals", config_.max_iterations);
        }
    }

    if (run.status == RunStatus::NeedsSplit && batch.size() == 1) {
        // A lone part cannot be split further.
        run.status = RunStatus::Failed;
        run.failure_cause = "single part could not be placed: " + run.failure_cause.value_or("");
    }

    if (run.status == RunStatus::Succeeded) {
        run.final_layout = layout;
        // Only layouts the planner produced are new knowledge; replays and
        // trivially clear starts are not recorded again.
        if (memory_ && !run.iterations.empty()) {
            MemoryCase c;
            c.signature = make_signature(device, request.parts);
            c.device_id = device.id();
            for (const auto& p : layout.placements) {
                c.final_positions.push_back(CasePosition{{p.dims.l(), p.dims.w(), p.dims.h()}, p.center});
            }
            c.iterations_used = run.planner_calls();
            c.template_id = template_.id();
            c.recorded_at = config_.clock();
            c.clearance_mm = config_.clearance_mm;
            c.volume_mm = {vol.l(), vol.w(), vol.h()};
            try {
                run.recorded_case_id = memory_->record_success(c);
            } catch (const Error& e) {
                spdlog::warn("run {}: success not recorded in memory: {}", run.run_id, e.what());
            }
        }
    }
    finish(run, *control);
    return run;
}

StreamOutcome MergeAgent::process_order_stream(std::span<const OrderArrival> events, const Fleet& fleet,
                                               Planner& planner) {
    StreamOutcome outcome;
    std::vector<WorkOrder> pending;

    auto run_device = [&](const Assignment& assignment, const std::vector<WorkOrder>& pool) {
        std::pair<std::vector<MergeRun>, std::vector<WorkOrder>> result;
        const Device* device = fleet.find(assignment.device_id);
        std::vector<WorkOrder> batch;
        for (const auto& id : assignment.order_ids) {
            for (const auto& o : pool) {
                if (o.id() == id) batch.push_back(o);
            }
        }
        while (true) {
            auto run = run_merge(batch, *device, planner);
            auto status = run.status;
            result.first.push_back(std::move(run));
            if (status != RunStatus::NeedsSplit) break;
            result.second.push_back(batch.back());
            batch.pop_back();
        }
        return result;
    };

    auto dispatch = [&] {
        while (!pending.empty()) {
            std::vector<WorkOrder> pool = std::move(pending);
            pending.clear();
            auto match = match_orders(OrderBook(pool), fleet, config_.match_policy);
            outcome.unassigned.insert(outcome.unassigned.end(), match.unassigned.begin(), match.unassigned.end());

            std::vector<std::pair<std::vector<MergeRun>, std::vector<WorkOrder>>> per_device;
            if (config_.parallel_runs && match.assignments.size() > 1) {
                std::vector<std::future<std::pair<std::vector<MergeRun>, std::vector<WorkOrder>>>> futures;
                for (const auto& a : match.assignments) {
                    futures.push_back(std::async(std::launch::async, run_device, std::cref(a), std::cref(pool)));
                }
                for (auto& f : futures) per_device.push_back(f.get());
            } else {
                for (const auto& a : match.assignments) per_device.push_back(run_device(a, pool));
            }
            for (auto& [runs, requeue] : per_device) {
                for (auto& r : runs) outcome.runs.push_back(std::move(r));
                for (auto& o : requeue) pending.push_back(std::move(o));
            }
        }
    };

    std::optional<Timestamp> window_start;
    for (const auto& event : events) {
        if (config_.batch_window_seconds > 0 && window_start &&
            event.arrived_at - *window_start >= std::chrono::seconds(config_.batch_window_seconds)) {
            dispatch();
            window_start.reset();
        }
        if (!window_start) window_start = event.arrived_at;
        pending.push_back(event.order);
        if (config_.batch_window_count > 0 && pending.size() >= config_.batch_window_count) {
            dispatch();
            window_start.reset();
        }
    }
    dispatch();
    return outcome;
}

// --- JSON ---

namespace {

json positions_json(const std::vector<Vec3>& positions) {
    json arr = json::array();
    for (const auto& p : positions) arr.push_back({p.x, p.y, p.z});
    return arr;
}

std::vector<Vec3> positions_from(const json& j, const std::string& path) {
    if (!j.is_array()) throw SchemaError(path, "expected an array of [x, y, z]");
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& t = j[i];
        if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() || !t[2].is_number()) {
            throw SchemaError(child_path(path, i), "expected [x, y, z]");
        }
        out.push_back(Vec3{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    }
    return out;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

} // namespace

json to_json(const IterationRecord& r) {
    return json{
        {"index", r.index},
        {"raw_answer", r.raw_answer},
        {"proposed_positions", r.proposed_positions ? positions_json(*r.proposed_positions) : json(nullptr)},
        {"parse_error", optional_json(r.parse_error)},
        {"applied_layout", to_json(r.applied_layout)},
        {"report", to_json(r.report)},
        {"prompt_template_id", r.prompt_template_id},
        {"planner_kind", r.planner_kind},
        {"memory_case_ids", r.memory_case_ids},
        {"intervention", optional_json(r.intervention)},
        {"images", r.images},
    };
}

IterationRecord iteration_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path,
                   {"index", "raw_answer", "proposed_positions", "parse_error", "applied_layout", "report",
                    "prompt_template_id", "planner_kind", "memory_case_ids", "intervention", "images"});
    IterationRecord rec;
    rec.index = static_cast<int>(r.integer("index"));
    rec.raw_answer = r.string("raw_answer");
    if (r.has("proposed_positions") && !r.at("proposed_positions").is_null()) {
        rec.proposed_positions = positions_from(r.at("proposed_positions"), child_path(path, "proposed_positions"));
    }
    rec.parse_error = r.optional_string("parse_error");
    rec.applied_layout = layout_from_json(r.object("applied_layout"), child_path(path, "applied_layout"));
    rec.report = report_from_json(r.object("report"), child_path(path, "report"));
    rec.prompt_template_id = r.string("prompt_template_id");
    rec.planner_kind = r.string("planner_kind");
    rec.memory_case_ids = r.string_list("memory_case_ids");
    rec.intervention = r.optional_string("intervention");
    rec.images = r.string_list("images");
    return rec;
}

json to_json(const MergeRun& run) {
    json iterations = json::array();
    for (const auto& it : run.iterations) iterations.push_back(to_json(it));
    return json{
        {"run_id", run.run_id},
        {"device_id", run.device_id},
        {"batch", run.batch},
        {"volume", to_json(run.volume)},
        {"clearance_mm", run.clearance_mm},
        {"status", std::string(to_string(run.status))},
        {"start_source", run.start_source},
        {"start_layout", to_json(run.start_layout)},
        {"start_report", to_json(run.start_report)},
        {"iterations", iterations},
        {"planner_calls", run.planner_calls()},
        {"final_layout", run.final_layout ? to_json(*run.final_layout) : json(nullptr)},
        {"failure_cause", optional_json(run.failure_cause)},
        {"recorded_case_id", optional_json(run.recorded_case_id)},
    };
}

MergeRun merge_run_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path,
                   {"run_id", "device_id", "batch", "volume", "clearance_mm", "status", "start_source",
                    "start_layout", "start_report", "iterations", "planner_calls", "final_layout",
                    "failure_cause", "recorded_case_id"});
    MergeRun run;
    run.run_id = r.string("run_id");
    run.device_id = r.string("device_id");
    run.batch = r.string_list("batch");
    run.volume = volume_from_json(r.object("volume"), child_path(path, "volume"));
    run.clearance_mm = r.number("clearance_mm");
    run.status = parse_run_status(r.string("status"));
    run.start_source = r.string("start_source");
    run.start_layout = layout_from_json(r.object("start_layout"), child_path(path, "start_layout"));
    run.start_report = report_from_json(r.object("start_report"), child_path(path, "start_report"));
    const auto& iterations = r.array("iterations");
    for (std::size_t i = 0; i < iterations.size(); ++i) {
        run.iterations.push_back(iteration_from_json(iterations[i], child_path(child_path(path, "iterations"), i)));
    }
    if (r.has("final_layout") && !r.at("final_layout").is_null()) {
        run.final_layout = layout_from_json(r.object("final_layout"), child_path(path, "final_layout"));
    }
    run.failure_cause = r.optional_string("failure_cause");
    run.recorded_case_id = r.optional_string("recorded_case_id");
    return run;
}

json run_summary_json(const MergeRun& run) {
    return json{
        {"run_id", run.run_id},
        {"device_id", run.device_id},
        {"batch", run.batch},
        {"status", std::string(to_string(run.status))},
        {"planner_calls", run.planner_calls()},
        {"start_source", run.start_source},
        {"failure_cause", optional_json(run.failure_cause)},
    };
}

} // namespace ordermerge
