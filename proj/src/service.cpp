#include "ordermerge/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include "json_util.hpp"
#include "ordermerge/errors.hpp"
#include "ordermerge/hash.hpp"

namespace fs = std::filesystem;

namespace ordermerge {

using detail::child_path;
using detail::json;
using detail::ObjectReader;

std::string_view to_string(RunEventKind kind) {
    switch (kind) {
    case RunEventKind::IterationCompleted:
        return "IterationCompleted";
    case RunEventKind::StatusChanged:
        return "StatusChanged";
    case RunEventKind::InterventionQueued:
        return "InterventionQueued";
    }
    return "StatusChanged";
}

RunEventKind parse_run_event_kind(std::string_view text) {
    if (text == "IterationCompleted") return RunEventKind::IterationCompleted;
    if (text == "StatusChanged") return RunEventKind::StatusChanged;
    if (text == "InterventionQueued") return RunEventKind::InterventionQueued;
    throw ValueError(fmt::format("unknown run event kind '{}'", text));
}

json to_json(const RunEvent& e) {
    return json{{"run_id", e.run_id}, {"seq", e.seq}, {"kind", std::string(to_string(e.kind))}, {"payload", e.payload}};
}

RunEvent run_event_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"run_id", "seq", "kind", "payload"});
    RunEvent e;
    e.run_id = r.string("run_id");
    auto seq = r.integer("seq");
    if (seq < 1) throw SchemaError(child_path(path, "seq"), "must be positive");
    e.seq = static_cast<std::uint64_t>(seq);
    e.kind = parse_run_event_kind(r.string("kind"));
    e.payload = r.at("payload");
    return e;
}

std::string trace_hash(const MergeRun& run) { return sha256_hex(to_json(run).dump()); }

namespace {

// --- file helpers ---

void write_file_atomic(const fs::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw StorageError(fmt::format("cannot write '{}'", tmp.string()));
    bool ok = std::fwrite(content.data(), 1, content.size(), f) == content.size();
    ok = ok && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
    ok = std::fclose(f) == 0 && ok;
    if (!ok) throw StorageError(fmt::format("failed writing '{}'", tmp.string()));
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw StorageError(fmt::format("cannot replace '{}': {}", path.string(), ec.message()));
}

void append_line(const fs::path& path, const std::string& line) {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw StorageError(fmt::format("cannot append to '{}'", path.string()));
    bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fputc('\n', f) != EOF;
    ok = ok && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
    ok = std::fclose(f) == 0 && ok;
    if (!ok) throw StorageError(fmt::format("failed appending to '{}'", path.string()));
}

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw StorageError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

// --- HTTP helpers ---

struct HttpError {
    int status;
    std::string code;
    std::string message;
};

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, json{{"error", {{"code", code}, {"message", message}}}});
}

// Errors from parsing client-supplied documents.
HttpError client_error(const Error& e) {
    if (e.code() == "duplicate_id") return {409, e.code(), e.what()};
    if (e.code() == "storage_error") return {503, e.code(), e.what()};
    return {422, e.code(), e.what()};
}

Timestamp now_seconds() {
    return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

std::uint64_t query_u64(const httplib::Request& req, const char* name, std::uint64_t fallback) {
    if (!req.has_param(name)) return fallback;
    auto text = req.get_param_value(name);
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw HttpError{400, "bad_request", fmt::format("query parameter '{}' must be a non-negative integer", name)};
    }
    return value;
}

// "run-<device>-<n>" -> (device, n)
std::optional<std::pair<std::string, std::uint64_t>> split_run_id(const std::string& id) {
    auto dash = id.rfind('-');
    if (id.rfind("run-", 0) != 0 || dash == std::string::npos || dash <= 4) return std::nullopt;
    std::uint64_t n = 0;
    auto digits = std::string_view(id).substr(dash + 1);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
    return std::pair{id.substr(4, dash - 4), n};
}

bool terminal(RunStatus s) { return s == RunStatus::Succeeded || s == RunStatus::Failed; }

json views_json(const Layout& layout, const BuildVolume& vol) {
    json out = json::array();
    for (const auto& view : render_views(layout, vol)) {
        out.push_back({{"label", view.label}, {"data_url", view.data_url()}});
    }
    return out;
}

} // namespace

struct Service::Impl final : RunObserver {
    ServiceConfig cfg;
    fs::path runs_dir;
    fs::path events_dir;
    std::unique_ptr<Planner> planner;
    std::unique_ptr<MemoryStore> memory;
    std::unique_ptr<MergeAgent> agent;

    mutable std::mutex mu;
    std::condition_variable dispatch_cv;
    mutable std::condition_variable idle_cv;
    mutable std::condition_variable events_cv;

    Fleet fleet;
    std::vector<WorkOrder> orders;
    std::deque<OrderArrival> pending;
    std::vector<Unassigned> unassigned;
    std::map<std::string, MergeRun> runs;
    std::map<std::string, std::vector<RunEvent>> events;
    bool busy = false;
    bool stopping = false;
    bool dispatch_requested = false;
    std::chrono::steady_clock::time_point last_intake{};

    httplib::Server server;
    std::thread http_thread;
    std::thread dispatch_thread;
    int bound_port = -1;
    bool started = false;
    bool stopped = false;
    std::mutex lifecycle_mu;
    std::condition_variable stopped_cv;

    Impl(ServiceConfig config, std::unique_ptr<Planner> p) : cfg(std::move(config)), planner(std::move(p)) {
        runs_dir = cfg.data_dir / "runs";
        events_dir = cfg.data_dir / "events";
        ensure_dir(runs_dir);
        ensure_dir(events_dir);
        if (!planner) planner = make_planner(cfg.agent.planner);
        memory = std::make_unique<MemoryStore>(cfg.data_dir / "memory.jsonl");
        agent = std::make_unique<MergeAgent>(cfg.agent, memory.get(), this);
        load_state();
        routes();
    }

    // --- persistence ---

    void load_state() {
        if (auto text = read_file(cfg.data_dir / "fleet.json")) {
            fleet = load_fleet(*text);
        } else if (!cfg.fleet_seed.empty()) {
            auto seed = read_file(cfg.fleet_seed);
            if (!seed) throw ConfigError(fmt::format("cannot read fleet '{}'", cfg.fleet_seed.string()));
            fleet = load_fleet(*seed);
            write_file_atomic(cfg.data_dir / "fleet.json", save_fleet(fleet));
        }
        if (auto text = read_file(cfg.data_dir / "orders.json")) orders = load_orders(*text).orders();
        if (auto text = read_file(cfg.data_dir / "unassigned.json")) {
            auto j = detail::parse_json(*text);
            ObjectReader r(j, "", {"unassigned"});
            for (const auto& u : r.array("unassigned")) {
                unassigned.push_back(Unassigned{u.at("order_id").get<std::string>(), u.at("reason").get<std::string>()});
            }
        }

        for (const auto& entry : fs::directory_iterator(runs_dir)) {
            if (entry.path().extension() != ".json") continue;
            auto text = read_file(entry.path());
            try {
                auto run = merge_run_from_json(detail::parse_json(*text));
                runs[run.run_id] = std::move(run);
            } catch (const Error& e) {
                spdlog::warn("skipping unreadable run trace {}: {}", entry.path().string(), e.what());
            }
        }
        for (auto& [id, run] : runs) {
            load_events(id);
            if (auto parts = split_run_id(id)) agent->restore_run_sequence(parts->first, parts->second);
        }
        // Runs cut off by a shutdown cannot resume: their planner state is gone.
        for (auto& [id, run] : runs) {
            if (run.status != RunStatus::Running) continue;
            run.status = RunStatus::Failed;
            run.failure_cause = "interrupted by service restart";
            persist_run(run);
            emit(id, RunEventKind::StatusChanged, status_payload(run));
            spdlog::warn("run {} was interrupted and is now Failed", id);
        }

        std::set<std::string> settled;
        for (const auto& u : unassigned) settled.insert(u.order_id);
        for (const auto& [id, run] : runs) {
            if (terminal(run.status)) settled.insert(run.batch.begin(), run.batch.end());
        }
        auto now = now_seconds();
        for (const auto& o : orders) {
            if (!settled.count(o.id())) pending.push_back(OrderArrival{o, now});
        }
        if (!pending.empty()) {
            spdlog::info("{} accepted order(s) still pending after restart", pending.size());
            dispatch_requested = true;
        }
    }

    void load_events(const std::string& run_id) {
        auto& log = events[run_id];
        std::ifstream in(events_dir / (run_id + ".jsonl"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                auto e = run_event_from_json(detail::parse_json(line));
                if (e.seq != log.size() + 1) throw ValueError("sequence gap");
                log.push_back(std::move(e));
            } catch (const Error& e) {
                spdlog::warn("event log for {}: skipping line ({})", run_id, e.what());
            }
        }
    }

    void persist_run(const MergeRun& run) {
        write_file_atomic(runs_dir / (run.run_id + ".json"), to_json(run).dump(2));
    }

    void persist_orders() {
        write_file_atomic(cfg.data_dir / "orders.json", save_orders(OrderBook(orders)));
    }

    void persist_fleet() { write_file_atomic(cfg.data_dir / "fleet.json", save_fleet(fleet)); }

    void persist_unassigned() {
        json arr = json::array();
        for (const auto& u : unassigned) arr.push_back({{"order_id", u.order_id}, {"reason", u.reason}});
        write_file_atomic(cfg.data_dir / "unassigned.json", json{{"unassigned", arr}}.dump(2));
    }

    // Caller holds mu.
    void emit(const std::string& run_id, RunEventKind kind, json payload) {
        auto& log = events[run_id];
        RunEvent e{run_id, log.size() + 1, kind, std::move(payload)};
        try {
            append_line(events_dir / (run_id + ".jsonl"), to_json(e).dump());
        } catch (const StorageError& err) {
            spdlog::error("event log for {}: {}", run_id, err.what());
        }
        log.push_back(std::move(e));
        events_cv.notify_all();
    }

    static json status_payload(const MergeRun& run) {
        return json{{"status", std::string(to_string(run.status))},
                    {"planner_calls", run.planner_calls()},
                    {"failure_cause", run.failure_cause ? json(*run.failure_cause) : json(nullptr)}};
    }

    void store_run(const MergeRun& run) {
        runs[run.run_id] = run;
        try {
            persist_run(run);
        } catch (const StorageError& e) {
            spdlog::error("run {}: {}", run.run_id, e.what());
        }
    }

    // --- RunObserver (called from agent threads) ---

    void on_run_started(const MergeRun& run) override {
        std::lock_guard lock(mu);
        store_run(run);
        emit(run.run_id, RunEventKind::StatusChanged, status_payload(run));
    }

    void on_iteration(const MergeRun& run, const IterationRecord& record) override {
        std::lock_guard lock(mu);
        store_run(run);
        emit(run.run_id, RunEventKind::IterationCompleted,
             json{{"index", record.index},
                  {"clear", record.report.clear},
                  {"report", record.report.text},
                  {"parse_error", record.parse_error ? json(*record.parse_error) : json(nullptr)},
                  {"intervention", record.intervention ? json(*record.intervention) : json(nullptr)}});
    }

    void on_status_changed(const MergeRun& run) override {
        std::lock_guard lock(mu);
        store_run(run);
        emit(run.run_id, RunEventKind::StatusChanged, status_payload(run));
    }

    void on_intervention_queued(const std::string& run_id, const std::string& instruction) override {
        std::lock_guard lock(mu);
        emit(run_id, RunEventKind::InterventionQueued, json{{"instruction", instruction}});
    }

    // --- dispatch ---

    void dispatch_loop() {
        std::unique_lock lock(mu);
        while (true) {
            dispatch_cv.wait(lock, [&] { return stopping || dispatch_requested || !pending.empty(); });
            if (stopping) break;
            while (!dispatch_requested && !stopping) {
                auto deadline = last_intake + cfg.dispatch_delay;
                if (std::chrono::steady_clock::now() >= deadline) break;
                dispatch_cv.wait_until(lock, deadline);
            }
            if (stopping) break;
            dispatch_requested = false;
            if (pending.empty()) {
                idle_cv.notify_all();
                continue;
            }
            std::vector<OrderArrival> batch(pending.begin(), pending.end());
            pending.clear();
            Fleet snapshot = fleet;
            busy = true;
            lock.unlock();

            StreamOutcome outcome;
            try {
                outcome = agent->process_order_stream(batch, snapshot, *planner);
            } catch (const std::exception& e) {
                spdlog::error("dispatch failed: {}", e.what());
            }

            lock.lock();
            if (!outcome.unassigned.empty()) {
                unassigned.insert(unassigned.end(), outcome.unassigned.begin(), outcome.unassigned.end());
                try {
                    persist_unassigned();
                } catch (const StorageError& e) {
                    spdlog::error("{}", e.what());
                }
            }
            busy = false;
            idle_cv.notify_all();
        }
    }

    bool idle() const { return !busy && pending.empty() && !dispatch_requested; }

    // --- routes ---

    template <typename F>
    auto guarded(F handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const HttpError& e) {
                send_error(res, e.status, e.code, e.message);
            } catch (const StorageError& e) {
                send_error(res, 503, e.code(), e.what());
            } catch (const Error& e) {
                send_error(res, 422, e.code(), e.what());
            } catch (const std::exception& e) {
                spdlog::error("{} {}: {}", req.method, req.path, e.what());
                send_error(res, 500, "internal", e.what());
            }
        };
    }

    static json parse_body(const httplib::Request& req) {
        try {
            return detail::parse_json(req.body);
        } catch (const Error& e) {
            throw HttpError{422, e.code(), e.what()};
        }
    }

    // Accepts one order, an array of orders, or {"orders": [...]}.
    std::vector<WorkOrder> parse_orders(const json& body) const {
        std::vector<WorkOrder> parsed;
        try {
            if (body.is_array()) {
                for (std::size_t i = 0; i < body.size(); ++i) parsed.push_back(order_from_json(body[i], child_path("", i)));
            } else if (body.is_object() && body.contains("orders")) {
                ObjectReader r(body, "", {"orders"});
                const auto& arr = r.array("orders");
                for (std::size_t i = 0; i < arr.size(); ++i) {
                    parsed.push_back(order_from_json(arr[i], child_path("/orders", i)));
                }
            } else {
                parsed.push_back(order_from_json(body));
            }
        } catch (const Error& e) {
            auto err = client_error(e);
            throw HttpError{err.status == 503 ? 422 : err.status, err.code, err.message};
        }
        return parsed;
    }

    void routes() {
        server.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, json{{"status", "ok"}});
        }));

        server.Post("/api/orders", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto incoming = parse_orders(parse_body(req));
            std::lock_guard lock(mu);
            std::set<std::string> ids;
            for (const auto& o : orders) ids.insert(o.id());
            json accepted = json::array();
            for (const auto& o : incoming) {
                if (!ids.insert(o.id()).second) {
                    throw HttpError{409, "duplicate_id", fmt::format("order '{}' already exists", o.id())};
                }
                accepted.push_back(o.id());
            }
            auto before = orders.size();
            orders.insert(orders.end(), incoming.begin(), incoming.end());
            try {
                persist_orders();
            } catch (const StorageError&) {
                orders.erase(orders.begin() + static_cast<std::ptrdiff_t>(before), orders.end());
                throw;
            }
            auto now = now_seconds();
            for (const auto& o : incoming) pending.push_back(OrderArrival{o, now});
            last_intake = std::chrono::steady_clock::now();
            dispatch_cv.notify_all();
            json body{{"ids", accepted}};
            if (accepted.size() == 1) body["id"] = accepted[0];
            send_json(res, 201, body);
        }));

        server.Get("/api/orders", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mu);
            std::map<std::string, std::string> state;
            for (const auto& o : orders) state[o.id()] = "dispatched";
            for (const auto& p : pending) state[p.order.id()] = "pending";
            for (const auto& u : unassigned) state[u.order_id] = "unassigned";
            for (const auto& [id, run] : runs) {
                if (!terminal(run.status)) continue;
                for (const auto& oid : run.batch) state[oid] = run.status == RunStatus::Succeeded ? "merged" : "failed";
            }
            json arr = json::array();
            for (const auto& o : orders) {
                auto j = order_to_json(o);
                j["state"] = state[o.id()];
                arr.push_back(j);
            }
            send_json(res, 200, json{{"orders", arr}});
        }));

        server.Get("/api/devices", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mu);
            json arr = json::array();
            for (const auto& d : fleet.devices()) arr.push_back(device_to_json(d));
            send_json(res, 200, json{{"devices", arr}});
        }));

        server.Post("/api/devices", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            std::optional<Device> device;
            try {
                device = device_from_json(body);
            } catch (const Error& e) {
                auto err = client_error(e);
                throw HttpError{err.status, err.code, err.message};
            }
            std::lock_guard lock(mu);
            if (fleet.find(device->id())) {
                throw HttpError{409, "duplicate_id", fmt::format("device '{}' already exists", device->id())};
            }
            auto previous = fleet;
            auto devices = fleet.devices();
            devices.push_back(*device);
            fleet = Fleet(std::move(devices));
            try {
                persist_fleet();
            } catch (const StorageError&) {
                fleet = previous;
                throw;
            }
            send_json(res, 201, device_to_json(*device));
        }));

        server.Put(R"(/api/devices/([^/]+)/status)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto id = req.matches[1].str();
            auto body = parse_body(req);
            DeviceStatus status;
            try {
                ObjectReader r(body, "", {"status"});
                auto text = r.string("status");
                status = parse_device_status(text);
            } catch (const Error& e) {
                throw HttpError{422, e.code(), e.what()};
            }
            std::lock_guard lock(mu);
            if (!fleet.find(id)) throw HttpError{404, "unknown_device", fmt::format("no device '{}'", id)};
            auto previous = fleet;
            std::vector<Device> devices;
            for (const auto& d : fleet.devices()) devices.push_back(d.id() == id ? d.with_status(status) : d);
            fleet = Fleet(std::move(devices));
            try {
                persist_fleet();
            } catch (const StorageError&) {
                fleet = previous;
                throw;
            }
            send_json(res, 200, device_to_json(*fleet.find(id)));
        }));

        server.Post("/api/match/preview", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::vector<WorkOrder> subject;
            if (!req.body.empty()) subject = parse_orders(parse_body(req));
            std::lock_guard lock(mu);
            if (req.body.empty()) {
                for (const auto& p : pending) subject.push_back(p.order);
            }
            OrderBook book;
            try {
                book = OrderBook(subject);
            } catch (const Error& e) {
                throw HttpError{409, e.code(), e.what()};
            }
            send_json(res, 200, to_json(match_orders(book, fleet, cfg.agent.match_policy)));
        }));

        server.Post("/api/dispatch", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mu);
            dispatch_requested = true;
            dispatch_cv.notify_all();
            send_json(res, 202, json{{"pending", pending.size()}});
        }));

        server.Get("/api/runs", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mu);
            json arr = json::array();
            for (const auto& [id, run] : runs) {
                auto j = run_summary_json(run);
                j["trace_sha256"] = trace_hash(run);
                arr.push_back(j);
            }
            send_json(res, 200, json{{"runs", arr}});
        }));

        server.Get(R"(/api/runs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto id = req.matches[1].str();
            std::optional<MergeRun> run;
            {
                std::lock_guard lock(mu);
                if (auto it = runs.find(id); it != runs.end()) run = it->second;
            }
            if (!run) throw HttpError{404, "unknown_run", fmt::format("no run '{}'", id)};
            auto j = to_json(*run);
            j["trace_sha256"] = trace_hash(*run);
            if (req.get_param_value("images") != "0") {
                json views{{"start", views_json(run->start_layout, run->volume)}, {"iterations", json::array()}};
                for (const auto& it : run->iterations) views["iterations"].push_back(views_json(it.applied_layout, run->volume));
                j["views"] = views;
            }
            send_json(res, 200, j);
        }));

        server.Post(R"(/api/runs/([^/]+)/intervene)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto id = req.matches[1].str();
            auto body = parse_body(req);
            std::string instruction;
            try {
                ObjectReader r(body, "", {"instruction"});
                instruction = r.string("instruction");
            } catch (const Error& e) {
                throw HttpError{422, e.code(), e.what()};
            }
            if (instruction.empty()) throw HttpError{422, "value_error", "/instruction: must not be empty"};
            {
                std::lock_guard lock(mu);
                auto it = runs.find(id);
                if (it == runs.end()) throw HttpError{404, "unknown_run", fmt::format("no run '{}'", id)};
                if (it->second.status != RunStatus::Running) {
                    throw HttpError{409, "run_not_active",
                                    fmt::format("run '{}' is {}", id, to_string(it->second.status))};
                }
            }
            try {
                agent->inject_intervention(id, instruction);
            } catch (const Error& e) {
                throw HttpError{409, "run_not_active", e.what()};
            }
            send_json(res, 202, json{{"run_id", id}, {"queued", true}});
        }));

        server.Get(R"(/api/runs/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto id = req.matches[1].str();
            auto after = query_u64(req, "after", 0);
            auto wait_ms = std::min<std::uint64_t>(query_u64(req, "timeout_ms", 10000),
                                                   static_cast<std::uint64_t>(cfg.max_poll_wait.count()));
            std::unique_lock lock(mu);
            if (!runs.count(id)) throw HttpError{404, "unknown_run", fmt::format("no run '{}'", id)};
            auto ready = [&] { return stopping || events[id].size() > after; };
            events_cv.wait_for(lock, std::chrono::milliseconds(wait_ms), ready);
            const auto& log = events[id];
            json arr = json::array();
            for (std::size_t i = after; i < log.size(); ++i) arr.push_back(to_json(log[i]));
            send_json(res, 200,
                      json{{"run_id", id},
                           {"events", arr},
                           {"last_seq", log.size()},
                           {"status", std::string(to_string(runs.at(id).status))}});
        }));

        server.Get("/api/memory", guarded([this](const httplib::Request&, httplib::Response& res) {
            json arr = json::array();
            for (const auto& c : memory->all()) {
                auto j = to_json(c.value);
                j["case_id"] = c.case_id;
                arr.push_back(j);
            }
            send_json(res, 200, json{{"cases", arr}});
        }));

        server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (res.status == 404 && res.body.empty()) {
                send_error(res, 404, "not_found", fmt::format("no route for {} {}", req.method, req.path));
            }
        });
    }
};

Service::Service(ServiceConfig config, std::unique_ptr<Planner> planner)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(planner))) {}

Service::~Service() { stop(); }

int Service::start() {
    std::lock_guard lock(impl_->lifecycle_mu);
    if (impl_->started) return impl_->bound_port;
    auto& server = impl_->server;
    const auto& cfg = impl_->cfg;
    if (cfg.port == 0) {
        impl_->bound_port = server.bind_to_any_port(cfg.host);
    } else {
        impl_->bound_port = server.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
    }
    if (impl_->bound_port < 0) {
        throw StorageError(fmt::format("cannot listen on {}:{}", cfg.host, cfg.port));
    }
    impl_->started = true;
    impl_->http_thread = std::thread([this] { impl_->server.listen_after_bind(); });
    // A stop() issued before the accept loop is running would be lost.
    impl_->server.wait_until_ready();
    impl_->dispatch_thread = std::thread([this] { impl_->dispatch_loop(); });
    spdlog::info("listening on {}:{} (data dir {})", cfg.host, impl_->bound_port, cfg.data_dir.string());
    return impl_->bound_port;
}

void Service::stop() {
    std::lock_guard lock(impl_->lifecycle_mu);
    if (!impl_->started || impl_->stopped) return;
    impl_->server.stop();
    {
        std::lock_guard state(impl_->mu);
        impl_->stopping = true;
    }
    impl_->dispatch_cv.notify_all();
    impl_->events_cv.notify_all();
    if (impl_->http_thread.joinable()) impl_->http_thread.join();
    if (impl_->dispatch_thread.joinable()) impl_->dispatch_thread.join();
    impl_->stopped = true;
    impl_->stopped_cv.notify_all();
}

void Service::wait() {
    std::unique_lock lock(impl_->lifecycle_mu);
    impl_->stopped_cv.wait(lock, [&] { return impl_->stopped || !impl_->started; });
}

int Service::port() const { return impl_->bound_port; }

const ServiceConfig& Service::config() const { return impl_->cfg; }

void Service::request_dispatch() {
    std::lock_guard lock(impl_->mu);
    impl_->dispatch_requested = true;
    impl_->dispatch_cv.notify_all();
}

bool Service::wait_idle(std::chrono::milliseconds timeout) {
    std::unique_lock lock(impl_->mu);
    return impl_->idle_cv.wait_for(lock, timeout, [&] { return impl_->idle(); });
}

std::vector<MergeRun> Service::runs() const {
    std::lock_guard lock(impl_->mu);
    std::vector<MergeRun> out;
    for (const auto& [id, run] : impl_->runs) out.push_back(run);
    return out;
}

std::optional<MergeRun> Service::run(const std::string& run_id) const {
    std::lock_guard lock(impl_->mu);
    auto it = impl_->runs.find(run_id);
    if (it == impl_->runs.end()) return std::nullopt;
    return it->second;
}

std::vector<RunEvent> Service::events(const std::string& run_id, std::uint64_t after) const {
    std::lock_guard lock(impl_->mu);
    auto it = impl_->events.find(run_id);
    if (it == impl_->events.end()) return {};
    std::vector<RunEvent> out;
    for (const auto& e : it->second) {
        if (e.seq > after) out.push_back(e);
    }
    return out;
}

} // namespace ordermerge
