#include <doctest.h>

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "ordermerge/errors.hpp"
#include "ordermerge/service.hpp"
#include "test_support.hpp"

using namespace ordermerge;
using nlohmann::json;
using namespace std::chrono_literals;
using testing::TempDir;

namespace {

ServiceConfig service_config(const TempDir& dir) {
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.data_dir = dir.path() / "data";
    cfg.fleet_seed = testing::data_path("fleet.json");
    cfg.dispatch_delay = 20ms;
    cfg.max_poll_wait = 2000ms;
    cfg.agent.render_images = false;
    return cfg;
}

std::unique_ptr<Planner> fixture_planner() {
    return ScriptedPlanner::from_file(testing::data_path("scripts/fixture_runs.json").string());
}

struct Api {
    explicit Api(int port) : client("127.0.0.1", port) { client.set_read_timeout(10, 0); }

    std::pair<int, json> get(const std::string& path) { return unpack(client.Get(path)); }
    std::pair<int, json> post(const std::string& path, const std::string& body) {
        return unpack(client.Post(path, body, "application/json"));
    }
    std::pair<int, json> put(const std::string& path, const std::string& body) {
        return unpack(client.Put(path, body, "application/json"));
    }

    static std::pair<int, json> unpack(const httplib::Result& res) {
        REQUIRE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }

    httplib::Client client;
};

std::string fixture_orders_body() { return testing::read_text(testing::data_path("orders.json")); }

json order_json(const std::string& id, double w = 10) {
    return json{{"id", id},
                {"spatial", {{"l_mm", 10}, {"w_mm", w}, {"h_mm", 10}}},
                {"material", "PLA"},
                {"accuracy_req_mm", 0.2},
                {"start_time", "2024-05-06T08:00:00Z"},
                {"expected_time", "2024-05-08T17:00:00Z"}};
}

} // namespace

TEST_CASE("fresh data directory: seeded fleet, no orders, no runs") {
    TempDir dir;
    Service service(service_config(dir), fixture_planner());
    Api api(service.start());
    auto [hs, health] = api.get("/api/health");
    CHECK(hs == 200);
    CHECK(health.at("status") == "ok");
    auto [ds, devices] = api.get("/api/devices");
    CHECK(ds == 200);
    CHECK(devices.at("devices").size() == 4);
    CHECK(api.get("/api/orders").second.at("orders").empty());
    CHECK(api.get("/api/runs").second.at("runs").empty());
    CHECK(api.get("/api/memory").second.at("cases").empty());
    CHECK(std::filesystem::exists(dir.path() / "data/fleet.json"));
    auto [ns, missing] = api.get("/api/nope");
    CHECK(ns == 404);
    CHECK(missing.at("error").at("code") == "not_found");
    service.stop();
    service.stop();
}

TEST_CASE("order intake validation") {
    TempDir dir;
    Service service(service_config(dir), fixture_planner());
    auto cfg = service.config();
    Api api(service.start());

    auto [s1, single] = api.post("/api/orders", order_json("A1").dump());
    CHECK(s1 == 201);
    CHECK(single.at("id") == "A1");
    auto [s2, many] = api.post("/api/orders", json::array({order_json("A2"), order_json("A3")}).dump());
    CHECK(s2 == 201);
    CHECK(many.at("ids") == json::array({"A2", "A3"}));
    CHECK_FALSE(many.contains("id"));

    auto [dup_status, dup] = api.post("/api/orders", order_json("A1").dump());
    CHECK(dup_status == 409);
    CHECK(dup.at("error").at("code") == "duplicate_id");
    // A batch with one duplicate is rejected as a whole.
    CHECK(api.post("/api/orders", json{{"orders", {order_json("A9"), order_json("A2")}}}.dump()).first == 409);

    auto [bad_status, bad] = api.post("/api/orders", order_json("B1", -4).dump());
    CHECK(bad_status == 422);
    CHECK(bad.at("error").at("message").get<std::string>().find("/spatial: dimension must be positive") != std::string::npos);
    CHECK(api.post("/api/orders", "{not json").first == 422);
    auto missing = order_json("B2");
    missing.erase("material");
    CHECK(api.post("/api/orders", missing.dump()).first == 422);

    CHECK(service.wait_idle(10s));
    auto orders = api.get("/api/orders").second.at("orders");
    REQUIRE(orders.size() == 3);
    for (const auto& o : orders) CHECK(o.at("state") == "merged");
}

TEST_CASE("device registry endpoints") {
    TempDir dir;
    Service service(service_config(dir), fixture_planner());
    Api api(service.start());
    json dev{{"id", "EQ05"},
             {"functional", {{"m_type", "FDM"}, {"materials", {"PLA", "ABS"}}}},
             {"performance", {{"accuracy_mm", 0.1}, {"speed_mm_s", 50}}},
             {"volume", {{"l_mm", 300}, {"w_mm", 300}, {"h_mm", 300}}},
             {"status", "Idle"}};
    auto [s1, created] = api.post("/api/devices", dev.dump());
    INFO(created.dump());
    CHECK(s1 == 201);
    CHECK(created.at("id") == "EQ05");
    CHECK(api.post("/api/devices", dev.dump()).first == 409);
    CHECK(api.get("/api/devices").second.at("devices").size() == 5);

    auto [s2, updated] = api.put("/api/devices/EQ05/status", R"({"status": "Offline"})");
    CHECK(s2 == 200);
    CHECK(updated.at("status") == "Offline");
    CHECK(api.put("/api/devices/EQ99/status", R"({"status": "Idle"})").first == 404);
    CHECK(api.put("/api/devices/EQ05/status", R"({"status": "Sleeping"})").first == 422);
    CHECK(api.put("/api/devices/EQ05/status", R"({})").first == 422);

    // The registry survives a restart.
    service.stop();
    Service again(service_config(dir), fixture_planner());
    Api api2(again.start());
    auto devices = api2.get("/api/devices").second.at("devices");
    REQUIRE(devices.size() == 5);
    CHECK(devices[4].at("status") == "Offline");
}

TEST_CASE("match preview uses the body or the pending queue") {
    TempDir dir;
    auto cfg = service_config(dir);
    cfg.dispatch_delay = 60s; // keep orders pending
    Service service(cfg, fixture_planner());
    Api api(service.start());
    auto [s1, preview] = api.post("/api/match/preview", fixture_orders_body());
    CHECK(s1 == 200);
    CHECK(preview.at("assignments").size() == 2);
    CHECK(preview.at("assignments")[0].at("device_id") == "EQ01");

    auto [s2, empty] = api.post("/api/match/preview", "");
    CHECK(s2 == 200);
    CHECK(empty.at("assignments").empty());

    CHECK(api.post("/api/orders", fixture_orders_body()).first == 201);
    auto pending = api.get("/api/orders").second.at("orders");
    for (const auto& o : pending) CHECK(o.at("state") == "pending");
    CHECK(api.post("/api/match/preview", "").second.at("assignments").size() == 2);
    // Nothing has run yet.
    CHECK(api.get("/api/runs").second.at("runs").empty());
}

TEST_CASE("dispatch, run traces, events and restart") {
    TempDir dir;
    json runs_before;
    std::map<std::string, json> events_before;
    {
        auto cfg = service_config(dir);
        cfg.dispatch_delay = 60s;
        Service service(cfg, fixture_planner());
        Api api(service.start());
        CHECK(api.post("/api/orders", fixture_orders_body()).first == 201);
        auto [ds, dispatched] = api.post("/api/dispatch", "");
        CHECK(ds == 202);
        CHECK(dispatched.at("pending") == 6);
        REQUIRE(service.wait_idle(20s));

        runs_before = api.get("/api/runs").second.at("runs");
        REQUIRE(runs_before.size() == 2);
        CHECK(runs_before[0].at("run_id") == "run-EQ01-0001");
        CHECK(runs_before[0].at("planner_calls") == 3);
        CHECK(runs_before[1].at("run_id") == "run-EQ03-0001");
        CHECK(runs_before[1].at("planner_calls") == 5);
        for (const auto& r : runs_before) CHECK(r.at("status") == "Succeeded");

        auto [rs, trace] = api.get("/api/runs/run-EQ01-0001");
        CHECK(rs == 200);
        CHECK(trace.at("iterations").size() == 3);
        CHECK(trace.at("trace_sha256") == runs_before[0].at("trace_sha256"));
        CHECK(trace.at("trace_sha256") == trace_hash(*service.run("run-EQ01-0001")));
        REQUIRE(trace.contains("views"));
        CHECK(trace.at("views").at("iterations").size() == 3);
        CHECK(trace.at("views").at("start")[0].at("data_url").get<std::string>().rfind("data:image/png;base64,", 0) ==
              0);
        CHECK_FALSE(api.get("/api/runs/run-EQ01-0001?images=0").second.contains("views"));
        CHECK(api.get("/api/runs/run-NOPE-0001").first == 404);

        for (const auto& r : runs_before) {
            auto id = r.at("run_id").get<std::string>();
            auto [es, ev] = api.get("/api/runs/" + id + "/events?after=0&timeout_ms=0");
            CHECK(es == 200);
            const auto& list = ev.at("events");
            for (std::size_t i = 0; i < list.size(); ++i) CHECK(list[i].at("seq") == i + 1);
            CHECK(ev.at("last_seq") == list.size());
            CHECK(list.front().at("kind") == "StatusChanged");
            CHECK(list.front().at("payload").at("status") == "Running");
            CHECK(list.back().at("payload").at("status") == "Succeeded");
            int iterations = 0;
            for (const auto& e : list) iterations += e.at("kind") == "IterationCompleted";
            CHECK(iterations == r.at("planner_calls"));
            events_before[id] = list;
            auto tail = api.get("/api/runs/" + id + "/events?after=" + std::to_string(list.size() - 1) + "&timeout_ms=0");
            CHECK(tail.second.at("events").size() == 1);
        }
        CHECK(api.get("/api/runs/run-EQ01-0001/events?after=x").first == 400);
        CHECK(api.get("/api/runs/run-NOPE-0001/events").first == 404);

        auto memory = api.get("/api/memory").second.at("cases");
        CHECK(memory.size() == 2);
        auto orders = api.get("/api/orders").second.at("orders");
        for (const auto& o : orders) CHECK(o.at("state") == "merged");
        CHECK(api.post("/api/runs/run-EQ01-0001/intervene", R"({"instruction": "late"})").first == 409);
        CHECK(api.post("/api/runs/run-NOPE-0001/intervene", R"({"instruction": "x"})").first == 404);
        CHECK(api.post("/api/runs/run-EQ01-0001/intervene", R"({"instruction": ""})").first == 422);
        service.stop();
    }
    {
        // Restart: same listing, same hashes, same events, nothing re-dispatched.
        Service service(service_config(dir), std::make_unique<ScriptedPlanner>(std::vector<std::string>{}));
        Api api(service.start());
        CHECK(service.wait_idle(5s));
        CHECK(api.get("/api/runs").second.at("runs") == runs_before);
        for (const auto& [id, list] : events_before) {
            CHECK(api.get("/api/runs/" + id + "/events?timeout_ms=0").second.at("events") == list);
        }
        CHECK(api.get("/api/memory").second.at("cases").size() == 2);

        // A repeat batch is served from memory without planner calls.
        json repeat = json::parse(fixture_orders_body());
        for (auto& o : repeat.at("orders")) o["id"] = "R" + o.at("id").get<std::string>();
        CHECK(api.post("/api/orders", repeat.dump()).first == 201);
        REQUIRE(service.wait_idle(20s));
        auto runs = api.get("/api/runs").second.at("runs");
        REQUIRE(runs.size() == 4);
        CHECK(runs[1].at("run_id") == "run-EQ01-0002");
        CHECK(runs[1].at("planner_calls") == 0);
        CHECK(runs[1].at("status") == "Succeeded");
        CHECK(runs[1].at("start_source").get<std::string>().rfind("memory:", 0) == 0);
    }
}

TEST_CASE("operator intervention over HTTP reaches the next prompt") {
    TempDir dir;
    auto planner = ScriptedPlanner::from_file(testing::data_path("scripts/gear_3step.json").string());
    auto* raw = planner.get();
    Service service(service_config(dir), std::move(planner));
    int port = service.start();
    int intervene_status = 0;
    raw->set_before_answer([&](const PromptBundle&, int call) {
        if (call != 1) return;
        Api side(port);
        intervene_status =
            side.post("/api/runs/run-EQ01-0001/intervene", R"({"instruction": "keep CL01 in the left half"})").first;
    });
    Api api(port);
    json gears = json::parse(fixture_orders_body());
    gears["orders"].erase(gears["orders"].begin() + 3, gears["orders"].end());
    CHECK(api.post("/api/orders", gears.dump()).first == 201);
    REQUIRE(service.wait_idle(20s));
    CHECK(intervene_status == 202);
    auto run = service.run("run-EQ01-0001");
    REQUIRE(run);
    CHECK(run->status == RunStatus::Succeeded);
    REQUIRE(run->iterations.size() == 3);
    CHECK(run->iterations[1].intervention == std::optional<std::string>("keep CL01 in the left half"));
    CHECK(raw->received()[1].user_text.find("OPERATOR INSTRUCTION: keep CL01 in the left half") != std::string::npos);
    bool queued = false;
    for (const auto& e : service.events("run-EQ01-0001")) queued = queued || e.kind == RunEventKind::InterventionQueued;
    CHECK(queued);
}

TEST_CASE("long poll returns as soon as an event arrives") {
    TempDir dir;
    auto planner = ScriptedPlanner::from_file(testing::data_path("scripts/gear_3step.json").string());
    planner->set_delay(150ms);
    Service service(service_config(dir), std::move(planner));
    Api api(service.start());
    json one = order_json("G1");
    json two = order_json("G2");
    CHECK(api.post("/api/orders", json::array({one, two}).dump()).first == 201);
    // Wait for the run to appear, then poll past its first event.
    for (int i = 0; i < 200 && !service.run("run-EQ01-0001"); ++i) std::this_thread::sleep_for(10ms);
    REQUIRE(service.run("run-EQ01-0001"));
    auto t0 = std::chrono::steady_clock::now();
    auto [status, body] = api.get("/api/runs/run-EQ01-0001/events?after=1&timeout_ms=5000");
    auto waited = std::chrono::steady_clock::now() - t0;
    CHECK(status == 200);
    CHECK(body.at("events").size() >= 1);
    CHECK(body.at("events")[0].at("seq") == 2);
    CHECK(waited < 4s);
    REQUIRE(service.wait_idle(20s));
}

TEST_CASE("a run cut off by shutdown is marked Failed on restart") {
    TempDir dir;
    auto cfg = service_config(dir);
    std::filesystem::create_directories(cfg.data_dir / "runs");
    MergeRun run;
    run.run_id = "run-EQ01-0007";
    run.device_id = "EQ01";
    run.batch = {"X1"};
    run.volume = BuildVolume(200, 200, 200);
    run.start_layout = Layout{"EQ01", {Placement{"X1", {0, 0, 5}, Extents(10, 10, 10)}}, 2.0};
    testing::write_text(cfg.data_dir / "runs/run-EQ01-0007.json", to_json(run).dump());
    testing::write_text(cfg.data_dir / "orders.json", json{{"orders", {order_json("X1")}}}.dump());

    Service service(cfg, std::make_unique<ScriptedPlanner>(std::vector<std::string>{}));
    auto restored = service.run("run-EQ01-0007");
    REQUIRE(restored);
    CHECK(restored->status == RunStatus::Failed);
    CHECK(restored->failure_cause == std::optional<std::string>("interrupted by service restart"));
    auto events = service.events("run-EQ01-0007");
    REQUIRE(events.size() == 1);
    CHECK(events[0].seq == 1);
    CHECK(events[0].payload.at("status") == "Failed");
    // X1 is settled by the failed run and the sequence continues after 7.
    service.start();
    CHECK(service.wait_idle(5s));
    CHECK(service.runs().size() == 1);
}

TEST_CASE("corrupt memory lines are skipped at startup") {
    TempDir dir;
    auto cfg = service_config(dir);
    std::filesystem::create_directories(cfg.data_dir);
    testing::write_text(cfg.data_dir / "memory.jsonl", "{\"broken\": \n");
    Service service(cfg, fixture_planner());
    Api api(service.start());
    CHECK(api.get("/api/memory").second.at("cases").empty());
    CHECK(api.post("/api/orders", fixture_orders_body()).first == 201);
    REQUIRE(service.wait_idle(20s));
    CHECK(api.get("/api/memory").second.at("cases").size() == 2);
}

TEST_CASE("storage failures surface as 503 and leave state unchanged") {
    TempDir dir;
    Service service(service_config(dir), fixture_planner());
    Api api(service.start());
    // A directory where the temp file should go makes the atomic write fail.
    std::filesystem::create_directories(service.config().data_dir / "orders.json.tmp/blocker");
    auto [status, body] = api.post("/api/orders", order_json("S1").dump());
    CHECK(status == 503);
    CHECK(body.at("error").at("code") == "storage_error");
    CHECK(api.get("/api/orders").second.at("orders").empty());
    std::filesystem::remove_all(service.config().data_dir / "orders.json.tmp");
    CHECK(api.post("/api/orders", order_json("S1").dump()).first == 201);
    REQUIRE(service.wait_idle(10s));
}

TEST_CASE("RunEvent JSON round trip") {
    RunEvent e{"run-EQ01-0001", 3, RunEventKind::InterventionQueued, json{{"instruction", "x"}}};
    CHECK(run_event_from_json(to_json(e)) == e);
    CHECK(parse_run_event_kind("IterationCompleted") == RunEventKind::IterationCompleted);
    CHECK_THROWS_AS(parse_run_event_kind("Other"), ValueError);
    auto bad = to_json(e);
    bad["seq"] = 0;
    CHECK_THROWS_AS(run_event_from_json(bad), SchemaError);
}
