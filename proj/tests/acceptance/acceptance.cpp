// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ordermerge/agent.hpp"
#include "ordermerge/errors.hpp"
#include "ordermerge/geometry.hpp"
#include "ordermerge/hash.hpp"
#include "ordermerge/matching.hpp"
#include "ordermerge/memory.hpp"
#include "ordermerge/packing.hpp"
#include "ordermerge/prompting.hpp"
#include "test_support.hpp"

using namespace ordermerge;
using nlohmann::json;
using Clock = std::chrono::steady_clock;
using testing::Rng;
using testing::TempDir;

namespace {

// Pinned limits.
constexpr double kMatchLimitMs = 1.0;
constexpr int kOraclePairs = 20000;
constexpr double kPenetrationTolerance = 1e-9;
constexpr double kOracleLimitS = 1.0;
constexpr int kPackerSets = 1000;
constexpr double kPackerLimitS = 10.0;
constexpr int kRoundTrips = 1000;
constexpr int kAdversarialMaxIterations = 10;

// The three distinct build volumes of the fixture fleet.
const BuildVolume kVolumes[] = {BuildVolume(200, 200, 200), BuildVolume(250, 250, 250), BuildVolume(145, 145, 175)};

struct Verdict {
    bool pass = false;
    std::string detail;
};

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

AgentConfig quiet_agent() {
    AgentConfig cfg;
    cfg.render_images = false;
    cfg.clock = [] { return parse_timestamp("2024-05-06T09:00:00Z"); };
    return cfg;
}

std::vector<WorkOrder> batch_of(const OrderBook& book, std::initializer_list<const char*> ids) {
    std::vector<WorkOrder> out;
    for (const auto* id : ids) out.push_back(*book.find(id));
    return out;
}

std::unique_ptr<ScriptedPlanner> script(const std::string& name) {
    return ScriptedPlanner::from_file(testing::data_path("scripts/" + name).string());
}

// --- 1 ---

Verdict matching_reproduction() {
    auto fleet = testing::fixture_fleet();
    auto book = testing::fixture_orders();
    MatchResult expected{{{"EQ01", {"CL01", "CL02", "CL03"}}, {"EQ03", {"CT01", "CT02", "CT03"}}}, {}};

    auto t0 = Clock::now();
    auto cold = match_orders(book, fleet, MatchPolicy{});
    double cold_ms = ms_since(t0);
    std::vector<double> samples;
    bool all_equal = cold == expected;
    for (int i = 0; i < 101; ++i) {
        auto t = Clock::now();
        auto r = match_orders(book, fleet, MatchPolicy{});
        samples.push_back(ms_since(t));
        all_equal = all_equal && r == expected;
    }
    std::nth_element(samples.begin(), samples.begin() + 50, samples.end());
    double median = samples[50];
    return {all_equal && cold_ms < kMatchLimitMs && median < kMatchLimitMs,
            fmt::format("exact={} first call {:.4f} ms, median {:.4f} ms (limit {} ms)", all_equal, cold_ms, median,
                        kMatchLimitMs)};
}

// --- 2 ---

std::optional<double> interval_oracle(const Placement& a, const Placement& b, double clearance) {
    const double ac[3] = {a.center.x, a.center.y, a.center.z};
    const double bc[3] = {b.center.x, b.center.y, b.center.z};
    const double ad[3] = {a.dims.l(), a.dims.w(), a.dims.h()};
    const double bd[3] = {b.dims.l(), b.dims.w(), b.dims.h()};
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        double a_lo = ac[k] - ad[k] / 2 - clearance, a_hi = ac[k] + ad[k] / 2 + clearance;
        double b_lo = bc[k] - bd[k] / 2, b_hi = bc[k] + bd[k] / 2;
        if (!(a_lo < b_hi && b_lo < a_hi)) return std::nullopt;
        best = std::min(best, std::min(a_hi - b_lo, b_hi - a_lo));
    }
    return best;
}

Placement random_box_in(Rng& rng, const BuildVolume& v, const std::string& id) {
    Extents dims(rng.uniform(0.5, v.l()), rng.uniform(0.5, v.w()), rng.uniform(0.5, v.h()));
    Vec3 c{rng.uniform(-v.l() / 2, v.l() / 2), rng.uniform(-v.w() / 2, v.w() / 2), rng.uniform(0, v.h())};
    return Placement{id, c, dims};
}

Verdict interference_oracle() {
    Rng rng(20240506);
    std::vector<std::tuple<Placement, Placement, double>> pairs;
    for (int i = 0; i < kOraclePairs; ++i) {
        const auto& v = kVolumes[rng.integer(0, 2)];
        double clearance = rng.coin(0.25) ? 0.0 : rng.uniform(0, 5);
        pairs.emplace_back(random_box_in(rng, v, "a"), random_box_in(rng, v, "b"), clearance);
    }
    int presence_mismatch = 0, overlaps = 0;
    double worst = 0.0;
    auto t0 = Clock::now();
    for (const auto& [a, b, c] : pairs) {
        auto got = aabb_overlap(a, b, c);
        auto want = interval_oracle(a, b, c);
        if (got.has_value() != want.has_value()) {
            ++presence_mismatch;
            continue;
        }
        if (got) {
            ++overlaps;
            worst = std::max(worst, std::abs(*got - *want));
        }
    }
    double seconds = ms_since(t0) / 1000.0;
    return {presence_mismatch == 0 && worst <= kPenetrationTolerance && seconds < kOracleLimitS,
            fmt::format("{} pairs ({} overlapping), presence mismatches {}, max |penetration error| {:.3g} mm "
                        "(tol {:g}), {:.3f} s (limit {} s)",
                        kOraclePairs, overlaps, presence_mismatch, worst, kPenetrationTolerance, seconds,
                        kOracleLimitS)};
}

// --- 3 ---

Verdict packer_soundness() {
    Rng rng(424242);
    int unclear = 0, lost = 0, placed_total = 0, rejected_total = 0;
    auto t0 = Clock::now();
    for (int s = 0; s < kPackerSets; ++s) {
        PackRequest req{"D", {}, kVolumes[rng.integer(0, 2)], kDefaultClearanceMm};
        int n = rng.integer(1, 12);
        for (int i = 0; i < n; ++i) {
            req.parts.push_back(
                {fmt::format("p{}", i), Extents(rng.uniform(5, 80), rng.uniform(5, 80), rng.uniform(5, 80))});
        }
        auto out = shelf_pack(req);
        if (!check_layout(out.placed, req.volume).clear) ++unclear;
        std::multiset<std::string> ids(out.rejected.begin(), out.rejected.end());
        for (const auto& p : out.placed.placements) ids.insert(p.order_id);
        std::multiset<std::string> want;
        for (const auto& p : req.parts) want.insert(p.order_id);
        if (ids != want) ++lost;
        placed_total += static_cast<int>(out.placed.placements.size());
        rejected_total += static_cast<int>(out.rejected.size());
    }
    double seconds = ms_since(t0) / 1000.0;
    return {unclear == 0 && lost == 0 && seconds < kPackerLimitS,
            fmt::format("{} sets, {} placed, {} rejected (reported, not lost), unclear {}, lost {}, {:.3f} s "
                        "(limit {} s)",
                        kPackerSets, placed_total, rejected_total, unclear, lost, seconds, kPackerLimitS)};
}

// --- 4 ---

Verdict iteration_narrative() {
    auto fleet = testing::fixture_fleet();
    auto book = testing::fixture_orders();
    MergeAgent agent(quiet_agent());
    auto gear_planner = script("gear_3step.json");
    auto rack_planner = script("rack_5step.json");
    auto gear = agent.run_merge(batch_of(book, {"CL01", "CL02", "CL03"}), *fleet.find("EQ01"), *gear_planner);
    auto rack = agent.run_merge(batch_of(book, {"CT01", "CT02", "CT03"}), *fleet.find("EQ03"), *rack_planner);
    auto ok = [](const MergeRun& r, int n) {
        if (r.status != RunStatus::Succeeded || r.planner_calls() != n || !r.final_layout) return false;
        for (int i = 0; i + 1 < n; ++i) {
            if (r.iterations[i].report.clear) return false;
        }
        return r.iterations.back().report.clear && check_layout(*r.final_layout, r.volume).clear;
    };
    bool pass = ok(gear, 3) && ok(rack, 5);
    return {pass, fmt::format("gear {} after {} proposals (want 3), rack {} after {} proposals (want 5)",
                              to_string(gear.status), gear.planner_calls(), to_string(rack.status),
                              rack.planner_calls())};
}

// --- 5 ---

// Answers with every part on the same spot, z chosen to tempt a lift-off.
class CollidingPlanner final : public Planner {
public:
    PlannerReply propose(const PromptBundle& bundle) override {
        ++calls;
        PositionsAnswer a;
        for (std::size_t i = 0; i < bundle.expected_part_count; ++i) {
            a.positions.push_back({static_cast<double>(calls % 3), 0.0, 40.0 * static_cast<double>(i + 1)});
        }
        return {format_positions(a), false};
    }
    std::string kind() const override { return "colliding"; }
    int calls = 0;
};

Verdict safety_gate() {
    auto fleet = testing::fixture_fleet();
    auto book = testing::fixture_orders();
    auto cfg = quiet_agent();
    cfg.max_iterations = kAdversarialMaxIterations;
    MergeAgent agent(cfg);
    int runs_ok = 0, z_violations = 0;
    std::string statuses;
    for (const auto& [device, ids] : std::vector<std::pair<const char*, std::vector<const char*>>>{
             {"EQ01", {"CL01", "CL02", "CL03"}}, {"EQ03", {"CT01", "CT02", "CT03"}}}) {
        std::vector<WorkOrder> batch;
        for (const auto* id : ids) batch.push_back(*book.find(id));
        CollidingPlanner planner;
        auto run = agent.run_merge(batch, *fleet.find(device), planner);
        for (const auto& it : run.iterations) {
            for (const auto& p : it.applied_layout.placements) z_violations += p.center.z != p.dims.h() / 2.0;
        }
        bool ok = run.status == RunStatus::Failed && planner.calls == kAdversarialMaxIterations &&
                  run.planner_calls() == kAdversarialMaxIterations && !run.final_layout;
        runs_ok += ok;
        statuses += fmt::format("{} {} after {} proposals; ", device, to_string(run.status), planner.calls);
    }
    return {runs_ok == 2 && z_violations == 0,
            fmt::format("{}max_iterations {}, z != h/2 in {} applied placements", statuses,
                        kAdversarialMaxIterations, z_violations)};
}

// --- 6 ---

Verdict memory_effect() {
    TempDir dir("ordermerge-accept-memory");
    auto log = dir.path() / "memory.jsonl";
    auto fleet = testing::fixture_fleet();
    auto book = testing::fixture_orders();
    auto batch = batch_of(book, {"CL01", "CL02", "CL03"});
    const auto& eq01 = *fleet.find("EQ01");

    int first_calls = -1, second_calls = -1, after_delete_calls = -1;
    bool second_ok = false;
    {
        MemoryStore memory(log);
        MergeAgent agent(quiet_agent(), &memory);
        auto planner = script("gear_3step.json");
        first_calls = agent.run_merge(batch, eq01, *planner).planner_calls();
    }
    {
        // A new store replays the log, as after a process restart.
        MemoryStore memory(log);
        MergeAgent agent(quiet_agent(), &memory);
        ScriptedPlanner none(std::vector<std::string>{});
        auto run = agent.run_merge(batch, eq01, none);
        second_calls = none.calls();
        second_ok = run.status == RunStatus::Succeeded && run.start_source.rfind("memory:", 0) == 0 &&
                    run.final_layout && check_layout(*run.final_layout, run.volume).clear;
    }
    std::filesystem::remove(log);
    {
        MemoryStore memory(log);
        MergeAgent agent(quiet_agent(), &memory);
        auto planner = script("gear_3step.json");
        after_delete_calls = agent.run_merge(batch, eq01, *planner).planner_calls();
    }
    return {first_calls == 3 && second_calls == 0 && second_ok && after_delete_calls == 3,
            fmt::format("planner calls: first {}, repeat {} (seeded+clear={}), after deleting the log {}",
                        first_calls, second_calls, second_ok, after_delete_calls)};
}

// --- 7 ---

Verdict prompt_round_trip() {
    Rng rng(7);
    int exact = 0, rejected = 0, mismatch_cases = 0;
    for (int i = 0; i < kRoundTrips; ++i) {
        PositionsAnswer a;
        int n = rng.integer(1, 12);
        for (int k = 0; k < n; ++k) {
            a.positions.push_back({rng.decimal(-200, 200, rng.integer(0, 6)), rng.decimal(-200, 200, rng.integer(0, 6)),
                                   rng.decimal(0, 250, rng.integer(0, 6))});
        }
        auto text = format_positions(a);
        try {
            exact += parse_positions(text, a.positions.size()) == a;
        } catch (const Error&) {
        }
        // Every wrong expected count must be rejected.
        for (int wrong : {0, n - 1, n + 1, n + rng.integer(2, 5)}) {
            if (wrong == n || wrong < 0) continue;
            ++mismatch_cases;
            try {
                parse_positions(text, static_cast<std::size_t>(wrong));
            } catch (const CountMismatchError&) {
                ++rejected;
            } catch (const Error&) {
            }
        }
    }
    return {exact == kRoundTrips && rejected == mismatch_cases,
            fmt::format("{}/{} exact round trips, {}/{} count mismatches rejected", exact, kRoundTrips, rejected,
                        mismatch_cases)};
}

// --- 8 ---

class ServeProcess {
public:
    ServeProcess(const std::filesystem::path& config, const std::filesystem::path& log) {
        int fds[2];
        if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
        pid_ = ::fork();
        if (pid_ < 0) throw std::runtime_error("fork failed");
        if (pid_ == 0) {
            ::dup2(fds[1], STDOUT_FILENO);
            std::FILE* err = std::fopen(log.c_str(), "ab");
            if (err) ::dup2(fileno(err), STDERR_FILENO);
            ::close(fds[0]);
            ::close(fds[1]);
            ::execl(ORDERMERGE_CLI, ORDERMERGE_CLI, "serve", "--config", config.c_str(), static_cast<char*>(nullptr));
            std::_Exit(127);
        }
        ::close(fds[1]);
        // The banner is one pretty-printed JSON object.
        std::string banner;
        char buf[256];
        while (true) {
            auto n = ::read(fds[0], buf, sizeof buf);
            if (n <= 0) break;
            banner.append(buf, static_cast<std::size_t>(n));
            auto j = json::parse(banner, nullptr, false);
            if (!j.is_discarded()) {
                port_ = j.at("listening").at("port").get<int>();
                break;
            }
        }
        ::close(fds[0]);
        if (port_ <= 0) throw std::runtime_error("serve did not report a port: " + banner);
    }

    ~ServeProcess() {
        if (pid_ > 0 && !reaped_) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
        }
    }

    int port() const { return port_; }

    int terminate() {
        ::kill(pid_, SIGTERM);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        reaped_ = true;
        return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    }

private:
    pid_t pid_ = -1;
    int port_ = -1;
    bool reaped_ = false;
};

json get_json(httplib::Client& client, const std::string& path) {
    auto res = client.Get(path);
    if (!res || res->status != 200) throw std::runtime_error("GET " + path + " failed");
    return json::parse(res->body);
}

bool all_terminal(const json& runs, std::size_t want) {
    if (runs.size() != want) return false;
    for (const auto& r : runs) {
        auto s = r.at("status").get<std::string>();
        if (s != "Succeeded" && s != "Failed") return false;
    }
    return true;
}

// Hash of a fetched trace with the response-only fields removed.
std::string content_hash(json trace) {
    trace.erase("trace_sha256");
    trace.erase("views");
    return sha256_hex(trace.dump());
}

Verdict service_durability() {
    TempDir dir("ordermerge-accept-service");
    auto config = dir.path() / "ordermerge.conf";
    testing::write_text(config, fmt::format(R"([service]
listen = "127.0.0.1:0"
data_dir = data
fleet = "{}"
dispatch_delay_ms = 50

[agent]
render_images = false

[planner]
kind = scripted
script = "{}"
)",
                                            testing::data_path("fleet.json").string(),
                                            testing::data_path("scripts/fixture_runs.json").string()));
    auto log = dir.path() / "serve.log";

    json before, after;
    std::map<std::string, std::string> hashes_before, hashes_after;
    int exit_first = -1, exit_second = -1;
    bool traces_consistent = true;
    try {
        {
            ServeProcess serve(config, log);
            httplib::Client client("127.0.0.1", serve.port());
            client.set_read_timeout(10, 0);
            auto res = client.Post("/api/orders", testing::read_text(testing::data_path("orders.json")),
                                   "application/json");
            if (!res || res->status != 201) throw std::runtime_error("order submission failed");
            auto deadline = Clock::now() + std::chrono::seconds(30);
            while (!all_terminal(get_json(client, "/api/runs").at("runs"), 2)) {
                if (Clock::now() > deadline) throw std::runtime_error("runs did not finish within 30 s");
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            }
            before = get_json(client, "/api/runs").at("runs");
            for (const auto& r : before) {
                auto trace = get_json(client, "/api/runs/" + r.at("run_id").get<std::string>() + "?images=0");
                hashes_before[r.at("run_id")] = content_hash(trace);
                traces_consistent = traces_consistent && hashes_before[r.at("run_id")] == r.at("trace_sha256");
            }
            exit_first = serve.terminate();
        }
        {
            ServeProcess serve(config, log);
            httplib::Client client("127.0.0.1", serve.port());
            client.set_read_timeout(10, 0);
            after = get_json(client, "/api/runs").at("runs");
            for (const auto& r : after) {
                auto trace = get_json(client, "/api/runs/" + r.at("run_id").get<std::string>() + "?images=0");
                hashes_after[r.at("run_id")] = content_hash(trace);
                traces_consistent = traces_consistent && hashes_after[r.at("run_id")] == r.at("trace_sha256");
            }
            exit_second = serve.terminate();
        }
    } catch (const std::exception& e) {
        return {false, std::string("error: ") + e.what() + " (server log: " + log.string() + ")"};
    }
    bool identical = before == after && hashes_before == hashes_after;
    bool pass = identical && traces_consistent && before.size() == 2 && exit_first == 0 && exit_second == 0;
    return {pass, fmt::format("{} runs before restart, {} after; listings identical={}, trace hashes equal={}, "
                              "SIGTERM exit codes {}/{}",
                              before.size(), after.size(), before == after,
                              hashes_before == hashes_after && traces_consistent, exit_first, exit_second)};
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::off);
    struct Criterion {
        const char* name;
        std::function<Verdict()> check;
    };
    const std::vector<Criterion> criteria{
        {"matching-reproduction", matching_reproduction},
        {"interference-oracle-equivalence", interference_oracle},
        {"packer-soundness", packer_soundness},
        {"iteration-narrative", iteration_narrative},
        {"safety-gate", safety_gate},
        {"memory-effect", memory_effect},
        {"prompt-round-trip", prompt_round_trip},
        {"service-durability", service_durability},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << fmt::format("{} [{}] {}: {}", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, v.detail)
                  << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failures, criteria.size()) << std::endl;
    return failures == 0 ? 0 : 1;
}
