// Command-line driver: validate documents, preview matching, run merges
// headless, render run views, and serve the HTTP API.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ordermerge/agent.hpp"
#include "ordermerge/config.hpp"
#include "ordermerge/errors.hpp"
#include "ordermerge/matching.hpp"
#include "ordermerge/model.hpp"
#include "ordermerge/prompting.hpp"
#include "ordermerge/raster.hpp"
#include "ordermerge/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ordermerge;

namespace {

enum Exit { kOk = 0, kRunFailure = 1, kUsage = 2, kData = 3 };

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError(fmt::format("cannot read '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void print(const json& j) { std::cout << j.dump(2) << '\n' << std::flush; }

void diagnose(const Error& e) {
    std::cerr << json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump() << '\n';
}

struct Documents {
    Fleet fleet;
    OrderBook orders;
};

// Mesh references resolve against the orders file's directory unless given.
Documents load_documents(const std::string& fleet_path, const std::string& orders_path, std::string mesh_root) {
    Documents docs;
    try {
        docs.fleet = load_fleet(read_text(fleet_path));
    } catch (const Error& e) {
        throw Error(e.code(), fmt::format("{}: {}", fleet_path, e.what()));
    }
    if (mesh_root.empty()) mesh_root = fs::path(orders_path).parent_path().string();
    try {
        docs.orders = load_orders(read_text(orders_path), LoadOptions{mesh_root});
    } catch (const Error& e) {
        throw Error(e.code(), fmt::format("{}: {}", orders_path, e.what()));
    }
    return docs;
}

int run_serve(const std::string& config_path, std::optional<int> port) {
    auto cfg = load_service_config(config_path);
    if (port) cfg.port = *port;

    // Block termination signals before any thread starts so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGINT);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Service service(cfg);
    int bound = service.start();
    print(json{{"listening", {{"host", cfg.host}, {"port", bound}}}, {"data_dir", cfg.data_dir.string()}});

    int received = 0;
    sigwait(&signals, &received);
    spdlog::info("received signal {}, shutting down", received);
    service.stop();
    return kOk;
}

std::vector<MergeRun> runs_from_document(const json& doc) {
    std::vector<MergeRun> runs;
    if (doc.is_object() && doc.contains("runs")) {
        const auto& arr = doc.at("runs");
        if (!arr.is_array()) throw SchemaError("/runs", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) runs.push_back(merge_run_from_json(arr[i], fmt::format("/runs/{}", i)));
    } else {
        runs.push_back(merge_run_from_json(doc));
    }
    return runs;
}

void write_png(const fs::path& path, const Raster& raster) {
    auto bytes = encode_png(raster);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StorageError(fmt::format("cannot write '{}'", path.string()));
}

json render_layout(const fs::path& dir, const std::string& stem, const Layout& layout, const BuildVolume& vol) {
    auto top = dir / (stem + "-top.png");
    auto front = dir / (stem + "-front.png");
    write_png(top, render_top_view(layout, vol));
    write_png(front, render_front_view(layout, vol));
    return json::array({top.string(), front.string()});
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("ordermerge"));
    spdlog::set_pattern("%^%l%$: %v");

    CLI::App app{"Merge compatible 3D-printing work orders onto shared build plates."};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging on stderr");

    std::string fleet_path, orders_path, mesh_root;
    auto add_documents = [&](CLI::App* cmd) {
        cmd->add_option("--fleet", fleet_path, "Fleet JSON")->required();
        cmd->add_option("--orders", orders_path, "Orders JSON")->required();
        cmd->add_option("--mesh-root", mesh_root, "Base directory for mesh_ref paths");
    };

    auto* validate = app.add_subcommand("validate", "Check fleet and order documents against the schema");
    add_documents(validate);

    auto* match = app.add_subcommand("match", "Print the order-to-device assignment");
    add_documents(match);
    std::string policy = "smallest-fit";
    bool yaw_swap = false;
    match->add_option("--policy", policy, "smallest-fit or first-id");
    match->add_flag("--yaw-swap", yaw_swap, "Allow swapping part length and width when checking fit");

    auto* merge = app.add_subcommand("merge", "Match and merge orders; print run records");
    add_documents(merge);
    std::string planner_spec = "heuristic";
    double clearance = kDefaultClearanceMm;
    int max_iters = 10;
    std::string memory_dir, template_path, endpoint, model;
    bool no_images = false;
    merge->add_option("--planner", planner_spec, "heuristic, remote or scripted:FILE");
    merge->add_option("--clearance", clearance, "Minimum gap between parts and walls (mm)")->check(CLI::NonNegativeNumber);
    merge->add_option("--max-iters", max_iters, "Planner proposals per run")->check(CLI::PositiveNumber);
    merge->add_option("--memory", memory_dir, "Directory holding memory.jsonl");
    merge->add_option("--template", template_path, "Prompt template file");
    merge->add_option("--endpoint", endpoint, "Chat-completions URL for the remote planner");
    merge->add_option("--model", model, "Model name sent to the remote planner");
    merge->add_flag("--no-images", no_images, "Do not attach rendered views to prompts");

    auto* render = app.add_subcommand("render", "Write top and front views for every iteration of a run");
    std::string run_path, out_dir;
    render->add_option("--run", run_path, "Run JSON (single run or merge output)")->required();
    render->add_option("--out", out_dir, "Output directory")->required();

    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    std::string config_path;
    std::optional<int> port;
    serve->add_option("--config", config_path, "Service config file");
    serve->add_option("--port", port, "Override the configured port (0 picks a free one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    if (verbose) spdlog::set_level(spdlog::level::debug);

    try {
        if (*validate) {
            auto docs = load_documents(fleet_path, orders_path, mesh_root);
            print(json{{"valid", true}, {"devices", docs.fleet.size()}, {"orders", docs.orders.size()}});
            return kOk;
        }
        if (*match) {
            auto docs = load_documents(fleet_path, orders_path, mesh_root);
            MatchPolicy p{DevicePreference::SmallestFit, yaw_swap};
            try {
                p.device_preference = parse_device_preference(policy);
            } catch (const ValueError& e) {
                throw ConfigError(e.what());
            }
            print(to_json(match_orders(docs.orders, docs.fleet, p)));
            return kOk;
        }
        if (*merge) {
            AgentConfig cfg;
            cfg.clearance_mm = clearance;
            cfg.max_iterations = max_iters;
            cfg.render_images = !no_images;
            cfg.template_path = template_path;
            cfg.planner.endpoint = endpoint;
            cfg.planner.model = model;
            cfg.planner = parse_planner_spec(planner_spec, cfg.planner);
            auto planner = make_planner(cfg.planner);
            auto docs = load_documents(fleet_path, orders_path, mesh_root);

            std::unique_ptr<MemoryStore> memory;
            if (!memory_dir.empty()) {
                fs::create_directories(memory_dir);
                memory = std::make_unique<MemoryStore>(fs::path(memory_dir) / "memory.jsonl");
            }
            MergeAgent agent(cfg, memory.get());
            std::vector<OrderArrival> arrivals;
            for (const auto& o : docs.orders.orders()) arrivals.push_back(OrderArrival{o, o.start_time()});
            auto outcome = agent.process_order_stream(arrivals, docs.fleet, *planner);

            json runs = json::array();
            bool failed = false;
            for (const auto& run : outcome.runs) {
                runs.push_back(to_json(run));
                failed = failed || run.status == RunStatus::Failed;
            }
            json unassigned = json::array();
            for (const auto& u : outcome.unassigned) unassigned.push_back({{"order_id", u.order_id}, {"reason", u.reason}});
            print(json{{"runs", runs}, {"unassigned", unassigned}});
            return failed ? kRunFailure : kOk;
        }
        if (*render) {
            auto runs = runs_from_document(nlohmann::json::parse(read_text(run_path)));
            fs::create_directories(out_dir);
            json written = json::array();
            for (const auto& run : runs) {
                json entry{{"run_id", run.run_id}};
                entry["start"] = render_layout(out_dir, run.run_id + "-start", run.start_layout, run.volume);
                json iterations = json::array();
                for (const auto& it : run.iterations) {
                    iterations.push_back(render_layout(out_dir, fmt::format("{}-iter-{:02d}", run.run_id, it.index),
                                                       it.applied_layout, run.volume));
                }
                entry["iterations"] = iterations;
                written.push_back(entry);
            }
            print(json{{"rendered", written}});
            return kOk;
        }
        if (*serve) return run_serve(config_path, port);
    } catch (const ConfigError& e) {
        diagnose(e);
        return kUsage;
    } catch (const Error& e) {
        diagnose(e);
        return kData;
    } catch (const nlohmann::json::exception& e) {
        diagnose(ParseError(e.what()));
        return kData;
    } catch (const fs::filesystem_error& e) {
        diagnose(StorageError(e.what()));
        return kData;
    }
    return kUsage;
}
