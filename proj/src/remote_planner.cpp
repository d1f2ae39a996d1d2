#include <httplib.h>

#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ordermerge/errors.hpp"
#include "ordermerge/planner.hpp"

namespace ordermerge {

namespace {

struct Endpoint {
    std::string origin; // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError(fmt::format("planner endpoint '{}' has no scheme", url));
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return Endpoint{url, "/"};
    return Endpoint{url.substr(0, path_start), url.substr(path_start)};
}

// Retry only what may succeed on a second attempt.
bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

} // namespace

RemotePlanner::RemotePlanner(PlannerSettings settings) : settings_(std::move(settings)) {
    if (settings_.endpoint.empty()) throw ConfigError("remote planner requires an endpoint");
    split_url(settings_.endpoint);
    if (!settings_.api_key_env.empty()) {
        if (const char* key = std::getenv(settings_.api_key_env.c_str())) api_key_ = key;
    }
}

nlohmann::json RemotePlanner::request_body(const PromptBundle& bundle) const {
    using nlohmann::json;
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", bundle.user_text}});
    for (const auto& image : bundle.images) {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image.data_url()}}}});
    }
    json body{
        {"messages",
         json::array({
             {{"role", "system"}, {"content", bundle.system_text}},
             {{"role", "user"}, {"content", content}},
         })},
    };
    if (!settings_.model.empty()) body["model"] = settings_.model;
    return body;
}

std::string RemotePlanner::extract_answer(const nlohmann::json& response) {
    try {
        const auto& message = response.at("choices").at(0).at("message");
        const auto& content = message.at("content");
        if (content.is_string()) return content.get<std::string>();
        if (content.is_array()) {
            std::string text;
            for (const auto& part : content) {
                if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
            }
            return text;
        }
    } catch (const nlohmann::json::exception&) {
    }
    throw PlannerTransportError("response has no choices[0].message.content");
}

PlannerReply RemotePlanner::propose(const PromptBundle& bundle) {
    auto endpoint = split_url(settings_.endpoint);
    auto body = request_body(bundle).dump();
    std::string last_error;
    for (int attempt = 0; attempt <= settings_.max_retries; ++attempt) {
        if (attempt > 0) {
            auto wait = std::chrono::milliseconds(settings_.backoff_ms) * (1 << (attempt - 1));
            spdlog::warn("remote planner attempt {} failed ({}); retrying in {} ms", attempt, last_error,
                         wait.count());
            std::this_thread::sleep_for(wait);
        }
        httplib::Client client(endpoint.origin);
        client.set_connection_timeout(std::chrono::seconds(10));
        client.set_read_timeout(std::chrono::seconds(settings_.timeout_s));
        client.set_write_timeout(std::chrono::seconds(settings_.timeout_s));
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(endpoint.path, headers, body, "application/json");
        if (!res) {
            last_error = "transport: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = fmt::format("HTTP {}", res->status);
            if (retryable_status(res->status)) continue;
            throw PlannerTransportError("remote planner rejected the request: " + last_error);
        }
        try {
            return PlannerReply{extract_answer(nlohmann::json::parse(res->body)), false};
        } catch (const nlohmann::json::parse_error&) {
            last_error = "response is not JSON";
        } catch (const PlannerTransportError& e) {
            last_error = e.what();
        }
    }
    throw PlannerTransportError(fmt::format("remote planner failed after {} attempts: {}",
                                            settings_.max_retries + 1, last_error));
}

} // namespace ordermerge
