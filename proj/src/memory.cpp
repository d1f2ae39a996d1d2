#include "ordermerge/memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include "json_util.hpp"
#include "ordermerge/hash.hpp"

namespace ordermerge {

using detail::child_path;
using detail::json;
using detail::ObjectReader;

namespace {

double round_to(double value, double step) { return std::round(value / step) * step; }

Dims3 rounded_part(const Extents& e) {
    return {round_to(e.l(), 0.1), round_to(e.w(), 0.1), round_to(e.h(), 0.1)};
}

json dims_json(const Dims3& d) { return json::array({d[0], d[1], d[2]}); }

Dims3 dims_from(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw SchemaError(path, "expected [l, w, h]");
    Dims3 d{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!j[i].is_number()) throw SchemaError(child_path(path, i), "expected a number");
        d[i] = j[i].get<double>();
    }
    return d;
}

} // namespace

BatchSignature make_signature(const Device& device, std::span<const PartSpec> parts) {
    BatchSignature sig;
    const auto& v = device.volume();
    sig.device_class.volume_mm = {round_to(v.l(), 1.0), round_to(v.w(), 1.0), round_to(v.h(), 1.0)};
    for (const auto& m : device.functional().materials()) sig.device_class.materials.push_back(m.str());
    std::sort(sig.device_class.materials.begin(), sig.device_class.materials.end());
    sig.device_class.materials.erase(
        std::unique(sig.device_class.materials.begin(), sig.device_class.materials.end()),
        sig.device_class.materials.end());
    for (const auto& p : parts) sig.parts.push_back(rounded_part(p.dims));
    std::sort(sig.parts.begin(), sig.parts.end());
    return sig;
}

Layout case_layout(const MemoryCase& c) {
    Layout layout;
    layout.device_id = c.device_id;
    layout.clearance_mm = c.clearance_mm;
    for (std::size_t i = 0; i < c.final_positions.size(); ++i) {
        const auto& p = c.final_positions[i];
        layout.placements.push_back(
            Placement{fmt::format("p{}", i), p.center, Extents(p.dims[0], p.dims[1], p.dims[2])});
    }
    return layout;
}

json to_json(const BatchSignature& sig) {
    json parts = json::array();
    for (const auto& p : sig.parts) parts.push_back(dims_json(p));
    return json{{"device_class",
                 {{"volume_mm", dims_json(sig.device_class.volume_mm)},
                  {"materials", sig.device_class.materials}}},
                {"parts", parts}};
}

namespace {

json content_json(const MemoryCase& c) {
    json positions = json::array();
    for (const auto& p : c.final_positions) {
        positions.push_back({{"dims", dims_json(p.dims)},
                             {"center", json::array({p.center.x, p.center.y, p.center.z})}});
    }
    return json{{"signature", to_json(c.signature)},
                {"device_id", c.device_id},
                {"final_positions", positions},
                {"iterations_used", c.iterations_used},
                {"template_id", c.template_id},
                {"clearance_mm", c.clearance_mm},
                {"volume_mm", dims_json(c.volume_mm)}};
}

BatchSignature signature_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"device_class", "parts"});
    auto dpath = child_path(path, "device_class");
    ObjectReader dr(r.object("device_class"), dpath, {"volume_mm", "materials"});
    BatchSignature sig;
    sig.device_class.volume_mm = dims_from(dr.at("volume_mm"), child_path(dpath, "volume_mm"));
    sig.device_class.materials = dr.string_list("materials");
    const auto& parts = r.array("parts");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        sig.parts.push_back(dims_from(parts[i], child_path(child_path(path, "parts"), i)));
    }
    return sig;
}

} // namespace

std::string case_id(const MemoryCase& c) { return sha256_hex(content_json(c).dump()); }

json to_json(const MemoryCase& c) {
    auto j = content_json(c);
    j["recorded_at"] = format_timestamp(c.recorded_at);
    return j;
}

MemoryCase memory_case_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path,
                   {"case_id", "signature", "device_id", "final_positions", "iterations_used",
                    "template_id", "recorded_at", "clearance_mm", "volume_mm"});
    MemoryCase c;
    c.signature = signature_from_json(r.object("signature"), child_path(path, "signature"));
    c.device_id = r.string("device_id");
    const auto& positions = r.array("final_positions");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        auto ppath = child_path(child_path(path, "final_positions"), i);
        ObjectReader pr(positions[i], ppath, {"dims", "center"});
        auto center = dims_from(pr.at("center"), child_path(ppath, "center"));
        c.final_positions.push_back(
            CasePosition{dims_from(pr.at("dims"), child_path(ppath, "dims")), Vec3{center[0], center[1], center[2]}});
    }
    c.iterations_used = static_cast<int>(r.integer("iterations_used"));
    c.template_id = r.string("template_id");
    c.recorded_at = parse_timestamp(r.string("recorded_at"));
    c.clearance_mm = r.number("clearance_mm");
    c.volume_mm = dims_from(r.at("volume_mm"), child_path(path, "volume_mm"));
    return c;
}

double similarity(const BatchSignature& query, const BatchSignature& stored) {
    if (query == stored) return 1.0;
    if (query.parts.size() != stored.parts.size() || query.parts.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < query.parts.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) {
            total += std::abs(query.parts[i][a] - stored.parts[i][a]) / stored.parts[i][a];
        }
    }
    double mean = total / static_cast<double>(3 * query.parts.size());
    return 1.0 / (1.0 + mean);
}

// --- store ---

namespace {

void validate_case(const MemoryCase& c) {
    if (c.final_positions.empty()) throw RejectedCaseError("case has no positions");
    if (c.iterations_used < 1) throw RejectedCaseError("iterations_used must be positive");
    BuildVolume vol = [&] {
        try {
            return BuildVolume(c.volume_mm[0], c.volume_mm[1], c.volume_mm[2]);
        } catch (const ValueError& e) {
            throw RejectedCaseError(std::string("invalid volume: ") + e.what());
        }
    }();
    Layout layout = [&] {
        try {
            return case_layout(c);
        } catch (const ValueError& e) {
            throw RejectedCaseError(std::string("invalid part dimensions: ") + e.what());
        }
    }();
    auto report = check_layout(layout, vol);
    if (!report.clear) throw RejectedCaseError("stored layout fails re-check: " + report.text);
}

} // namespace

MemoryStore::MemoryStore() = default;

MemoryStore::MemoryStore(std::filesystem::path log_path) : log_path_(std::move(log_path)) {
    std::ifstream in(*log_path_);
    if (!in) return;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = detail::parse_json(line);
            auto c = memory_case_from_json(j);
            auto stored_id = j.at("case_id").get<std::string>();
            auto id = case_id(c);
            if (id != stored_id) throw RejectedCaseError("case id does not match content");
            validate_case(c);
            if (seen.insert(id).second) cases_.push_back(ScoredCase{id, std::move(c), 0.0});
        } catch (const std::exception& e) {
            ++skipped_lines_;
            spdlog::warn("memory log {}:{} skipped: {}", log_path_->string(), line_no, e.what());
        }
    }
}

std::string MemoryStore::record_success(const MemoryCase& c) {
    validate_case(c);
    auto id = case_id(c);

    std::unique_lock lock(mutex_);
    for (const auto& existing : cases_) {
        if (existing.case_id == id) return id;
    }
    if (log_path_) {
        auto line = to_json(c);
        line["case_id"] = id;
        auto text = line.dump();
        if (log_path_->has_parent_path()) {
            std::error_code ec;
            std::filesystem::create_directories(log_path_->parent_path(), ec);
        }
        // A torn trailing line from an earlier crash must not swallow this record.
        bool needs_newline = false;
        {
            std::ifstream probe(*log_path_, std::ios::binary | std::ios::ate);
            if (probe && probe.tellg() > 0) {
                probe.seekg(-1, std::ios::end);
                needs_newline = probe.get() != '\n';
            }
        }
        std::FILE* f = std::fopen(log_path_->c_str(), "ab");
        if (!f) throw StorageError(fmt::format("cannot open memory log '{}'", log_path_->string()));
        bool ok = true;
        if (needs_newline) ok = std::fputc('\n', f) != EOF;
        ok = ok && std::fputs(text.c_str(), f) >= 0 && std::fputc('\n', f) != EOF;
        ok = ok && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
        ok = (std::fclose(f) == 0) && ok;
        if (!ok) throw StorageError(fmt::format("failed to append to memory log '{}'", log_path_->string()));
    }
    cases_.push_back(ScoredCase{id, c, 0.0});
    return id;
}

std::vector<ScoredCase> MemoryStore::retrieve_similar(const BatchSignature& sig, std::size_t k) const {
    std::vector<ScoredCase> hits;
    {
        std::shared_lock lock(mutex_);
        for (const auto& stored : cases_) {
            double score = similarity(sig, stored.value.signature);
            if (score >= kSimilarityThreshold) hits.push_back(ScoredCase{stored.case_id, stored.value, score});
        }
    }
    std::sort(hits.begin(), hits.end(), [&](const ScoredCase& a, const ScoredCase& b) {
        bool ea = a.value.signature == sig;
        bool eb = b.value.signature == sig;
        if (ea != eb) return ea;
        if (a.score != b.score) return a.score > b.score;
        if (a.value.recorded_at != b.value.recorded_at) return a.value.recorded_at > b.value.recorded_at;
        return a.case_id < b.case_id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

std::vector<ScoredCase> MemoryStore::all() const {
    std::shared_lock lock(mutex_);
    return cases_;
}

std::size_t MemoryStore::size() const {
    std::shared_lock lock(mutex_);
    return cases_.size();
}

std::optional<Layout> seed_layout(std::span<const ScoredCase> cases, const std::string& device_id,
                                  std::span<const PartSpec> parts, const BuildVolume& volume,
                                  double clearance_mm) {
    if (cases.empty() || parts.empty()) return std::nullopt;
    const auto& best = cases.front().value;
    // Only an exact geometric repeat can be replayed; the query signature is
    // rebuilt from the parts to compare the multiset.
    std::vector<Dims3> query_parts;
    for (const auto& p : parts) query_parts.push_back(rounded_part(p.dims));
    auto sorted_query = query_parts;
    std::sort(sorted_query.begin(), sorted_query.end());
    if (sorted_query != best.signature.parts || best.final_positions.size() != parts.size()) {
        return std::nullopt;
    }
    if (cases.front().score < 1.0) return std::nullopt;

    // Pair new parts with stored positions by sorted rounded dimensions.
    std::vector<std::size_t> new_order(parts.size());
    std::iota(new_order.begin(), new_order.end(), 0);
    std::stable_sort(new_order.begin(), new_order.end(), [&](std::size_t a, std::size_t b) {
        if (query_parts[a] != query_parts[b]) return query_parts[a] < query_parts[b];
        return parts[a].order_id < parts[b].order_id;
    });
    std::vector<std::size_t> stored_order(best.final_positions.size());
    std::iota(stored_order.begin(), stored_order.end(), 0);
    std::stable_sort(stored_order.begin(), stored_order.end(), [&](std::size_t a, std::size_t b) {
        return rounded_part(Extents(best.final_positions[a].dims[0], best.final_positions[a].dims[1],
                                    best.final_positions[a].dims[2])) <
               rounded_part(Extents(best.final_positions[b].dims[0], best.final_positions[b].dims[1],
                                    best.final_positions[b].dims[2]));
    });

    Layout layout;
    layout.device_id = device_id;
    layout.clearance_mm = clearance_mm;
    std::vector<Placement> placed(parts.size(), Placement{"", Vec3{}, parts.front().dims});
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& part = parts[new_order[i]];
        const auto& pos = best.final_positions[stored_order[i]];
        placed[new_order[i]] = Placement{part.order_id, Vec3{pos.center.x, pos.center.y, part.dims.h() / 2.0}, part.dims};
    }
    layout.placements = std::move(placed);
    if (!check_layout(layout, volume).clear) return std::nullopt;
    return layout;
}

} // namespace ordermerge
