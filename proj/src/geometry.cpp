#include "ordermerge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "json_util.hpp"

namespace ordermerge {

using detail::child_path;
using detail::json;
using detail::ObjectReader;

void validate_layout(const Layout& layout) {
    if (!(std::isfinite(layout.clearance_mm) && layout.clearance_mm >= 0.0)) {
        throw ValueError("clearance_mm must be a non-negative finite number");
    }
    std::set<std::string_view> ids;
    for (const auto& p : layout.placements) {
        if (!ids.insert(p.order_id).second) throw DuplicateIdError(p.order_id);
        if (!std::isfinite(p.center.x) || !std::isfinite(p.center.y) || !std::isfinite(p.center.z)) {
            throw ValueError(fmt::format("placement '{}' has a non-finite center", p.order_id));
        }
    }
}

std::optional<double> aabb_overlap(const Placement& a, const Placement& b, double clearance_mm) {
    const double deltas[3] = {a.center.x - b.center.x, a.center.y - b.center.y,
                              a.center.z - b.center.z};
    const double reach[3] = {(a.dims.l() + b.dims.l()) / 2.0, (a.dims.w() + b.dims.w()) / 2.0,
                             (a.dims.h() + b.dims.h()) / 2.0};
    double depth = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        double slack = reach[axis] + clearance_mm - std::abs(deltas[axis]);
        if (!(slack > 0.0)) return std::nullopt;
        depth = std::min(depth, slack);
    }
    return depth;
}

std::optional<double> containment_check(const Placement& p, const BuildVolume& vol) {
    struct Axis {
        double center, size, lo, hi;
    };
    const Axis axes[3] = {
        {p.center.x, p.dims.l(), -vol.l() / 2.0, vol.l() / 2.0},
        {p.center.y, p.dims.w(), -vol.w() / 2.0, vol.w() / 2.0},
        {p.center.z, p.dims.h(), 0.0, vol.h()},
    };
    double excess = 0.0;
    for (const auto& a : axes) {
        double below = std::max(0.0, a.lo - (a.center - a.size / 2.0));
        double above = std::max(0.0, (a.center + a.size / 2.0) - a.hi);
        // Straddling both walls: below + above is the part length outside the box.
        excess = std::max(excess, below + above);
    }
    if (excess > 0.0) return excess;
    return std::nullopt;
}

namespace {

bool finding_less(const InterferenceFinding& a, const InterferenceFinding& b) {
    if (a.subjects != b.subjects) return a.subjects < b.subjects;
    return a.kind < b.kind;
}

std::string format_depth(double mm) { return fmt::format("{:.2f}", mm); }

} // namespace

std::string render_report_text(const std::vector<InterferenceFinding>& findings) {
    if (findings.empty()) return "no interference detected";
    std::string text;
    for (const auto& f : findings) {
        if (!text.empty()) text += ' ';
        if (f.kind == FindingKind::PartPart) {
            text += fmt::format("{} and {} interfere; overlap depth {} mm.", f.subjects.at(0),
                                f.subjects.at(1), format_depth(f.penetration_mm));
        } else {
            text += fmt::format("{} exceeds build volume by {} mm.", f.subjects.at(0),
                                format_depth(f.penetration_mm));
        }
    }
    return text;
}

InterferenceReport check_layout(const Layout& layout, const BuildVolume& vol) {
    validate_layout(layout);
    const auto& parts = layout.placements;
    const double c = layout.clearance_mm;
    std::vector<InterferenceFinding> findings;

    // Sweep-and-prune on x: after sorting by the inflated lower bound, a part
    // can only touch later parts whose lower bound precedes its upper bound.
    std::vector<std::size_t> order(parts.size());
    std::iota(order.begin(), order.end(), 0);
    auto lower = [&](std::size_t i) { return parts[i].center.x - parts[i].dims.l() / 2.0 - c / 2.0; };
    auto upper = [&](std::size_t i) { return parts[i].center.x + parts[i].dims.l() / 2.0 + c / 2.0; };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return lower(a) < lower(b) || (lower(a) == lower(b) && a < b);
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& a = parts[order[i]];
        // The prune bound is widened slightly; aabb_overlap is the exact test.
        const double bound = upper(order[i]) + 1e-9 * (1.0 + std::abs(upper(order[i])));
        for (std::size_t j = i + 1; j < order.size() && lower(order[j]) <= bound; ++j) {
            const auto& b = parts[order[j]];
            if (auto depth = aabb_overlap(a, b, c)) {
                auto ids = std::minmax(a.order_id, b.order_id);
                findings.push_back({FindingKind::PartPart, {ids.first, ids.second}, *depth});
            }
        }
    }
    for (const auto& p : parts) {
        if (auto excess = containment_check(p, vol)) {
            findings.push_back({FindingKind::OutOfVolume, {p.order_id}, *excess});
        }
    }
    std::sort(findings.begin(), findings.end(), finding_less);

    InterferenceReport report;
    report.clear = findings.empty();
    report.text = render_report_text(findings);
    report.findings = std::move(findings);
    return report;
}

// --- JSON ---

json to_json(const Placement& p) {
    return json{{"order_id", p.order_id},
                {"center", {p.center.x, p.center.y, p.center.z}},
                {"dims", {p.dims.l(), p.dims.w(), p.dims.h()}}};
}

json to_json(const Layout& layout) {
    json placements = json::array();
    for (const auto& p : layout.placements) placements.push_back(to_json(p));
    return json{{"device_id", layout.device_id},
                {"placements", placements},
                {"clearance_mm", layout.clearance_mm}};
}

json to_json(const InterferenceReport& report) {
    json findings = json::array();
    for (const auto& f : report.findings) {
        findings.push_back({{"kind", f.kind == FindingKind::PartPart ? "PartPart" : "OutOfVolume"},
                            {"subjects", f.subjects},
                            {"penetration_mm", f.penetration_mm}});
    }
    return json{{"findings", findings}, {"clear", report.clear}, {"text", report.text}};
}

json to_json(const BuildVolume& vol) {
    return json{{"l_mm", vol.l()}, {"w_mm", vol.w()}, {"h_mm", vol.h()}};
}

namespace {

std::array<double, 3> triple(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw SchemaError(path, "expected [a, b, c]");
    std::array<double, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!j[i].is_number()) throw SchemaError(child_path(path, i), "expected a number");
        out[i] = j[i].get<double>();
    }
    return out;
}

} // namespace

Placement placement_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"order_id", "center", "dims"});
    auto c = triple(r.at("center"), child_path(path, "center"));
    auto d = triple(r.at("dims"), child_path(path, "dims"));
    return Placement{r.string("order_id"), Vec3{c[0], c[1], c[2]}, Extents(d[0], d[1], d[2])};
}

Layout layout_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"device_id", "placements", "clearance_mm"});
    Layout layout;
    layout.device_id = r.string("device_id");
    layout.clearance_mm = r.number("clearance_mm");
    const auto& arr = r.array("placements");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        layout.placements.push_back(placement_from_json(arr[i], child_path(child_path(path, "placements"), i)));
    }
    return layout;
}

InterferenceReport report_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"findings", "clear", "text"});
    InterferenceReport report;
    report.clear = r.boolean("clear");
    report.text = r.string("text");
    const auto& arr = r.array("findings");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        auto fpath = child_path(child_path(path, "findings"), i);
        ObjectReader fr(arr[i], fpath, {"kind", "subjects", "penetration_mm"});
        auto kind = fr.string("kind");
        if (kind != "PartPart" && kind != "OutOfVolume") throw SchemaError(child_path(fpath, "kind"), "unknown kind");
        report.findings.push_back({kind == "PartPart" ? FindingKind::PartPart : FindingKind::OutOfVolume,
                                   fr.string_list("subjects"), fr.number("penetration_mm")});
    }
    return report;
}

BuildVolume volume_from_json(const json& j, const std::string& path) {
    ObjectReader r(j, path, {"l_mm", "w_mm", "h_mm"});
    return BuildVolume(r.number("l_mm"), r.number("w_mm"), r.number("h_mm"));
}

} // namespace ordermerge
