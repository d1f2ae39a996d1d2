#include "ordermerge/matching.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "json_util.hpp"

namespace ordermerge {

DevicePreference parse_device_preference(std::string_view text) {
    if (text == "smallest-fit" || text == "SmallestFit") return DevicePreference::SmallestFit;
    if (text == "first-id" || text == "FirstId") return DevicePreference::FirstId;
    throw ValueError(fmt::format("unknown device preference '{}'", text));
}

namespace {

bool fits(const OrderSpatial& part, const BuildVolume& vol, bool allow_yaw_swap) {
    if (part.h() > vol.h()) return false;
    if (part.l() <= vol.l() && part.w() <= vol.w()) return true;
    return allow_yaw_swap && part.w() <= vol.l() && part.l() <= vol.w();
}

} // namespace

Compatibility compatible(const WorkOrder& order, const Device& device, const MatchPolicy& policy) {
    Compatibility c;
    if (!device.functional().supports(order.material())) {
        c.reason = reason::kMaterial;
        return c;
    }
    ++c.clauses_passed;
    if (order.m_type_req() && !(*order.m_type_req() == device.functional().m_type())) {
        c.reason = reason::kTechnology;
        return c;
    }
    ++c.clauses_passed;
    if (device.performance().accuracy_mm() > order.accuracy_req_mm()) {
        c.reason = reason::kAccuracy;
        return c;
    }
    ++c.clauses_passed;
    if (!fits(order.spatial(), device.volume(), policy.allow_yaw_swap)) {
        c.reason = reason::kSize;
        return c;
    }
    ++c.clauses_passed;
    c.ok = true;
    return c;
}

MatchResult match_orders(const OrderBook& book, const Fleet& fleet, const MatchPolicy& policy) {
    // Candidate devices in preference order.
    std::vector<const Device*> ranked;
    for (const auto& d : fleet.devices()) {
        if (d.status() != DeviceStatus::Offline) ranked.push_back(&d);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const Device* a, const Device* b) {
        if (policy.device_preference == DevicePreference::SmallestFit) {
            double va = a->volume().volume();
            double vb = b->volume().volume();
            if (va != vb) return va < vb;
        }
        return a->id() < b->id();
    });

    std::map<std::string, std::vector<const WorkOrder*>> batches;
    MatchResult result;
    for (const auto& order : book.orders()) {
        const Device* chosen = nullptr;
        Compatibility best_rejection;
        best_rejection.clauses_passed = -1;
        for (const Device* d : ranked) {
            auto c = compatible(order, *d, policy);
            if (c) {
                chosen = d;
                break;
            }
            // Ranked order makes the first rejection at a given depth the preferred one.
            if (c.clauses_passed > best_rejection.clauses_passed) best_rejection = c;
        }
        if (chosen) {
            batches[chosen->id()].push_back(&order);
        } else if (best_rejection.clauses_passed >= 0) {
            result.unassigned.push_back({order.id(), best_rejection.reason});
        } else {
            auto why = fleet.empty() ? reason::kNoDevices : reason::kOffline;
            result.unassigned.push_back({order.id(), why});
        }
    }

    for (auto& [device_id, orders] : batches) {
        std::sort(orders.begin(), orders.end(), [](const WorkOrder* a, const WorkOrder* b) {
            if (a->expected_time() != b->expected_time()) return a->expected_time() < b->expected_time();
            return a->id() < b->id();
        });
        Assignment a{device_id, {}};
        for (const auto* o : orders) a.order_ids.push_back(o->id());
        result.assignments.push_back(std::move(a));
    }
    return result;
}

nlohmann::json to_json(const MatchResult& result) {
    using nlohmann::json;
    json assignments = json::array();
    for (const auto& a : result.assignments) {
        assignments.push_back({{"device_id", a.device_id}, {"order_ids", a.order_ids}});
    }
    json unassigned = json::array();
    for (const auto& u : result.unassigned) {
        unassigned.push_back({{"order_id", u.order_id}, {"reason", u.reason}});
    }
    return json{{"assignments", assignments}, {"unassigned", unassigned}};
}

MatchResult match_result_from_json(const nlohmann::json& j) {
    using detail::child_path;
    detail::ObjectReader r(j, "", {"assignments", "unassigned"});
    MatchResult out;
    const auto& as = r.array("assignments");
    for (std::size_t i = 0; i < as.size(); ++i) {
        detail::ObjectReader ar(as[i], child_path("/assignments", i), {"device_id", "order_ids"});
        out.assignments.push_back({ar.string("device_id"), ar.string_list("order_ids")});
    }
    const auto& us = r.array("unassigned");
    for (std::size_t i = 0; i < us.size(); ++i) {
        detail::ObjectReader ur(us[i], child_path("/unassigned", i), {"order_id", "reason"});
        out.unassigned.push_back({ur.string("order_id"), ur.string("reason")});
    }
    return out;
}

} // namespace ordermerge
