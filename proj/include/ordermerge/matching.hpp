#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ordermerge/model.hpp"

namespace ordermerge {

enum class DevicePreference {
    SmallestFit, ///< minimal build-volume product, ties by device id
    FirstId,     ///< lexicographically smallest compatible device id
};

struct MatchPolicy {
    DevicePreference device_preference = DevicePreference::SmallestFit;
    bool allow_yaw_swap = true;
};

DevicePreference parse_device_preference(std::string_view text);

/// Reason codes reported by `compatible`, in clause order.
namespace reason {
inline constexpr const char* kMaterial = "material";
inline constexpr const char* kTechnology = "technology";
inline constexpr const char* kAccuracy = "accuracy";
inline constexpr const char* kSize = "size";
inline constexpr const char* kOffline = "offline";
inline constexpr const char* kNoDevices = "no devices";
} // namespace reason

struct Compatibility {
    bool ok = false;
    std::string reason; ///< empty when ok
    int clauses_passed = 0;

    explicit operator bool() const noexcept { return ok; }
};

/// Material, then requested technology (if any), then accuracy, then fit.
/// The first failing clause is reported.
Compatibility compatible(const WorkOrder& order, const Device& device, const MatchPolicy& policy);

struct Assignment {
    std::string device_id;
    std::vector<std::string> order_ids;

    friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct Unassigned {
    std::string order_id;
    std::string reason;

    friend bool operator==(const Unassigned&, const Unassigned&) = default;
};

struct MatchResult {
    std::vector<Assignment> assignments; ///< sorted by device id
    std::vector<Unassigned> unassigned;  ///< in order-book order

    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

/// Assigns every order to exactly one compatible, non-offline device. Batches
/// are sorted by expected_time, then id. Orders no device accepts are reported
/// with the reason from the rejection that got furthest through the clauses.
MatchResult match_orders(const OrderBook& book, const Fleet& fleet, const MatchPolicy& policy = {});

nlohmann::json to_json(const MatchResult& result);
MatchResult match_result_from_json(const nlohmann::json& j);

} // namespace ordermerge
