#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ordermerge/model.hpp"

namespace ordermerge {

/// Default mandatory gap between part bounding boxes.
inline constexpr double kDefaultClearanceMm = 2.0;

/// One part's axis-aligned box in the device frame: x and y from the
/// build-plate center, z from the bed up. `center.z` is the box center, so a
/// part resting on the bed has z = h / 2.
struct Placement {
    std::string order_id;
    Vec3 center;
    Extents dims;

    friend bool operator==(const Placement&, const Placement&) = default;
};

struct Layout {
    std::string device_id;
    std::vector<Placement> placements;
    double clearance_mm = kDefaultClearanceMm;

    friend bool operator==(const Layout&, const Layout&) = default;
};

/// Throws ValueError on duplicate order ids, non-finite centers, or a
/// negative clearance.
void validate_layout(const Layout& layout);

enum class FindingKind { PartPart, OutOfVolume };

struct InterferenceFinding {
    FindingKind kind;
    std::vector<std::string> subjects; ///< one or two ids, sorted
    double penetration_mm;             ///< > 0

    friend bool operator==(const InterferenceFinding&, const InterferenceFinding&) = default;
};

struct InterferenceReport {
    std::vector<InterferenceFinding> findings;
    bool clear = true;
    std::string text;

    friend bool operator==(const InterferenceReport&, const InterferenceReport&) = default;
};

/// Penetration depth along the least-penetrating axis when the clearance-
/// inflated boxes overlap on all three axes. Touching at exactly the
/// clearance distance is not an overlap.
std::optional<double> aabb_overlap(const Placement& a, const Placement& b, double clearance_mm);

/// Largest per-axis length of the part's box lying outside the volume box
/// x in [-L/2, L/2], y in [-W/2, W/2], z in [0, H]. Touching a wall is fine.
std::optional<double> containment_check(const Placement& p, const BuildVolume& vol);

/// All part-part overlaps (sweep-and-prune on x) and all out-of-volume parts.
InterferenceReport check_layout(const Layout& layout, const BuildVolume& vol);

/// One sentence per finding, in the order given.
std::string render_report_text(const std::vector<InterferenceFinding>& findings);

nlohmann::json to_json(const Placement& p);
nlohmann::json to_json(const Layout& layout);
nlohmann::json to_json(const InterferenceReport& report);
nlohmann::json to_json(const BuildVolume& vol);
Placement placement_from_json(const nlohmann::json& j, const std::string& path = "");
Layout layout_from_json(const nlohmann::json& j, const std::string& path = "");
InterferenceReport report_from_json(const nlohmann::json& j, const std::string& path = "");
BuildVolume volume_from_json(const nlohmann::json& j, const std::string& path = "");

} // namespace ordermerge
