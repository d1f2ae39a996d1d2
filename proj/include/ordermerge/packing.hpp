#pragma once

#include <string>
#include <vector>

#include "ordermerge/geometry.hpp"

namespace ordermerge {

struct PartSpec {
    std::string order_id;
    Extents dims;
};

struct PackRequest {
    std::string device_id;
    std::vector<PartSpec> parts; ///< non-empty
    BuildVolume volume;
    double clearance_mm = kDefaultClearanceMm;
};

struct PackOutcome {
    Layout placed;
    std::vector<std::string> rejected;
};

/// Row-based bottom-left fill on the bed plane. Parts go largest footprint
/// first (ties by id), left to right along x, in rows stacked along y. Every
/// part rests on the bed. A part that fits nowhere is rejected, never forced.
/// The emitted layout is always checker-clear.
PackOutcome shelf_pack(const PackRequest& request);

/// Every part at the bed center resting on the bed, in request order.
Layout initial_positions(const PackRequest& request);

} // namespace ordermerge
