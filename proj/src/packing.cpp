#include "ordermerge/packing.hpp"

#include <algorithm>

#include "ordermerge/errors.hpp"

namespace ordermerge {

namespace {

// Float slack added to every inter-part gap so that computed positions never
// land a rounding error inside the strict clearance bound.
constexpr double kGapSlackMm = 1e-6;

struct Shelf {
    double y_min;  // front edge of the row
    double depth;  // widest part in the row so far
    double x_next; // left edge available for the next part
    bool open;     // only the last row may still grow deeper
};

} // namespace

PackOutcome shelf_pack(const PackRequest& request) {
    if (request.parts.empty()) throw ValueError("pack request has no parts");

    std::vector<const PartSpec*> parts;
    for (const auto& p : request.parts) parts.push_back(&p);
    std::stable_sort(parts.begin(), parts.end(), [](const PartSpec* a, const PartSpec* b) {
        if (a->dims.footprint() != b->dims.footprint()) return a->dims.footprint() > b->dims.footprint();
        return a->order_id < b->order_id;
    });

    const auto& vol = request.volume;
    const double c = request.clearance_mm;
    const double x_lo = -vol.l() / 2.0;
    const double y_lo = -vol.w() / 2.0;

    PackOutcome out;
    out.placed.device_id = request.device_id;
    out.placed.clearance_mm = c;
    std::vector<Shelf> shelves;

    auto accepts = [&](const Placement& candidate) {
        if (containment_check(candidate, vol)) return false;
        for (const auto& placed : out.placed.placements) {
            if (aabb_overlap(candidate, placed, c)) return false;
        }
        return true;
    };

    for (const PartSpec* part : parts) {
        const auto& d = part->dims;
        bool placed = false;
        if (d.h() <= vol.h()) {
            for (auto& shelf : shelves) {
                if (d.w() > shelf.depth && !shelf.open) continue;
                Placement candidate{part->order_id,
                                    Vec3{shelf.x_next + d.l() / 2.0, shelf.y_min + d.w() / 2.0, d.h() / 2.0},
                                    d};
                if (!accepts(candidate)) continue;
                shelf.x_next += d.l() + c + kGapSlackMm;
                shelf.depth = std::max(shelf.depth, d.w());
                out.placed.placements.push_back(std::move(candidate));
                placed = true;
                break;
            }
            if (!placed) {
                double y_min = y_lo;
                if (!shelves.empty()) {
                    const auto& last = shelves.back();
                    y_min = last.y_min + last.depth + c + kGapSlackMm;
                }
                Placement candidate{part->order_id,
                                    Vec3{x_lo + d.l() / 2.0, y_min + d.w() / 2.0, d.h() / 2.0}, d};
                if (accepts(candidate)) {
                    for (auto& s : shelves) s.open = false;
                    shelves.push_back(Shelf{y_min, d.w(), x_lo + d.l() + c + kGapSlackMm, true});
                    out.placed.placements.push_back(std::move(candidate));
                    placed = true;
                }
            }
        }
        if (!placed) out.rejected.push_back(part->order_id);
    }
    return out;
}

Layout initial_positions(const PackRequest& request) {
    Layout layout;
    layout.device_id = request.device_id;
    layout.clearance_mm = request.clearance_mm;
    for (const auto& p : request.parts) {
        layout.placements.push_back(Placement{p.order_id, Vec3{0.0, 0.0, p.dims.h() / 2.0}, p.dims});
    }
    return layout;
}

} // namespace ordermerge
