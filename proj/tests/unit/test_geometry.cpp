#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ordermerge/errors.hpp"
#include "ordermerge/geometry.hpp"
#include "test_support.hpp"

using namespace ordermerge;
using testing::Rng;

namespace {

Placement box(const std::string& id, double x, double y, double z, double l, double w, double h) {
    return Placement{id, Vec3{x, y, z}, Extents(l, w, h)};
}

Placement cube(const std::string& id, double x, double y, double z, double s = 10) { return box(id, x, y, z, s, s, s); }

// Separation oracle: per axis, the clearance-inflated interval of `a` against
// the interval of `b`; open intervals must intersect on every axis. The
// penetration is the shorter push that separates them on the best axis.
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

Placement random_box(Rng& rng, const std::string& id, double span = 250) {
    return box(id, rng.uniform(-span / 2, span / 2), rng.uniform(-span / 2, span / 2), rng.uniform(0, span),
               rng.uniform(1, 120), rng.uniform(1, 120), rng.uniform(1, 120));
}

} // namespace

TEST_CASE("aabb_overlap examples") {
    auto full = aabb_overlap(cube("a", 0, 0, 5), cube("b", 0, 0, 5), 0);
    REQUIRE(full);
    CHECK(*full == doctest::Approx(10));
    CHECK_FALSE(aabb_overlap(cube("a", 0, 0, 5), cube("b", 10, 0, 5), 0));
    // Exactly the clearance apart is allowed; any closer is not.
    CHECK_FALSE(aabb_overlap(cube("a", 0, 0, 5), cube("b", 12, 0, 5), 2));
    auto close = aabb_overlap(cube("a", 0, 0, 5), cube("b", 11, 0, 5), 2);
    REQUIRE(close);
    CHECK(*close == doctest::Approx(1));
}

TEST_CASE("containment_check examples") {
    BuildVolume v200(200, 200, 200);
    CHECK_FALSE(containment_check(box("CL01", 0, 0, 5, 24, 23.99, 10), v200));
    auto out = containment_check(cube("c", 98, 0, 5), v200);
    REQUIRE(out);
    CHECK(*out == doctest::Approx(3));
    // Touching the wall is fine.
    CHECK_FALSE(containment_check(cube("c", 95, -95, 5), v200));
    // Below the bed.
    auto sunk = containment_check(cube("c", 0, 0, 4), v200);
    REQUIRE(sunk);
    CHECK(*sunk == doctest::Approx(1));
}

TEST_CASE("a part taller than the volume exceeds it by h - H at any z") {
    BuildVolume v(100, 100, 50);
    for (double z : {-30.0, 0.0, 25.0, 40.0, 90.0}) {
        auto e = containment_check(box("t", 0, 0, z, 10, 10, 70), v);
        REQUIRE(e);
        CHECK(*e >= 20.0 - 1e-12);
    }
    auto centered = containment_check(box("t", 0, 0, 25, 10, 10, 70), v);
    CHECK(*centered == doctest::Approx(20));
    auto resting = containment_check(box("t", 0, 0, 35, 10, 10, 70), v);
    CHECK(*resting == doctest::Approx(20));
}

TEST_CASE("check_layout: three racks at the same center") {
    Layout layout{"EQ03",
                  {box("CT01", 0, 0, 3.5, 40.8, 10, 7), box("CT02", 0, 0, 3.5, 40.8, 10, 7),
                   box("CT03", 0, 0, 3.5, 40.8, 10, 7)},
                  2.0};
    auto r = check_layout(layout, BuildVolume(145, 145, 175));
    CHECK_FALSE(r.clear);
    REQUIRE(r.findings.size() == 3);
    for (const auto& f : r.findings) {
        CHECK(f.kind == FindingKind::PartPart);
        CHECK(f.penetration_mm == doctest::Approx(9.0));
    }
    CHECK(r.text ==
          "CT01 and CT02 interfere; overlap depth 9.00 mm. CT01 and CT03 interfere; overlap depth 9.00 mm. "
          "CT02 and CT03 interfere; overlap depth 9.00 mm.");
}

TEST_CASE("check_layout: empty and clear layouts") {
    auto empty = check_layout(Layout{"EQ01", {}, 2.0}, BuildVolume(200, 200, 200));
    CHECK(empty.clear);
    CHECK(empty.findings.empty());
    CHECK(empty.text == "no interference detected");

    Layout gears{"EQ01",
                 {box("CL01", 0, 0, 5, 24, 23.99, 10), box("CL02", 30, 0, 5, 24, 23.99, 10),
                  box("CL03", -30, 0, 5, 24, 23.99, 10)},
                 2.0};
    CHECK(check_layout(gears, BuildVolume(200, 200, 200)).clear);
}

TEST_CASE("check_layout: out-of-volume finding text") {
    Layout layout{"EQ01", {cube("P1", 98, 0, 5)}, 2.0};
    auto r = check_layout(layout, BuildVolume(200, 200, 200));
    REQUIRE(r.findings.size() == 1);
    CHECK(r.findings[0].kind == FindingKind::OutOfVolume);
    CHECK(r.text == "P1 exceeds build volume by 3.00 mm.");
}

TEST_CASE("check_layout: finding subjects are sorted") {
    Layout layout{"D", {cube("zeta", 0, 0, 5), cube("alpha", 1, 0, 5)}, 0.0};
    auto r = check_layout(layout, BuildVolume(100, 100, 100));
    REQUIRE(r.findings.size() == 1);
    CHECK(r.findings[0].subjects == std::vector<std::string>{"alpha", "zeta"});
}

TEST_CASE("validate_layout rejects duplicate ids and bad clearance") {
    CHECK_THROWS_AS(validate_layout(Layout{"D", {cube("a", 0, 0, 5), cube("a", 50, 0, 5)}, 2.0}), DuplicateIdError);
    CHECK_THROWS_AS(validate_layout(Layout{"D", {cube("a", 0, 0, 5)}, -1.0}), ValueError);
    CHECK_THROWS_AS(validate_layout(Layout{"D", {cube("a", std::nan(""), 0, 5)}, 1.0}), ValueError);
    CHECK_NOTHROW(validate_layout(Layout{"D", {cube("a", 0, 0, 5), cube("b", 50, 0, 5)}, 0.0}));
}

TEST_CASE("layout and report JSON round trip") {
    Layout layout{"EQ03", {box("CT01", 0, 0, 3.5, 40.8, 10, 7), box("CT02", 0.125, 1e-7, 3.5, 40.8, 10, 7)}, 2.0};
    CHECK(layout_from_json(to_json(layout)) == layout);
    auto report = check_layout(layout, BuildVolume(145, 145, 175));
    CHECK(report_from_json(to_json(report)) == report);
    CHECK(volume_from_json(to_json(BuildVolume(145, 145, 175))) == BuildVolume(145, 145, 175));
}

TEST_CASE("property: aabb_overlap agrees with the interval oracle") {
    Rng rng(1);
    int overlaps = 0;
    for (int i = 0; i < 20000; ++i) {
        auto a = random_box(rng, "a");
        auto b = random_box(rng, "b");
        double c = rng.coin(0.2) ? 0.0 : rng.uniform(0, 5);
        auto got = aabb_overlap(a, b, c);
        auto want = interval_oracle(a, b, c);
        REQUIRE(got.has_value() == want.has_value());
        if (got) {
            ++overlaps;
            CHECK(std::abs(*got - *want) <= 1e-9);
        }
    }
    // Both outcomes must be well represented for the comparison to mean much.
    CHECK(overlaps > 1000);
    CHECK(overlaps < 18000);
}

TEST_CASE("property: touching boxes on a grid") {
    // Integer coordinates make exact contact common.
    Rng rng(2);
    for (int i = 0; i < 5000; ++i) {
        auto a = box("a", rng.integer(-5, 5), rng.integer(-5, 5), rng.integer(0, 5), rng.integer(1, 4) * 2,
                     rng.integer(1, 4) * 2, rng.integer(1, 4) * 2);
        auto b = box("b", rng.integer(-5, 5), rng.integer(-5, 5), rng.integer(0, 5), rng.integer(1, 4) * 2,
                     rng.integer(1, 4) * 2, rng.integer(1, 4) * 2);
        double c = rng.integer(0, 2);
        CHECK(aabb_overlap(a, b, c).has_value() == interval_oracle(a, b, c).has_value());
    }
}

TEST_CASE("property: symmetry, translation invariance, clearance monotonicity") {
    Rng rng(3);
    for (int i = 0; i < 5000; ++i) {
        auto a = random_box(rng, "a", 100);
        auto b = random_box(rng, "b", 100);
        double c = rng.uniform(0, 4);
        auto ab = aabb_overlap(a, b, c);
        CHECK(ab == aabb_overlap(b, a, c));

        // Power-of-two shifts keep every coordinate difference exact.
        Vec3 d{std::ldexp(1.0, rng.integer(0, 8)), -std::ldexp(1.0, rng.integer(0, 8)), std::ldexp(1.0, rng.integer(0, 8))};
        auto shift = [&](Placement p) {
            p.center = Vec3{p.center.x + d.x, p.center.y + d.y, p.center.z + d.z};
            return p;
        };
        auto moved = aabb_overlap(shift(a), shift(b), c);
        REQUIRE(moved.has_value() == ab.has_value());
        if (ab) CHECK(std::abs(*moved - *ab) <= 1e-9);

        if (ab) {
            auto wider = aabb_overlap(a, b, c + rng.uniform(0.001, 5));
            REQUIRE(wider);
            CHECK(*wider > *ab);
        }
    }
}

TEST_CASE("property: check_layout matches brute-force pair enumeration") {
    Rng rng(4);
    for (int trial = 0; trial < 400; ++trial) {
        BuildVolume vol(rng.uniform(100, 300), rng.uniform(100, 300), rng.uniform(50, 200));
        Layout layout{"D", {}, rng.uniform(0, 3)};
        int n = rng.integer(0, 25);
        for (int i = 0; i < n; ++i) {
            layout.placements.push_back(box(fmt::format("p{:02d}", i), rng.uniform(-vol.l() / 2, vol.l() / 2),
                                            rng.uniform(-vol.w() / 2, vol.w() / 2), rng.uniform(0, vol.h()),
                                            rng.uniform(2, 40), rng.uniform(2, 40), rng.uniform(2, 40)));
        }
        std::vector<InterferenceFinding> expected;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (auto p = interval_oracle(layout.placements[i], layout.placements[j], layout.clearance_mm)) {
                    expected.push_back({FindingKind::PartPart,
                                        {layout.placements[i].order_id, layout.placements[j].order_id},
                                        *p});
                }
            }
        }
        int out_of_volume = 0;
        for (const auto& p : layout.placements) {
            bool inside = std::abs(p.center.x) + p.dims.l() / 2 <= vol.l() / 2 &&
                          std::abs(p.center.y) + p.dims.w() / 2 <= vol.w() / 2 &&
                          p.center.z - p.dims.h() / 2 >= 0 && p.center.z + p.dims.h() / 2 <= vol.h();
            out_of_volume += inside ? 0 : 1;
        }
        auto report = check_layout(layout, vol);
        int part_part = 0;
        for (const auto& f : report.findings) {
            if (f.kind != FindingKind::PartPart) continue;
            ++part_part;
            auto it = std::find_if(expected.begin(), expected.end(),
                                   [&](const InterferenceFinding& e) { return e.subjects == f.subjects; });
            REQUIRE(it != expected.end());
            CHECK(std::abs(it->penetration_mm - f.penetration_mm) <= 1e-9);
        }
        CHECK(part_part == static_cast<int>(expected.size()));
        CHECK(static_cast<int>(report.findings.size()) - part_part == out_of_volume);
        CHECK(report.clear == report.findings.empty());
        CHECK(std::is_sorted(report.findings.begin(), report.findings.end(),
                             [](const auto& x, const auto& y) { return x.subjects < y.subjects; }));
    }
}
