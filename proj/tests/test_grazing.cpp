#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "billiard/grazing.hpp"
#include "billiard/rng.hpp"

using namespace billiard;

namespace {

constexpr double kPi = std::numbers::pi;

Domain annulus(double r_out = 1.0, double r_in = 0.3) {
    return Domain::closed(
        AnalyticCurve::circle({0, 0}, r_out, Orientation::Counterclockwise),
        {AnalyticCurve::circle({0, 0}, r_in, Orientation::Clockwise)}, 1.0);
}

}  // namespace

TEST_CASE("grazing family on the annulus hole") {
    const Domain ann = annulus();
    const auto dec = decompose_boundary(ann);
    REQUIRE(dec.per_curve[1].all_concave);
    const auto interval = dec.per_curve[1].concave[0];
    const GrazingFamily fam =
        trace_grazing_family(ann, dec, 1, interval, 64, 1.0, +1, 5.0);
    CHECK(fam.cycles.size() == 64);
    for (const auto& cyc : fam.cycles) {
        REQUIRE(!cyc.events.empty());
        CHECK(cyc.events[0].curve_id == 0);  // first transversal hit on the outer circle
        CHECK(cyc.events[0].incidence > 1e-3);
    }
    SECTION("grid too small") {
        CHECK_THROWS_AS(trace_grazing_family(ann, dec, 1, interval, 0, 1.0, 1, 5.0),
                        EmptyInterval);
    }
    SECTION("tangent chords of a circle admit no common point") {
        const StickyReport rep = detect_sticky(fam, 1, 1e-6);
        CHECK(rep.verdict == StickyVerdict::Isolated);
        CHECK(rep.max_residual > 0.1);  // well above any sensible tolerance
    }
    SECTION("family of size one is degenerate") {
        GrazingFamily tiny = fam;
        tiny.cycles.resize(1);
        CHECK_THROWS_AS(detect_sticky(tiny, 1, 1e-6), DegenerateFamily);
    }
}

TEST_CASE("sticky example closed forms") {
    CHECK(sticky_delta_star(0.0) == 0.0);
    CHECK(sticky_slope(0.0) == Catch::Approx(-1.0).margin(1e-14));
    CHECK(sticky_delta_star(0.05) ==
          Catch::Approx(1.05 - std::sqrt(1.0025)).margin(1e-12));
    // direct reflection oracle for L(d): reflect the backward ray from (1,1)
    for (double d : {0.01, 0.03, 0.05}) {
        const double ds = sticky_delta_star(d);
        Vec2 inc = Vec2{-1.0, -(1.0 + d)}.normalized();
        Vec2 n = Vec2{ds, -1.0}.normalized();
        const Vec2 ref = reflect(inc, n);
        CHECK(sticky_slope(d) == Catch::Approx(ref.y / ref.x).margin(1e-12));
    }
}

TEST_CASE("refocusing arc construction") {
    const StickyExample ex = build_sticky_example(0.05, 200, -1.0);
    REQUIRE(ex.arc.size() == 200);
    SECTION("arc is concave toward the trajectories and consistent") {
        // L' > 0 held during construction; integrated route agrees
        CHECK(ex.rk4_max_deviation < 1e-10);
        // reversed parametrization carries positive signed curvature
        for (double s : {0.005, 0.02, 0.04})
            CHECK(curvature(ex.arc_curve, s) > 0.0);
        // delta = 0 tangency point sits on the ray y = -x
        const Vec2 p0 = ex.arc.front().point;
        CHECK(p0.y == Catch::Approx(-p0.x).margin(1e-12));
    }
    SECTION("tangent launches refocus through (1,1) after one bounce") {
        const auto dec = decompose_boundary(ex.sandbox);
        REQUIRE(dec.per_curve[1].all_concave);
        const GrazingFamily fam = trace_grazing_family(
            ex.sandbox, dec, 1, dec.per_curve[1].concave[0], 64, 1.0, -1, 12.0);
        double worst = 0.0;
        for (const auto& cyc : fam.cycles) {
            REQUIRE(cyc.events.size() >= 2);
            CHECK(cyc.events[0].curve_id == 0);  // parabola
            const Vec2 a = cyc.events[0].x.cs();
            const Vec2 b = cyc.events[1].x.cs();
            const Vec2 dir = (b - a).normalized();
            const Vec2 w = ex.focus - a;
            worst = std::max(worst, std::abs(cross(w, dir)));
        }
        CHECK(worst < 1e-6);
        const StickyReport rep = detect_sticky(fam, 1, 1e-6);
        CHECK(rep.verdict == StickyVerdict::Sticky);
        CHECK((rep.point - ex.focus).norm() < 1e-6);
    }
    SECTION("parameter validation") {
        CHECK_THROWS_AS(build_sticky_example(0.05, 1, -1.0), ValidationError);
        CHECK_THROWS_AS(build_sticky_example(-0.1, 10, -1.0), ValidationError);
        CHECK_THROWS_AS(build_sticky_example(0.05, 10, 1.0), ValidationError);
    }
}

TEST_CASE("synthetic concurrent families") {
    Rng rng(91);
    const Vec2 target{2.0, -1.0};
    SECTION("recovers a noisy concurrence point within 3 eta") {
        for (double eta : {1e-8, 1e-5, 1e-3}) {
            std::vector<std::pair<Vec2, Vec2>> segs;
            for (int i = 0; i < 24; ++i) {
                const double a = 0.2 + 2.6 * i / 24.0;
                const Vec2 d{std::cos(a), std::sin(a)};
                const Vec2 off = perp(d) * rng.uniform(-eta, eta);
                segs.push_back({target + off - d * rng.uniform(0.5, 2.0),
                                target + off + d * rng.uniform(0.5, 2.0)});
            }
            const StickyReport rep = detect_sticky_segments(segs, 10 * eta + 1e-9);
            CHECK((rep.point - target).norm() < 3 * eta + 1e-12);
        }
    }
    SECTION("verdicts are scale invariant") {
        std::vector<std::pair<Vec2, Vec2>> segs;
        for (int i = 0; i < 16; ++i) {
            const double a = 0.3 + 2.2 * i / 16.0;
            const Vec2 d{std::cos(a), std::sin(a)};
            const Vec2 off = perp(d) * rng.uniform(-1e-7, 1e-7);
            segs.push_back({target + off - d, target + off + d});
        }
        const StickyReport base = detect_sticky_segments(segs, 1e-6);
        REQUIRE(base.verdict == StickyVerdict::Sticky);
        const double lambda = 7.0;
        std::vector<std::pair<Vec2, Vec2>> scaled;
        for (const auto& [a, b] : segs) scaled.push_back({a * lambda, b * lambda});
        const StickyReport big = detect_sticky_segments(scaled, 1e-6 * lambda);
        CHECK(big.verdict == StickyVerdict::Sticky);
        CHECK(big.max_residual == Catch::Approx(base.max_residual * lambda).epsilon(1e-6));
        // unscaled tolerance on the scaled scene flips the verdict
        const StickyReport strict = detect_sticky_segments(scaled, 1e-9);
        CHECK(strict.verdict == StickyVerdict::Isolated);
    }
    SECTION("near-parallel directions are degenerate") {
        std::vector<std::pair<Vec2, Vec2>> segs;
        for (int i = 0; i < 8; ++i) {
            const Vec2 d{1.0, 1e-7 * i};
            segs.push_back({Vec2{0, static_cast<double>(i)}, Vec2{0, static_cast<double>(i)} + d});
        }
        const StickyReport rep = detect_sticky_segments(segs, 1e-6);
        CHECK(rep.verdict == StickyVerdict::Degenerate);
    }
}

TEST_CASE("inflection ray atlas") {
    SECTION("disk has an empty atlas") {
        const Domain disk = Domain::closed(
            AnalyticCurve::circle({0, 0}, 1.0, Orientation::Counterclockwise), {}, 1.0);
        const auto dec = decompose_boundary(disk);
        const InflectionAtlas atlas = inflection_ray_atlas(disk, dec, 5.0);
        CHECK(atlas.launches.empty());
        CHECK(atlas.segments.empty());
    }
    SECTION("wavy curve has two launches per inflection") {
        const Domain dom = Domain::closed(AnalyticCurve::polar_cos3(0.3), {}, 1.0);
        const auto dec = decompose_boundary(dom);
        const InflectionAtlas atlas = inflection_ray_atlas(dom, dec, 6.0);
        CHECK(atlas.launches.size() == 12);
        CHECK(!atlas.segments.empty());
        // segment endpoints lie on the boundary or at the launch point
        for (const auto& s : atlas.segments) {
            CHECK(dom.boundary_distance_estimate(s.a) < 1e-5 * dom.diameter());
            CHECK(dom.boundary_distance_estimate(s.b) < 1e-5 * dom.diameter());
        }
        // membership: a point far from every segment is not in the atlas
        CHECK_FALSE(atlas.contains({10.0, 10.0}, 1e-3));
        // reproducibility: the computation is pure
        const InflectionAtlas again = inflection_ray_atlas(dom, dec, 6.0);
        REQUIRE(again.segments.size() == atlas.segments.size());
        for (std::size_t i = 0; i < atlas.segments.size(); ++i) {
            CHECK((again.segments[i].a - atlas.segments[i].a).norm() == 0.0);
            CHECK((again.segments[i].b - atlas.segments[i].b).norm() == 0.0);
        }
    }
}

TEST_CASE("excluded-direction sampling") {
    SECTION("disk flags nothing") {
        const Domain disk = Domain::closed(
            AnalyticCurve::circle({0, 0}, 1.0, Orientation::Counterclockwise), {}, 1.0);
        const auto dec = decompose_boundary(disk);
        const ExcludedDirections ed =
            sample_excluded_directions(disk, dec, {0.2, 0.3}, 128, 4, 12.0);
        CHECK(ed.fraction == 0.0);
        CHECK(ed.measure_estimate == 0.0);
    }
    SECTION("annulus boundary point brackets the hole tangents") {
        const Domain ann = annulus();
        const auto dec = decompose_boundary(ann);
        double prev_fraction = 0.0;
        for (int g : {64, 256, 1024}) {
            const ExcludedDirections ed =
                sample_excluded_directions(ann, dec, {1.0, 0.0}, g, 3, 8.0);
            CHECK(ed.fraction > 0.0);
            CHECK(ed.fraction < 0.25);
            if (prev_fraction > 0.0) CHECK(ed.fraction <= prev_fraction / 2.0);
            prev_fraction = ed.fraction;
            // flagged directions concentrate near the two exact tangents
            for (double theta : ed.flagged_angles) {
                const double up = std::abs(std::remainder(theta - (kPi - std::asin(0.3)), 2 * kPi));
                const double dn = std::abs(std::remainder(theta - (kPi + std::asin(0.3)), 2 * kPi));
                CHECK(std::min(up, dn) < 2.0 * kPi / g + 0.05);
            }
        }
    }
}
