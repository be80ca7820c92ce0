#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "billiard/domain.hpp"
#include "billiard/rng.hpp"
#include "billiard/trajectory.hpp"

using namespace billiard;

namespace {

constexpr double kPi = std::numbers::pi;

Domain unit_disk() {
    return Domain::closed(AnalyticCurve::circle({0, 0}, 1.0, Orientation::Counterclockwise), {}, 1.0);
}

Domain annulus(double r_out = 1.0, double r_in = 0.3) {
    return Domain::closed(
        AnalyticCurve::circle({0, 0}, r_out, Orientation::Counterclockwise),
        {AnalyticCurve::circle({0, 0}, r_in, Orientation::Clockwise)}, 1.0);
}

PhasePoint phase2(Vec2 x, Vec2 v, double t = 0.0, double x2 = 0.0, double v2 = 0.0) {
    PhasePoint p;
    p.x = Vec3(x, x2);
    p.v = Vec3(v, v2);
    p.t = t;
    return p;
}

// Chord-summing re-simulation used as the bounce-count oracle: walks the
// boundary with first_exit + reflect directly, never through trace_cycles.
long bounce_count_oracle(const Domain& dom, Vec2 x, Vec2 v, double L) {
    TraceOptions opts;
    double acc = 0.0;
    Vec2 pos = x, vel = v;
    for (long k = 1; k <= 100000; ++k) {
        const ExitHit hit = first_exit(dom, pos, vel, opts);
        acc += (hit.point - pos).norm();
        if (acc > L) return k;
        const Vec2 n = dom.curve(hit.curve_id).outward_normal(hit.tau);
        vel = reflect(vel, n);
        pos = hit.point;
    }
    return -1;
}

}  // namespace

TEST_CASE("first_exit on the disk") {
    const Domain disk = unit_disk();
    TraceOptions opts;
    SECTION("from the center") {
        const ExitHit hit = first_exit(disk, {0, 0}, {1, 0}, opts);
        CHECK(hit.time == Catch::Approx(1.0).margin(1e-12));
        CHECK(hit.point.x == Catch::Approx(1.0).margin(1e-12));
        CHECK(std::abs(hit.point.y) < 1e-12);
    }
    SECTION("from the boundary across the diameter") {
        const ExitHit hit = first_exit(disk, {1, 0}, {-1, 0}, opts);
        CHECK(hit.time == Catch::Approx(2.0).margin(1e-12));
        CHECK(hit.point.x == Catch::Approx(-1.0).margin(1e-12));
    }
    SECTION("boundary residual") {
        Rng rng(3);
        for (int i = 0; i < 200; ++i) {
            const double a = rng.uniform(0, 2 * kPi);
            const Vec2 x{0.3 * rng.uniform(-1, 1), 0.3 * rng.uniform(-1, 1)};
            const ExitHit hit = first_exit(disk, x, {std::cos(a), std::sin(a)}, opts);
            CHECK(std::abs(hit.point.norm() - 1.0) < 1e-11 * disk.diameter());
        }
    }
}

TEST_CASE("first_exit on the sandbox parabola") {
    // Backward ray from (1,1) along -(1,1) meets y = x^2/2 at the origin.
    const Domain dom = Domain::sandbox({AnalyticCurve::poly_graph({0, 0, 0.5}, -4.0, 4.0)});
    TraceOptions opts;
    const Vec2 dir = Vec2{-1, -1}.normalized();
    const ExitHit hit = first_exit(dom, {1, 1}, dir, opts);
    CHECK(hit.time == Catch::Approx(std::sqrt(2.0)).margin(1e-10));
    CHECK(std::abs(hit.point.x) < 1e-10);
    CHECK(std::abs(hit.point.y) < 1e-10);
}

TEST_CASE("reflect") {
    CHECK((reflect(Vec3{1, 0, -1}, Vec3{0, 0, -1}) - Vec3{1, 0, 1}).norm() < 1e-15);
    // tangential velocity is unchanged
    CHECK((reflect(Vec3{1, 2, 0}, Vec3{0, 0, 1}) - Vec3{1, 2, 0}).norm() < 1e-15);
    CHECK((reflect(Vec3{-1, 0, 0}, Vec3{1, 0, 0}) - Vec3{1, 0, 0}).norm() < 1e-15);
}

TEST_CASE("disk chord cycle rotates by a quarter turn") {
    const Domain disk = unit_disk();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 20.0;
    const SpecularCycle cyc = trace_cycles(disk, phase2({1, 0}, {-1, 1}), opts);
    REQUIRE(cyc.events.size() >= 3);
    const Vec2 expected[3] = {{0, 1}, {-1, 0}, {0, -1}};
    for (int k = 0; k < 3; ++k)
        CHECK((cyc.events[static_cast<std::size_t>(k)].x.cs() - expected[k]).norm() < 1e-9);
    for (const auto& ev : cyc.events) {
        CHECK(std::abs(ev.x.cs().norm() - 1.0) < 1e-10);
        CHECK(std::abs(ev.v_post.norm() - ev.v_pre.norm()) < 1e-12);
        const Vec2 n = disk.curve(0).outward_normal(ev.tau);
        const Vec3 n3{n.x, 0, n.y};
        CHECK((ev.v_post - reflect(ev.v_pre, n3)).norm() < 1e-12);
    }
}

TEST_CASE("annulus radial orbit is period two") {
    const Domain ann = annulus();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 10.0;
    const SpecularCycle cyc = trace_cycles(ann, phase2({1, 0}, {-1, 0}), opts);
    REQUIRE(cyc.events.size() >= 4);
    CHECK((cyc.events[0].x.cs() - Vec2{0.3, 0}).norm() < 1e-10);
    CHECK((cyc.events[1].x.cs() - Vec2{1.0, 0}).norm() < 1e-10);
    CHECK((cyc.events[2].x.cs() - Vec2{0.3, 0}).norm() < 1e-10);
}

TEST_CASE("tangent start on the disk stops immediately") {
    const Domain disk = unit_disk();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 10.0;
    const SpecularCycle cyc = trace_cycles(disk, phase2({1, 0}, {0, 1}), opts);
    CHECK(cyc.termination == Termination::ConvexGrazingStop);
    CHECK(cyc.events.empty());
}

TEST_CASE("grazing classification") {
    TraceOptions opts;
    SECTION("disk tangent phase is convex grazing") {
        const Domain disk = unit_disk();
        const auto dec = decompose_boundary(disk);
        CHECK(classify_grazing_at(disk, dec, 0, 0.0, Vec3{0, 0, 1}, opts) == GrazingClass::Convex);
    }
    SECTION("tangency on the annulus hole is concave grazing and passes through") {
        const Domain ann = annulus();
        const auto dec = decompose_boundary(ann);
        CHECK(classify_grazing_at(ann, dec, 1, 0.0, Vec3{0, 0, 1}, opts) == GrazingClass::Concave);
        TraceOptions fwd;
        fwd.direction = TraceDirection::Forward;
        fwd.horizon_length = 4.0;
        // launch from the outer circle along a tangent line of the hole
        const Vec2 x{1, 0};
        const double beta = std::acos(0.3);
        const Vec2 p{0.3 * std::cos(beta), 0.3 * std::sin(beta)};
        const SpecularCycle cyc = trace_cycles(ann, phase2(x, (p - x).normalized()), fwd);
        REQUIRE(!cyc.events.empty());
        CHECK(cyc.events[0].curve_id == 1);
        CHECK(cyc.events[0].grazing == GrazingClass::Concave);
        CHECK(cyc.events[0].incidence < 1e-10);
        CHECK(cyc.events.size() >= 2);  // continued straight through the tangency
    }
    SECTION("inflection tangencies on the wavy curve split by direction") {
        const Domain dom = Domain::closed(AnalyticCurve::polar_cos3(0.3), {}, 1.0);
        const auto dec = decompose_boundary(dom);
        const auto& ip = dec.per_curve[0].inflections[0];
        const Vec2 tangent = dom.curve(0).unit_tangent(ip.tau);
        const GrazingClass a =
            classify_grazing_at(dom, dec, 0, ip.tau, Vec3{tangent.x, 0, tangent.y}, opts);
        const GrazingClass b =
            classify_grazing_at(dom, dec, 0, ip.tau, Vec3{-tangent.x, 0, -tangent.y}, opts);
        const bool one_each = (a == GrazingClass::InflectionOutward &&
                               b == GrazingClass::InflectionInward) ||
                              (a == GrazingClass::InflectionInward &&
                               b == GrazingClass::InflectionOutward);
        CHECK(one_each);
    }
}

TEST_CASE("bounce counts") {
    const Domain disk = unit_disk();
    const Domain ann = annulus();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    SECTION("L = 0 counts the first chord") {
        CHECK(bounce_count(disk, phase2({0.2, 0.1}, {0.3, 0.7}), 0.0, opts) == 1);
    }
    SECTION("disk diameter orbit, L = 10") {
        CHECK(bounce_count(disk, phase2({1, 0}, {-1, 0}), 10.0, opts) == 6);
        CHECK(bounce_count_oracle(disk, {1, 0}, {-1, 0}, 10.0) == 6);
    }
    SECTION("annulus radial orbit, L = 2") {
        CHECK(bounce_count(ann, phase2({1, 0}, {-1, 0}), 2.0, opts) == 3);
        CHECK(bounce_count_oracle(ann, {1, 0}, {-1, 0}, 2.0) == 3);
    }
    SECTION("random phases agree with the re-simulation oracle") {
        Rng rng(17);
        for (int i = 0; i < 200; ++i) {
            Vec2 x{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
            if (!ann.contains(x) || ann.boundary_distance_estimate(x) < 1e-3) { --i; continue; }
            const double a = rng.uniform(0, 2 * kPi);
            const Vec2 v{std::cos(a), std::sin(a)};
            const double L = rng.uniform(0.5, 6.0);
            CHECK(bounce_count(ann, phase2(x, v), L, opts) == bounce_count_oracle(ann, x, v, L));
        }
    }
}

TEST_CASE("axial lift") {
    CHECK(lift_cylinder_axial(0.5, 1.0, 1.0, 0.25, 1.0) == Catch::Approx(0.75));  // t-s = 0.75
    CHECK(lift_cylinder_axial(0.3, 0.0, 5.0, 1.0, 1.0) == Catch::Approx(0.3));    // v2 = 0
}

TEST_CASE("speed conservation over many bounces") {
    const Domain disk = unit_disk();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 2.0e4;
    const Vec2 v0 = Vec2{-1, 0.61}.normalized() * 1.3;
    const SpecularCycle cyc = trace_cycles(disk, phase2({1, 0}, v0, 0.0, 0.0, 0.7), opts);
    REQUIRE(cyc.events.size() >= 10000);
    for (std::size_t k = 0; k < cyc.events.size(); k += 97)
        CHECK(std::abs(cyc.events[k].v_post.norm() - cyc.origin.v.norm()) < 1e-12);
    for (std::size_t k = 0; k < cyc.events.size(); k += 997)
        CHECK(cyc.events[k].v_post.x2 == cyc.origin.v.x2);  // |v2| untouched by bounces
}

TEST_CASE("circle incidence is constant along a disk cycle") {
    const Domain disk = unit_disk();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 200.0;
    const double theta = 0.37;  // angle from the tangent at launch
    // from (1,0) the tangent is (0,1); rotate by theta toward the interior
    const Vec2 v{std::cos(kPi / 2 + theta), std::sin(kPi / 2 + theta)};
    const SpecularCycle cyc = trace_cycles(disk, phase2({1, 0}, v), opts);
    REQUIRE(cyc.events.size() > 50);
    const double expected = std::abs(std::sin(theta));
    for (const auto& ev : cyc.events)
        CHECK(ev.incidence == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("chord midpoints stay inside the domain") {
    const Domain ann = annulus();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 15.0;
    Rng rng(29);
    for (int i = 0; i < 1000; ++i) {
        Vec2 x{rng.uniform(-0.95, 0.95), rng.uniform(-0.95, 0.95)};
        if (!ann.contains(x) || ann.boundary_distance_estimate(x) < 1e-3) { --i; continue; }
        const double a = rng.uniform(0, 2 * kPi);
        const SpecularCycle cyc = trace_cycles(ann, phase2(x, {std::cos(a), std::sin(a)}), opts);
        Vec2 prev = x;
        for (const auto& ev : cyc.events) {
            const Vec2 mid = (prev + ev.x.cs()) / 2.0;
            CHECK(ann.contains(mid, 1e-9 * ann.diameter()));
            prev = ev.x.cs();
        }
    }
}

TEST_CASE("time reversibility") {
    const Domain ann = annulus();
    TraceOptions opts;  // backward
    opts.horizon_time = 8.0;
    Rng rng(31);
    int checked = 0;
    for (int i = 0; i < 80 && checked < 40; ++i) {
        Vec2 x{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
        const double a = rng.uniform(0, 2 * kPi);
        if (!ann.contains(x) || ann.boundary_distance_estimate(x) < 1e-2) continue;
        const PhasePoint origin = phase2(x, {std::cos(a), std::sin(a)}, 10.0);
        const SpecularCycle cyc = trace_cycles(ann, origin, opts);
        if (cyc.events.size() < 2) continue;
        const auto& ev = cyc.events[1];
        if (ev.incidence < 1e-3) continue;
        // Forward from the bounce with the pre-reflection (chord) velocity.
        PhasePoint back;
        back.t = ev.t;
        back.x = ev.x;
        back.v = ev.v_pre;
        const PhasePoint recovered = specular_flow(ann, back, origin.t);
        CHECK((recovered.x.cs() - origin.x.cs()).norm() < 1e-8);
        CHECK((recovered.v.cs() - origin.v.cs()).norm() < 1e-8);
        ++checked;
    }
    CHECK(checked >= 20);
}

TEST_CASE("local continuity of non-grazing cycles") {
    const Domain ann = annulus();
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 6.0;
    const PhasePoint base = phase2({0.7, 0.1}, {-0.8, 0.43});
    const SpecularCycle ref = trace_cycles(ann, base, opts);
    REQUIRE(ref.events.size() >= 3);
    Rng rng(37);
    const double delta = 1e-6;
    for (int i = 0; i < 20; ++i) {
        PhasePoint p = base;
        p.x.x1 += delta * rng.uniform(-1, 1);
        p.x.x3 += delta * rng.uniform(-1, 1);
        p.v.x1 += delta * rng.uniform(-1, 1);
        p.v.x3 += delta * rng.uniform(-1, 1);
        const SpecularCycle got = trace_cycles(ann, p, opts);
        REQUIRE(got.events.size() >= 3);
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK((got.events[k].x.cs() - ref.events[k].x.cs()).norm() < 200 * delta);
            CHECK((got.events[k].v_post.cs() - ref.events[k].v_post.cs()).norm() < 200 * delta);
        }
    }
}

TEST_CASE("inflection chord monotonicity on the quartic sandbox graph") {
    // y = (1 - s)^4 / 12: the curvature decreases to zero at s = 1, the
    // flattening profile behind the chord-growth bound.
    const Domain dom = Domain::sandbox(
        {AnalyticCurve::poly_graph({1.0 / 12, -1.0 / 3, 0.5, -1.0 / 3, 1.0 / 12}, -1.0, 2.5)});
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 40.0;
    opts.bounce_cap = 4000;
    const auto launch = [&](double s0, double tilt) {
        const auto& c = dom.curve(0);
        const Vec2 t = c.unit_tangent(s0);
        const Vec2 n = c.outward_normal(s0);
        return phase2(c.pos(s0), (t - tilt * n).normalized());  // -n points into the region above
    };
    int runs_checked = 0;
    for (double tilt : {0.03, 0.06, 0.1}) {
        const SpecularCycle cyc = trace_cycles(dom, launch(0.0, tilt), opts);
        std::vector<double> chord;
        Vec2 prev = cyc.origin.x.cs();
        for (const auto& ev : cyc.events) {
            chord.push_back((ev.x.cs() - prev).norm());
            prev = ev.x.cs();
        }
        if (chord.size() >= 5) {
            ++runs_checked;
            for (std::size_t i = 0; i + 1 < chord.size(); ++i)
                if (cyc.events[i].x.x1 < 1.0 && cyc.events[i + 1].x.x1 < 1.0)
                    CHECK(chord[i] <= chord[i + 1] + 1e-12);
        }
    }
    CHECK(runs_checked >= 2);
}

TEST_CASE("grazing margin on disk orbits") {
    const Domain disk = unit_disk();
    const auto dec = decompose_boundary(disk);
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 12.0;
    const SpecularCycle diam = trace_cycles(disk, phase2({1, 0}, {-2, 0}), opts);
    const auto [min_inc, min_di] = grazing_margin(disk, diam, dec);
    CHECK(min_inc == Catch::Approx(2.0).margin(1e-10));  // normal hits at speed 2
    CHECK(min_di >= min_inc);                             // no inflection set on the disk
}

TEST_CASE("error paths") {
    SECTION("sandbox ray that escapes reports no intersection") {
        const Domain dom = Domain::sandbox({AnalyticCurve::poly_graph({0, 0, 0.5}, -4.0, 4.0)});
        TraceOptions opts;
        CHECK_THROWS_AS(first_exit(dom, {0, 2}, {0, 1}, opts), NoIntersection);
    }
    SECTION("bounce cap reported when neither stop rule fires") {
        const Domain disk = unit_disk();
        TraceOptions opts;
        opts.direction = TraceDirection::Forward;
        opts.bounce_cap = 3;
        CHECK_THROWS_AS(bounce_count(disk, phase2({1, 0}, {-1, 0}), 1e6, opts),
                        BounceCapExceeded);
        const SpecularCycle cyc = trace_cycles(disk, phase2({1, 0}, {-1, 0}), opts);
        CHECK(cyc.termination == Termination::BounceCap);
        CHECK(cyc.events.size() == 3);
    }
    SECTION("speed band is enforced") {
        const Domain disk = unit_disk();
        TraceOptions opts;
        opts.speed_min = 0.5;
        opts.speed_max = 2.0;
        CHECK_THROWS_AS(trace_cycles(disk, phase2({0, 0}, {0.1, 0.0}), opts), SpeedOutOfBand);
        CHECK_THROWS_AS(trace_cycles(disk, phase2({0, 0}, {5.0, 0.0}), opts), SpeedOutOfBand);
    }
    SECTION("zero cross-section velocity is rejected") {
        const Domain disk = unit_disk();
        TraceOptions opts;
        CHECK_THROWS_AS(first_exit(disk, {0, 0}, {0, 0}, opts), ValidationError);
    }
}

TEST_CASE("closed curves evaluate periodically") {
    const auto curves = {AnalyticCurve::polar_cos3(0.3),
                         AnalyticCurve::ellipse({0.2, -0.1}, 2.0, 1.0,
                                                Orientation::Counterclockwise)};
    for (const auto& c : curves) {
        CHECK((c.pos(0.0) - c.pos(2 * kPi)).norm() < 1e-12);
        CHECK((c.d1(0.3) - c.d1(0.3 + 2 * kPi)).norm() < 1e-12);
        CHECK(c.wrap(2 * kPi + 0.25) == Catch::Approx(0.25));
    }
}
