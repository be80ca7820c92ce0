#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "billiard/io.hpp"
#include "billiard/parallel.hpp"
#include "billiard/scene.hpp"

using namespace billiard;

TEST_CASE("scene parsing") {
    SECTION("disk scene builds one counterclockwise circle") {
        const SceneConfig cfg = parse_scene_text(
            "[domain]\nkind = disk\nradius = 1.0\nH = 2.5\n", "t");
        CHECK(cfg.domain.curve_count() == 1);
        CHECK(cfg.domain.H() == 2.5);
        CHECK(cfg.domain.curve(0).orientation() == Orientation::Counterclockwise);
        CHECK(cfg.domain.circle_data(0).is_circle);
    }
    SECTION("annulus with r-in > r-out is rejected") {
        CHECK_THROWS_AS(parse_scene_text(
                            "[domain]\nkind = annulus\nr-out = 0.3\nr-in = 1.0\nH = 1\n", "t"),
                        ValidationError);
    }
    SECTION("fourier curve evaluates to the supplied series") {
        const SceneConfig cfg = parse_scene_text(
            "[domain]\nkind = fourier\nH = 1\n"
            "[curve]\nrole = outer\na0 = [0.1, -0.2]\n"
            "cos1 = [1.5, 0]\nsin1 = [0, 1.1]\ncos2 = [0.05, 0.02]\nsin3 = [0.01, -0.03]\n",
            "t");
        // hand sum at tau = 0: a0 + cos coefficients
        const Vec2 expect{0.1 + 1.5 + 0.05, -0.2 + 0.0 + 0.02};
        CHECK((cfg.domain.curve(0).pos(0.0) - expect).norm() < 1e-14);
        // and at a generic angle
        const double tau = 0.83;
        Vec2 hand{0.1, -0.2};
        hand += Vec2{1.5 * std::cos(tau), 1.1 * std::sin(tau)};
        hand += Vec2{0.05 * std::cos(2 * tau), 0.02 * std::cos(2 * tau)};
        hand += Vec2{0.01 * std::sin(3 * tau), -0.03 * std::sin(3 * tau)};
        CHECK((cfg.domain.curve(0).pos(tau) - hand).norm() < 1e-14);
    }
    SECTION("unknown keys are rejected with a line anchor") {
        try {
            parse_scene_text("[domain]\nkind = disk\nradius = 1\nwobble = 3\n", "scene.txt");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("scene.txt:4") != std::string::npos);
            CHECK(std::string(e.what()).find("wobble") != std::string::npos);
        }
    }
    SECTION("unknown section rejected") {
        CHECK_THROWS_AS(parse_scene_text("[domain]\nkind = disk\nradius = 1\n[banana]\nx = 1\n",
                                         "t"),
                        ParseError);
    }
    SECTION("phase and trace sections round-trip") {
        const SceneConfig cfg = parse_scene_text(
            "[domain]\nkind = disk\nradius = 1\n"
            "[phase]\nx = [1, 0, 0]\nv = [-1, 0, 0]\nt = 3\n"
            "[trace]\ndirection = forward\neps-grazing = 1e-9\nbounce-cap = 500\n"
            "[run]\nseed = 42\n",
            "t");
        REQUIRE(cfg.phase.has_value());
        CHECK(cfg.phase->t == 3.0);
        CHECK(cfg.trace.direction == TraceDirection::Forward);
        CHECK(cfg.trace.eps_grazing == 1e-9);
        CHECK(cfg.trace.bounce_cap == 500);
        CHECK(cfg.seed == 42);
    }
    SECTION("sandbox arcs") {
        const SceneConfig cfg = parse_scene_text(
            "[domain]\nkind = sandbox\n[arc]\npoly = [0, 0, 0.5]\nrange = [-4, 4]\n", "t");
        CHECK(cfg.domain.is_sandbox());
        CHECK(cfg.domain.curve(0).is_poly_graph());
    }
}

TEST_CASE("csv formatting round-trips") {
    for (double v : {1.0 / 3.0, 1e-17, 3.141592653589793, -0.3, 1e300}) {
        const std::string s = fmt_full(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("deterministic output across thread counts") {
    // indexed slots make parallel sweeps order-independent
    const std::size_t n = 500;
    std::vector<double> a(n), b(n);
    parallel_for(n, 1, [&](std::size_t i) { a[i] = std::sin(0.1 * static_cast<double>(i)); });
    parallel_for(n, 7, [&](std::size_t i) { b[i] = std::sin(0.1 * static_cast<double>(i)); });
    std::ostringstream sa, sb;
    for (double v : a) sa << fmt_full(v) << "\n";
    for (double v : b) sb << fmt_full(v) << "\n";
    CHECK(sa.str() == sb.str());
}

TEST_CASE("manifest and svg writers run") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "billiard_io_test";
    fs::create_directories(dir);
    RunManifest man;
    man.command = "trace";
    man.scene_hash = fnv1a("[domain]\nkind = disk\n");
    man.options = {{"seed", "1"}};
    man.outputs = {"cycle.csv"};
    man.write(dir);
    std::ifstream in(dir / "manifest.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str().find("command = trace") != std::string::npos);
    CHECK(ss.str().find("output = cycle.csv") != std::string::npos);

    const Domain disk = Domain::closed(
        AnalyticCurve::circle({0, 0}, 1.0, Orientation::Counterclockwise), {}, 1.0);
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = 6.0;
    PhasePoint p;
    p.x = Vec3{1, 0, 0};
    p.v = Vec3{-1, 0, 1};
    const SpecularCycle cyc = trace_cycles(disk, p, opts);
    SvgScene svg(disk);
    svg.add_cycle(cyc);
    svg.add_marker({0, 0});
    svg.write(dir / "scene.svg");
    std::ifstream svgin(dir / "scene.svg");
    std::stringstream s2;
    s2 << svgin.rdbuf();
    CHECK(s2.str().find("<svg") != std::string::npos);
    CHECK(s2.str().find("polyline") != std::string::npos);
}
