// Command-line front end: scene parsing, command dispatch, CSV/SVG emission,
// and a deterministic run manifest per invocation.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "billiard/grazing.hpp"
#include "billiard/io.hpp"
#include "billiard/jacobians.hpp"
#include "billiard/kinetic.hpp"
#include "billiard/parallel.hpp"
#include "billiard/rng.hpp"
#include "billiard/scene.hpp"

namespace fs = std::filesystem;
using namespace billiard;

namespace {

constexpr double kPi = std::numbers::pi;

struct Common {
    std::string scene_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;  // 0: use the scene's seed
    std::optional<double> horizon_time, horizon_length;
    std::optional<double> eps_grazing;
    std::optional<long> bounce_cap;
    std::string grid = "16x16";
    int threads = 0;
    bool svg = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_scene = true) {
    auto* opt = cmd->add_option("--scene", c.scene_path, "scene file path");
    if (needs_scene) opt->required();
    cmd->add_option("--out", c.out_dir, "output directory");
    cmd->add_option("--seed", c.seed, "RNG seed (overrides the scene)");
    cmd->add_option("--horizon-time", c.horizon_time, "trace horizon in time");
    cmd->add_option("--horizon-length", c.horizon_length, "trace horizon in path length");
    cmd->add_option("--eps-grazing", c.eps_grazing, "relative grazing tolerance");
    cmd->add_option("--bounce-cap", c.bounce_cap, "bounce cap");
    cmd->add_option("--grid", c.grid, "sweep grid, NxM");
    cmd->add_option("--threads", c.threads, "worker threads (BILLIARD_THREADS fallback)");
    cmd->add_flag("--svg", c.svg, "emit an SVG overlay");
}

struct Ctx {
    SceneConfig scene;
    Common common;
    fs::path out;
    RunManifest manifest;
    std::chrono::steady_clock::time_point start;
};

Ctx make_ctx(const Common& c, const std::string& command) {
    SceneConfig scene =
        c.scene_path.empty()
            ? parse_scene_text("[domain]\nkind = disk\nradius = 1\nH = 1\n", "<builtin>")
            : parse_scene(c.scene_path);
    Ctx ctx{std::move(scene), c, fs::path(c.out_dir), {}, std::chrono::steady_clock::now()};
    if (c.seed) ctx.scene.seed = c.seed;
    if (c.horizon_time) ctx.scene.trace.horizon_time = c.horizon_time;
    if (c.horizon_length) ctx.scene.trace.horizon_length = c.horizon_length;
    if (c.eps_grazing) ctx.scene.trace.eps_grazing = *c.eps_grazing;
    if (c.bounce_cap) ctx.scene.trace.bounce_cap = *c.bounce_cap;
    fs::create_directories(ctx.out);
    ctx.manifest.command = command;
    ctx.manifest.scene_hash = fnv1a(ctx.scene.source_text);
    ctx.manifest.options = {
        {"scene", c.scene_path},
        {"seed", std::to_string(ctx.scene.seed)},
        {"grid", c.grid},
        {"threads", std::to_string(resolve_threads(c.threads))},
    };
    if (ctx.scene.trace.horizon_time)
        ctx.manifest.options.push_back({"horizon-time", fmt_full(*ctx.scene.trace.horizon_time)});
    if (ctx.scene.trace.horizon_length)
        ctx.manifest.options.push_back({"horizon-length", fmt_full(*ctx.scene.trace.horizon_length)});
    ctx.manifest.options.push_back({"eps-grazing", fmt_full(ctx.scene.trace.eps_grazing)});
    ctx.manifest.options.push_back({"bounce-cap", std::to_string(ctx.scene.trace.bounce_cap)});
    return ctx;
}

void finish(Ctx& ctx) {
    ctx.manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
    ctx.manifest.write(ctx.out);
}

std::pair<int, int> parse_grid(const std::string& g) {
    const auto x = g.find('x');
    if (x == std::string::npos) throw ParseError("grid must be NxM");
    return {std::stoi(g.substr(0, x)), std::stoi(g.substr(x + 1))};
}

PhasePoint require_phase(const SceneConfig& scene) {
    if (!scene.phase) throw ParseError("this command needs a [phase] section in the scene");
    return *scene.phase;
}

// Deterministic non-grazing backward cycles for derivative sweeps.
std::vector<SpecularCycle> sample_cycles(const SceneConfig& scene, int want, Rng& rng,
                                         int min_events) {
    std::vector<SpecularCycle> out;
    const Domain& dom = scene.domain;
    TraceOptions opts = scene.trace;
    opts.direction = TraceDirection::Backward;
    opts.horizon_time.reset();
    opts.horizon_length = 6.0 * dom.diameter();
    opts.bounce_cap = min_events + 64;
    const Vec2 lo = dom.bbox_lo(), hi = dom.bbox_hi();
    for (int guard = 0; guard < want * 200 && static_cast<int>(out.size()) < want; ++guard) {
        const Vec2 x{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
        if (!dom.contains(x) || dom.boundary_distance_estimate(x) < 0.02 * dom.diameter())
            continue;
        const double a = rng.uniform(0, 2 * kPi);
        const double sp = rng.uniform(0.5, 2.0);
        PhasePoint p;
        p.x = Vec3(x, 0.0);
        p.v = Vec3(Vec2{sp * std::cos(a), sp * std::sin(a)}, 0.0);
        p.t = 10.0;
        try {
            SpecularCycle cyc = trace_cycles(dom, p, opts);
            if (static_cast<int>(cyc.events.size()) < min_events) continue;
            bool clean = true;
            for (int k = 0; k < min_events; ++k) {
                const auto& ev = cyc.events[static_cast<std::size_t>(k)];
                if (ev.incidence < 0.15 * ev.v_post.cs().norm()) clean = false;
            }
            if (clean) out.push_back(std::move(cyc));
        } catch (const Error&) {
        }
    }
    return out;
}

// -------------------------------------------------------------------- classify

int cmd_classify(const Common& c) {
    Ctx ctx = make_ctx(c, "classify");
    const auto dec = decompose_boundary(ctx.scene.domain, ctx.scene.kappa_tol);
    CsvWriter csv(ctx.out / "decomposition.csv");
    csv.header({"curve", "piece", "tau_lo", "tau_hi", "tag"});
    for (std::size_t cid = 0; cid < dec.per_curve.size(); ++cid) {
        const auto& d = dec.per_curve[cid];
        for (const auto& iv : d.concave)
            csv.line({std::to_string(cid), "concave", fmt_full(iv.first), fmt_full(iv.second), ""});
        for (const auto& iv : d.convex)
            csv.line({std::to_string(cid), "convex", fmt_full(iv.first), fmt_full(iv.second), ""});
        for (const auto& ip : d.inflections)
            csv.line({std::to_string(cid), "inflection", fmt_full(ip.tau), fmt_full(ip.tau),
                      ip.sign == InflectionSign::Plus ? "I+" : "I-"});
        std::cout << "curve " << cid << ": " << d.concave.size() << " concave, "
                  << d.convex.size() << " convex, " << d.inflections.size() << " inflections\n";
    }
    ctx.manifest.outputs.push_back("decomposition.csv");
    finish(ctx);
    return 0;
}

// ----------------------------------------------------------------------- trace

int cmd_trace(const Common& c) {
    Ctx ctx = make_ctx(c, "trace");
    const PhasePoint phase = require_phase(ctx.scene);
    TraceOptions opts = ctx.scene.trace;
    if (!opts.horizon_time && !opts.horizon_length)
        opts.horizon_length = 20.0 * ctx.scene.domain.diameter();
    const SpecularCycle cyc = trace_cycles(ctx.scene.domain, phase, opts);
    CsvWriter csv(ctx.out / "cycle.csv");
    csv.header({"k", "t", "x1", "x2", "x3", "v1", "v2", "v3", "incidence", "class", "curve_id",
                "tau"});
    for (const auto& ev : cyc.events)
        csv.line({std::to_string(ev.index), fmt_full(ev.t), fmt_full(ev.x.x1), fmt_full(ev.x.x2),
                  fmt_full(ev.x.x3), fmt_full(ev.v_post.x1), fmt_full(ev.v_post.x2),
                  fmt_full(ev.v_post.x3), fmt_full(ev.incidence), to_string(ev.grazing),
                  std::to_string(ev.curve_id), fmt_full(ev.tau)});
    std::cout << "bounces: " << cyc.events.size() << ", termination: "
              << to_string(cyc.termination) << ", path length: " << cyc.path_length << "\n";
    ctx.manifest.outputs.push_back("cycle.csv");
    if (c.svg) {
        SvgScene svg(ctx.scene.domain);
        svg.add_cycle(cyc);
        svg.write(ctx.out / "cycle.svg");
        ctx.manifest.outputs.push_back("cycle.svg");
    }
    finish(ctx);
    return 0;
}

// ----------------------------------------------------------------------- count

int cmd_count(const Common& c, double L) {
    Ctx ctx = make_ctx(c, "count");
    const auto [nx, nd] = parse_grid(c.grid);
    const Domain& dom = ctx.scene.domain;
    TraceOptions opts = ctx.scene.trace;
    opts.direction = TraceDirection::Backward;
    CsvWriter csv(ctx.out / "counts.csv");
    csv.header({"x1", "x3", "theta", "count"});
    const auto dec = decompose_boundary(dom, ctx.scene.kappa_tol);
    const Vec2 lo = dom.bbox_lo(), hi = dom.bbox_hi();
    Rng rng(ctx.scene.seed);
    int emitted = 0;
    for (int i = 0; i < nx && emitted < nx; ++i) {
        const Vec2 x{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
        if (!dom.contains(x) || dom.boundary_distance_estimate(x) < 0.02 * dom.diameter()) {
            --i;
            continue;
        }
        ++emitted;
        for (int j = 0; j < nd; ++j) {
            const double theta = 2 * kPi * j / nd;
            PhasePoint p;
            p.x = Vec3(x, 0.0);
            p.v = Vec3(Vec2{std::cos(theta), std::sin(theta)}, 0.0);
            p.t = 0.0;
            long n = -1;
            try {
                n = bounce_count(dom, p, L, opts, &dec);
            } catch (const Error&) {
            }
            csv.line({fmt_full(x.x), fmt_full(x.y), fmt_full(theta), std::to_string(n)});
        }
    }
    ctx.manifest.outputs.push_back("counts.csv");
    finish(ctx);
    return 0;
}

// ---------------------------------------------------------------------- sticky

int cmd_sticky_build(const Common& c, double delta_max, int samples, double x0) {
    Ctx ctx = make_ctx(c, "sticky build");
    const StickyExample ex = build_sticky_example(delta_max, samples, x0);
    CsvWriter csv(ctx.out / "sticky_arc.csv");
    csv.header({"delta", "X", "Y", "slope"});
    for (const auto& s : ex.arc)
        csv.line({fmt_full(s.delta), fmt_full(s.point.x), fmt_full(s.point.y), fmt_full(s.slope)});
    std::cout << "arc samples: " << ex.arc.size() << ", delta*(" << fmt_full(delta_max)
              << ") = " << fmt_full(sticky_delta_star(delta_max))
              << ", rk4 deviation = " << fmt_full(ex.rk4_max_deviation) << "\n";
    ctx.manifest.outputs.push_back("sticky_arc.csv");
    if (c.svg) {
        SvgScene svg(ex.sandbox);
        svg.add_marker(ex.focus);
        svg.write(ctx.out / "sticky_scene.svg");
        ctx.manifest.outputs.push_back("sticky_scene.svg");
    }
    finish(ctx);
    return 0;
}

int cmd_sticky_detect(const Common& c, int curve_id, int grid_size, double speed, int sign,
                      int k, bool builtin_arc) {
    Ctx ctx = make_ctx(c, "sticky detect");
    Domain dom = ctx.scene.domain;
    if (builtin_arc) dom = build_sticky_example(0.05, 200, -1.0).sandbox;
    const auto dec = decompose_boundary(dom, ctx.scene.kappa_tol);
    // default: first curve carrying a concave interval
    if (curve_id < 0) {
        for (int id = 0; id < dom.curve_count(); ++id)
            if (!dec.per_curve[static_cast<std::size_t>(id)].concave.empty()) {
                curve_id = id;
                break;
            }
    }
    if (curve_id < 0) throw ValidationError("no concave interval in the scene");
    const auto& intervals = dec.per_curve[static_cast<std::size_t>(curve_id)].concave;
    if (intervals.empty()) throw ValidationError("selected curve has no concave interval");
    const double tol = ctx.scene.sticky_tol ? *ctx.scene.sticky_tol : 1e-6 * dom.diameter();
    const double horizon = (c.horizon_length && *c.horizon_length > 0)
                               ? *c.horizon_length
                               : 6.0 * dom.diameter();
    CsvWriter csv(ctx.out / "sticky_reports.csv");
    csv.header({"curve", "interval", "k", "x", "y", "max_residual", "verdict", "family"});
    int exit_code = 0;
    std::optional<SvgScene> svg;
    if (c.svg) svg.emplace(dom);
    for (std::size_t ii = 0; ii < intervals.size(); ++ii) {
        const GrazingFamily fam = trace_grazing_family(dom, dec, curve_id, intervals[ii],
                                                       grid_size, speed, sign, horizon,
                                                       ctx.scene.trace);
        StickyReport rep;
        try {
            rep = detect_sticky(fam, k, tol);
        } catch (const Error& e) {
            std::cerr << "error: interval " << ii << ": " << e.what() << "\n";
            exit_code = 2;
            continue;
        }
        csv.line({std::to_string(curve_id), std::to_string(ii), std::to_string(k),
                  fmt_full(rep.point.x), fmt_full(rep.point.y), fmt_full(rep.max_residual),
                  to_string(rep.verdict), std::to_string(rep.family_size)});
        std::cout << "interval " << ii << ": " << to_string(rep.verdict) << " at ("
                  << rep.point.x << ", " << rep.point.y << "), residual " << rep.max_residual
                  << "\n";
        if (svg) {
            for (const auto& cyc : fam.cycles) svg->add_cycle(cyc, "#88aadd");
            if (rep.verdict == StickyVerdict::Sticky) svg->add_marker(rep.point);
        }
    }
    if (svg) {
        svg->write(ctx.out / "sticky_family.svg");
        ctx.manifest.outputs.push_back("sticky_family.svg");
    }
    ctx.manifest.outputs.push_back("sticky_reports.csv");
    finish(ctx);
    return exit_code;
}

// ----------------------------------------------------------------------- atlas

int cmd_atlas(const Common& c, double horizon) {
    Ctx ctx = make_ctx(c, "atlas");
    const auto dec = decompose_boundary(ctx.scene.domain, ctx.scene.kappa_tol);
    const InflectionAtlas atlas =
        inflection_ray_atlas(ctx.scene.domain, dec, horizon, ctx.scene.trace);
    CsvWriter csv(ctx.out / "atlas.csv");
    csv.header({"ax", "ay", "bx", "by", "dirx", "diry", "launch"});
    for (const auto& s : atlas.segments)
        csv.line({fmt_full(s.a.x), fmt_full(s.a.y), fmt_full(s.b.x), fmt_full(s.b.y),
                  fmt_full(s.dir.x), fmt_full(s.dir.y), std::to_string(s.inflection)});
    std::cout << "launches: " << atlas.launches.size() << ", segments: " << atlas.segments.size()
              << "\n";
    ctx.manifest.outputs.push_back("atlas.csv");
    if (c.svg) {
        SvgScene svg(ctx.scene.domain);
        for (const auto& s : atlas.segments) svg.add_segment(s.a, s.b, "#9955cc");
        for (const auto& l : atlas.launches) svg.add_marker(l.x, "#552299", 4);
        svg.write(ctx.out / "atlas.svg");
        ctx.manifest.outputs.push_back("atlas.svg");
    }
    finish(ctx);
    return 0;
}

// -------------------------------------------------------------------- jacobian

int cmd_jacobian_check(const Common& c, int bounces) {
    Ctx ctx = make_ctx(c, "jacobian check");
    Rng rng(ctx.scene.seed);
    const auto cycles = sample_cycles(ctx.scene, std::max(1, bounces / 2), rng, 3);
    CsvWriter csv(ctx.out / "jacobian_check.csv");
    csv.header({"cycle", "k", "name", "analytic", "fd", "residual"});
    JacobianOptions jopts;
    jopts.trace = ctx.scene.trace;
    double worst = 0.0;
    int done = 0;
    struct Row {
        std::size_t cyc, k;
        JacobianReport rep;
        bool ok = false;
    };
    std::vector<Row> rows;
    for (std::size_t ci = 0; ci < cycles.size(); ++ci)
        for (std::size_t k = 0; k + 1 < std::min<std::size_t>(cycles[ci].events.size(), 3); ++k)
            rows.push_back({ci, k, {}, false});
    parallel_for(rows.size(), resolve_threads(c.threads), [&](std::size_t i) {
        try {
            rows[i].rep = bounce_jacobian(ctx.scene.domain, cycles[rows[i].cyc], rows[i].k, jopts);
            rows[i].ok = true;
        } catch (const Error&) {
        }
    });
    for (const Row& r : rows) {
        if (!r.ok || done >= bounces) continue;
        ++done;
        for (const auto& e : r.rep.entries) {
            csv.line({std::to_string(r.cyc), std::to_string(r.k), e.name, fmt_full(e.analytic),
                      fmt_full(e.fd), fmt_full(e.residual)});
            worst = std::max(worst, e.residual);
        }
    }
    std::cout << "bounces checked: " << done << ", max relative residual: " << worst << "\n";
    ctx.manifest.outputs.push_back("jacobian_check.csv");
    finish(ctx);
    return worst < 1e-5 && done > 0 ? 0 : 2;
}

int cmd_jacobian_det(const Common& c, int bounces) {
    Ctx ctx = make_ctx(c, "jacobian det");
    Rng rng(ctx.scene.seed);
    const auto cycles = sample_cycles(ctx.scene, std::max(1, bounces / 2), rng, 3);
    CsvWriter csv(ctx.out / "jacobian_det.csv");
    csv.header({"cycle", "k", "analytic", "formula", "fd"});
    JacobianOptions jopts;
    jopts.trace = ctx.scene.trace;
    bool ok = true;
    int done = 0;
    for (std::size_t ci = 0; ci < cycles.size() && done < bounces; ++ci)
        for (std::size_t k = 0; k + 1 < std::min<std::size_t>(cycles[ci].events.size(), 3); ++k) {
            try {
                const DetCheck dc = det_check(ctx.scene.domain, cycles[ci], k, jopts);
                ++done;
                csv.line({std::to_string(ci), std::to_string(k), fmt_full(dc.analytic),
                          fmt_full(dc.formula), fmt_full(dc.fd)});
                if (std::abs(dc.analytic - dc.formula) > 1e-8 * std::max(1.0, dc.formula) ||
                    std::abs(dc.analytic - dc.fd) > 1e-6 * std::max(1.0, dc.analytic))
                    ok = false;
            } catch (const Error&) {
            }
        }
    std::cout << "determinants checked: " << done << (ok ? " (all within tolerance)" : " (FAILED)")
              << "\n";
    ctx.manifest.outputs.push_back("jacobian_det.csv");
    finish(ctx);
    return ok && done > 0 ? 0 : 2;
}

int cmd_jacobian_chain(const Common& c, int length) {
    Ctx ctx = make_ctx(c, "jacobian chain");
    Rng rng(ctx.scene.seed);
    const auto cycles = sample_cycles(ctx.scene, 8, rng, length + 1);
    CsvWriter csv(ctx.out / "jacobian_chain.csv");
    csv.header({"cycle", "k", "product_formula", "product_fd", "closed_form"});
    JacobianOptions jopts;
    jopts.trace = ctx.scene.trace;
    bool ok = true;
    int done = 0;
    for (std::size_t ci = 0; ci < cycles.size(); ++ci) {
        try {
            const ChainDetCheck ch =
                chain_det_check(ctx.scene.domain, cycles[ci], static_cast<std::size_t>(length), jopts);
            ++done;
            csv.line({std::to_string(ci), std::to_string(length), fmt_full(ch.product_formula),
                      fmt_full(ch.product_fd), fmt_full(ch.closed_form)});
            if (std::abs(ch.product_formula - ch.closed_form) >
                1e-10 * std::max(1.0, std::abs(ch.closed_form)))
                ok = false;
        } catch (const Error&) {
        }
    }
    std::cout << "chains checked: " << done << (ok ? " (telescoping holds)" : " (FAILED)") << "\n";
    ctx.manifest.outputs.push_back("jacobian_chain.csv");
    finish(ctx);
    return ok && done > 0 ? 0 : 2;
}

// -------------------------------------------------------------------- cov-check

int cmd_cov_check(const Common& c, int sweeps) {
    Ctx ctx = make_ctx(c, "cov-check");
    Rng rng(ctx.scene.seed);
    const Domain& dom = ctx.scene.domain;
    CovExclusions ex;
    JacobianOptions jopts;
    jopts.trace = ctx.scene.trace;
    CsvWriter csv(ctx.out / "cov_check.csv");
    csv.header({"u1", "u3", "u2", "s", "sprime", "det_fd", "det_analytic", "rel_err", "pass",
                "violations"});
    int admissible = 0, agreed = 0, windows = 0;
    const double t = 10.0;
    const Vec2 blo = dom.bbox_lo(), bhi = dom.bbox_hi();
    for (int i = 0; i < sweeps; ++i) {
        const Vec2 x{rng.uniform(blo.x, bhi.x), rng.uniform(blo.y, bhi.y)};
        if (!dom.contains(x) || dom.boundary_distance_estimate(x) < 0.05 * dom.diameter()) continue;
        const double a0 = rng.uniform(0, 2 * kPi);
        const Vec3 v{std::cos(a0), 0.4, std::sin(a0)};
        const double s = rng.uniform(t - 1.8, t - 0.3);
        const double a1 = rng.uniform(0, 2 * kPi);
        const Vec3 u{std::cos(a1), rng.uniform(0.2, 0.8), std::sin(a1)};
        const double sp = rng.uniform(s - 1.5, s - 0.05);
        try {
            const CovCheck cv =
                change_of_variable_check(dom, t, Vec3(x, 0.0), v, s, u, sp, ex, jopts);
            std::string viol;
            for (const auto& w : cv.violated) viol += (viol.empty() ? "" : ";") + w;
            csv.line({fmt_full(u.x1), fmt_full(u.x3), fmt_full(u.x2), fmt_full(s), fmt_full(sp),
                      fmt_full(cv.det_fd), fmt_full(cv.det_analytic), fmt_full(cv.rel_err),
                      cv.pass ? "1" : "0", viol});
            if (cv.violated.empty()) {
                ++admissible;
                if (cv.rel_err < 1e-5 && std::abs(cv.det_fd) > jopts.det_floor) ++agreed;
            } else {
                ++windows;
            }
        } catch (const Error&) {
        }
    }
    std::cout << "admissible pairs: " << admissible << ", agreeing: " << agreed
              << ", excluded by windows: " << windows << "\n";
    ctx.manifest.outputs.push_back("cov_check.csv");
    finish(ctx);
    return (admissible > 0 && agreed == admissible) ? 0 : 2;
}

// ---------------------------------------------------------------------- kinetic

int cmd_kinetic_conserve(const Common& c, std::size_t particles, long min_bounces) {
    Ctx ctx = make_ctx(c, "kinetic conserve");
    const Domain& dom = ctx.scene.domain;
    const auto axis = axis_symmetry_test(dom, 1e-8);
    const ParticleEnsemble ens = ParticleEnsemble::maxwellian(dom, particles, ctx.scene.seed);
    const auto [after, rep] = transport_ensemble(dom, ens, 1.0, min_bounces, axis);
    CsvWriter csv(ctx.out / "conservation.csv");
    csv.header({"quantity", "initial", "final", "relative_drift"});
    csv.line({"mass", fmt_full(rep.mass0), fmt_full(rep.mass1), fmt_full(rep.mass_drift)});
    csv.line({"energy", fmt_full(rep.energy0), fmt_full(rep.energy1), fmt_full(rep.energy_drift)});
    if (rep.has_axis)
        csv.line({"angular", fmt_full(rep.angular0), fmt_full(rep.angular1),
                  fmt_full(rep.angular_drift)});
    CsvWriter pcsv(ctx.out / "ensemble.csv");
    pcsv.header({"x1", "x2", "x3", "v1", "v2", "v3", "w"});
    for (std::size_t i = 0; i < after.particles.size(); ++i) {
        const auto& p = after.particles[i];
        pcsv.line({fmt_full(p.x.x1), fmt_full(p.x.x2), fmt_full(p.x.x3), fmt_full(p.v.x1),
                   fmt_full(p.v.x2), fmt_full(p.v.x3), fmt_full(after.weights[i])});
    }
    std::cout << "particles: " << particles << ", min bounces: " << rep.min_bounces
              << ", mass drift: " << rep.mass_drift << ", energy drift: " << rep.energy_drift;
    if (rep.has_axis) std::cout << ", angular drift: " << rep.angular_drift;
    std::cout << "\n";
    ctx.manifest.outputs.push_back("conservation.csv");
    ctx.manifest.outputs.push_back("ensemble.csv");
    finish(ctx);
    const bool ok = rep.mass_drift == 0.0 && rep.energy_drift < 1e-12 &&
                    (!rep.has_axis || rep.angular_drift < 1e-9) && rep.quarantined.empty();
    return ok ? 0 : 2;
}

int cmd_kinetic_decay(const Common& c, double nu0, double T, int samples) {
    Ctx ctx = make_ctx(c, "kinetic decay");
    const KineticGrid grid = make_kinetic_grid(ctx.scene.domain, 8, 8, 8, 2, 1.0, nu0, 0.62);
    const auto curve = relaxation_decay(ctx.scene.domain, grid,
                                        [](Vec2, Vec2) { return 1.0; }, T, samples);
    CsvWriter csv(ctx.out / "decay.csv");
    csv.header({"t", "sup", "failures"});
    for (const auto& s : curve)
        csv.line({fmt_full(s.t), fmt_full(s.sup), std::to_string(s.failures)});
    std::cout << "sup at T: " << curve.back().sup << " (exact "
              << std::exp(-nu0 * curve.back().t) << ")\n";
    ctx.manifest.outputs.push_back("decay.csv");
    finish(ctx);
    return 0;
}

int cmd_kinetic_duhamel(const Common& c, double n_cut, double T, int iterations) {
    Ctx ctx = make_ctx(c, "kinetic duhamel");
    const KineticGrid grid = make_kinetic_grid(ctx.scene.domain, 8, 8, 8, 2, n_cut, 1.0, 0.62);
    const auto res = duhamel_gain_iteration(ctx.scene.domain, grid,
                                            [](Vec2 x, Vec2) { return 1.0 + 0.2 * x.x; }, T, 7,
                                            iterations);
    CsvWriter csv(ctx.out / "duhamel_residuals.csv");
    csv.header({"iteration", "residual"});
    for (std::size_t i = 0; i < res.residuals.size(); ++i)
        csv.line({std::to_string(i + 1), fmt_full(res.residuals[i])});
    std::cout << "iterations: " << iterations << ", final residual: " << res.residuals.back()
              << (res.contraction ? "" : " (warning: residuals not contracting)") << "\n";
    ctx.manifest.outputs.push_back("duhamel_residuals.csv");
    finish(ctx);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Specular billiard dynamics in periodic cylinders"};
    app.require_subcommand(1);

    Common c_classify, c_trace, c_count, c_sbuild, c_sdetect, c_atlas, c_jcheck, c_jdet,
        c_jchain, c_cov, c_kcons, c_kdecay, c_kduh;

    add_common(app.add_subcommand("classify", "boundary decomposition table"), c_classify);
    add_common(app.add_subcommand("trace", "specular cycle CSV (+ SVG)"), c_trace);

    auto* count = app.add_subcommand("count", "bounce-count table over a phase grid");
    double count_L = 10.0;
    count->add_option("--length", count_L, "travel length L");
    add_common(count, c_count);

    auto* sticky = app.add_subcommand("sticky", "sticky-grazing tools");
    sticky->require_subcommand(1);
    auto* sbuild = sticky->add_subcommand("build", "reconstruct the refocusing arc example");
    double delta_max = 0.05, x0 = -1.0;
    int samples = 200;
    sbuild->add_option("--delta-max", delta_max, "parameter range");
    sbuild->add_option("--samples", samples, "arc sample count");
    sbuild->add_option("--x0", x0, "anchor on the delta=0 tangent ray (negative)");
    add_common(sbuild, c_sbuild, false);
    auto* sdetect = sticky->add_subcommand("detect", "trace a family and test concurrence");
    int s_curve = -1, s_grid = 64, s_sign = 1, s_k = 1;
    double s_speed = 1.0;
    bool s_builtin = false;
    sdetect->add_option("--curve", s_curve, "launch curve id (default: first concave)");
    sdetect->add_option("--family", s_grid, "family size");
    sdetect->add_option("--speed", s_speed, "launch speed");
    sdetect->add_option("--sign", s_sign, "launch sign (+1/-1)");
    sdetect->add_option("--k", s_k, "chord index");
    sdetect->add_flag("--refocus-example", s_builtin, "use the built-in refocusing example scene");
    add_common(sdetect, c_sdetect, false);

    auto* atlas = app.add_subcommand("atlas", "inflection-ray atlas");
    double atlas_horizon = 10.0;
    atlas->add_option("--length", atlas_horizon, "length horizon");
    add_common(atlas, c_atlas);

    auto* jac = app.add_subcommand("jacobian", "bounce-map derivative checks");
    jac->require_subcommand(1);
    auto* jcheck = jac->add_subcommand("check", "analytic vs finite-difference entries");
    int j_bounces = 50;
    jcheck->add_option("--bounces", j_bounces, "bounces to sample");
    add_common(jcheck, c_jcheck);
    auto* jdet = jac->add_subcommand("det", "determinant identities");
    int jd_bounces = 50;
    jdet->add_option("--bounces", jd_bounces, "bounces to sample");
    add_common(jdet, c_jdet);
    auto* jchain = jac->add_subcommand("chain", "chained determinant telescoping");
    int chain_len = 4;
    jchain->add_option("--length", chain_len, "chain length");
    add_common(jchain, c_jchain);

    auto* cov = app.add_subcommand("cov-check", "change-of-variable determinant sweep");
    int cov_sweeps = 200;
    cov->add_option("--sweeps", cov_sweeps, "(u, s') samples");
    add_common(cov, c_cov);

    auto* kin = app.add_subcommand("kinetic", "transport and linear toys");
    kin->require_subcommand(1);
    auto* kcons = kin->add_subcommand("conserve", "ensemble transport conservation");
    std::size_t k_particles = 1000;
    long k_bounces = 100;
    kcons->add_option("--particles", k_particles, "ensemble size");
    kcons->add_option("--min-bounces", k_bounces, "bounces per particle");
    add_common(kcons, c_kcons);
    auto* kdecay = kin->add_subcommand("decay", "relaxation sup-norm curve");
    double nu0 = 1.0, k_T = 2.0;
    int k_samples = 9;
    kdecay->add_option("--nu0", nu0, "relaxation rate");
    kdecay->add_option("--T", k_T, "final time");
    kdecay->add_option("--samples", k_samples, "time samples");
    add_common(kdecay, c_kdecay);
    auto* kduh = kin->add_subcommand("duhamel", "gain-model Picard iteration");
    double n_cut = 0.2, duh_T = 0.25;
    int duh_iters = 3;
    kduh->add_option("--n-cut", n_cut, "velocity cutoff");
    kduh->add_option("--T", duh_T, "final time");
    kduh->add_option("--iterations", duh_iters, "Picard iterations");
    add_common(kduh, c_kduh);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("classify")) return cmd_classify(c_classify);
        if (app.got_subcommand("trace")) return cmd_trace(c_trace);
        if (app.got_subcommand("count")) return cmd_count(c_count, count_L);
        if (app.got_subcommand("sticky")) {
            if (sticky->got_subcommand("build"))
                return cmd_sticky_build(c_sbuild, delta_max, samples, x0);
            return cmd_sticky_detect(c_sdetect, s_curve, s_grid, s_speed, s_sign, s_k, s_builtin);
        }
        if (app.got_subcommand("atlas")) return cmd_atlas(c_atlas, atlas_horizon);
        if (app.got_subcommand("jacobian")) {
            if (jac->got_subcommand("check")) return cmd_jacobian_check(c_jcheck, j_bounces);
            if (jac->got_subcommand("det")) return cmd_jacobian_det(c_jdet, jd_bounces);
            return cmd_jacobian_chain(c_jchain, chain_len);
        }
        if (app.got_subcommand("cov-check")) return cmd_cov_check(c_cov, cov_sweeps);
        if (app.got_subcommand("kinetic")) {
            if (kin->got_subcommand("conserve"))
                return cmd_kinetic_conserve(c_kcons, k_particles, k_bounces);
            if (kin->got_subcommand("decay")) return cmd_kinetic_decay(c_kdecay, nu0, k_T, k_samples);
            return cmd_kinetic_duhamel(c_kduh, n_cut, duh_T, duh_iters);
        }
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
