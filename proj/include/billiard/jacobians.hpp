#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "billiard/chart.hpp"
#include "billiard/domain.hpp"
#include "billiard/trajectory.hpp"

namespace billiard {

// Derivatives of the bounce map are evaluated in tubular charts anchored at
// the bounce points themselves (x1 = arclength offset, so g11 = 1, the frame
// is the Frenet frame and frame derivatives reduce to kappa). All formulas
// are written with dt = t^k - t^{k+1}, which is positive along backward
// cycles and negative along forward ones; they are valid for either sign.

struct JacobianOptions {
    double fd_step = 1e-6;        // central-difference step, times scene scale
    double grazing_floor = 1e-8;  // minimum |v3| for a usable bounce
    double rho_floor = 1e-8;      // transversality component floor
    double det_floor = 1e-8;      // change-of-variable determinant floor
    double band_N = 10.0;         // admissible-band parameter in hypotheses
    TraceOptions trace;
};

struct BounceFrame {
    Vec2 x;
    double tau = 0.0;
    int curve_id = -1;
    Vec2 T, n;        // unit tangent and outward normal at the bounce
    double kappa = 0.0;
    Vec2 w;           // outgoing cross-section velocity v^k
    double v1 = 0.0;  // T . w
    double v3 = 0.0;  // n . w
    double speed = 0.0;
};

inline BounceFrame bounce_frame(const Domain& domain, const BounceEvent& ev) {
    BounceFrame f;
    f.x = ev.x.cs();
    f.tau = ev.tau;
    f.curve_id = ev.curve_id;
    const AnalyticCurve& c = domain.curve(ev.curve_id);
    f.T = c.unit_tangent(ev.tau);
    f.n = c.outward_normal(ev.tau);
    f.kappa = curvature(c, ev.tau);
    f.w = ev.v_post.cs();
    f.v1 = dot(f.T, f.w);
    f.v3 = dot(f.n, f.w);
    f.speed = f.w.norm();
    return f;
}

// ---------------------------------------------------------------------------
// One-bounce map in chart coordinates: (x1, v1, v3) at bounce k to
// (dt, x1', v1', v3') at bounce k+1.

struct BounceDerivatives {
    double dt_dx1 = 0.0;
    double dx1_dx1 = 0.0;
    double dv1_dx1 = 0.0, dv3_dx1 = 0.0;
    std::array<double, 2> dt_dv{};   // j = 1, 3
    std::array<double, 2> dx1_dv{};
    std::array<double, 2> dv1_dv{};
    std::array<double, 2> dv3_dv{};
    double mat[3][3] = {{0}};               // d(x1', v1', v3') / d(x1, v1, v3)
};

inline BounceDerivatives bounce_derivatives_analytic(const BounceFrame& f0,
                                                     const BounceFrame& f1, double dt) {
    BounceDerivatives d;
    // dv/dx1 along the launch arc: kappa (v1 n - v3 T), the Christoffel term
    // of the transported velocity in the anchored chart.
    const Vec2 dw_dx1 = f0.kappa * (f0.v1 * f0.n - f0.v3 * f0.T);
    const Vec2 A = f0.T - dt * dw_dx1;
    const Vec2 proj = f1.T + (f1.v1 / f1.v3) * f1.n;

    d.dt_dx1 = -dot(f1.n, A) / f1.v3;
    d.dx1_dx1 = dot(proj, A);
    d.dv1_dx1 = dot(dw_dx1, f1.T) - f1.kappa * f1.v3 * d.dx1_dx1;
    d.dv3_dx1 = -dot(dw_dx1, f1.n) + f1.kappa * f1.v1 * d.dx1_dx1;

    const Vec2 e[2] = {f0.T, f0.n};  // chart directions j = 1, 3 at bounce k
    for (int j = 0; j < 2; ++j) {
        d.dt_dv[j] = dt / f1.v3 * dot(e[j], f1.n);
        d.dx1_dv[j] = -dt * dot(e[j], proj);
        d.dv1_dv[j] = -f1.kappa * f1.v3 * d.dx1_dv[j] + dot(f1.T, e[j]);
        d.dv3_dv[j] = f1.kappa * f1.v1 * d.dx1_dv[j] - dot(f1.n, e[j]);
    }

    d.mat[0][0] = d.dx1_dx1; d.mat[0][1] = d.dx1_dv[0]; d.mat[0][2] = d.dx1_dv[1];
    d.mat[1][0] = d.dv1_dx1; d.mat[1][1] = d.dv1_dv[0]; d.mat[1][2] = d.dv1_dv[1];
    d.mat[2][0] = d.dv3_dx1; d.mat[2][1] = d.dv3_dv[0]; d.mat[2][2] = d.dv3_dv[1];
    return d;
}

namespace detail {

struct OneBounceOut {
    double dt = 0.0, x1 = 0.0, v1 = 0.0, v3 = 0.0;
};

// Signed arclength offset of tau_hit from tau_ref.
inline double arc_offset(const AnalyticCurve& c, double tau_ref, double tau_hit) {
    double dtau = tau_hit - tau_ref;
    if (c.closed()) dtau = std::remainder(dtau, c.period());
    return c.arclength(tau_ref, tau_ref + dtau);
}

// tau at signed arclength ds from tau0.
inline double tau_from_arclength(const AnalyticCurve& c, double tau0, double ds) {
    double tau = tau0 + ds / c.speed(tau0);
    for (int it = 0; it < 64; ++it) {
        const double err = c.arclength(tau0, tau) - ds;
        const double step = err / c.speed(tau);
        tau -= step;
        if (std::abs(step) < 1e-15) break;
    }
    return tau;
}

// Re-trace a single bounce from perturbed chart data at bounce k. Throws
// GrazingAtBounce if the perturbation changes the bounce combinatorics
// (different curve or a far-away landing parameter).
inline OneBounceOut eval_one_bounce(const Domain& domain, const BounceFrame& f0,
                                    const BounceFrame& f1_ref, TraceDirection dir,
                                    const TraceOptions& topts, double dx1, double dv1,
                                    double dv3) {
    const AnalyticCurve& c0 = domain.curve(f0.curve_id);
    const double tau_l = tau_from_arclength(c0, f0.tau, dx1);
    const Vec2 T = c0.unit_tangent(tau_l);
    const Vec2 n = c0.outward_normal(tau_l);
    const Vec2 w = (f0.v1 + dv1) * T + (f0.v3 + dv3) * n;
    const double dirsign = (dir == TraceDirection::Backward) ? -1.0 : 1.0;
    auto hit = first_exit_opt(domain, c0.pos(tau_l), dirsign * w, topts,
                              {f0.curve_id, tau_l});
    if (!hit) throw GrazingAtBounce("perturbed ray lost the boundary");
    if (hit->curve_id != f1_ref.curve_id)
        throw GrazingAtBounce("perturbation changed the bounce combinatorics");
    const AnalyticCurve& c1 = domain.curve(f1_ref.curve_id);
    double dtau = hit->tau - f1_ref.tau;
    if (c1.closed()) dtau = std::remainder(dtau, c1.period());
    if (std::abs(dtau) * c1.speed(f1_ref.tau) > 0.2 * domain.diameter())
        throw GrazingAtBounce("perturbation changed the bounce combinatorics");
    OneBounceOut out;
    out.dt = -dirsign * hit->time;  // t^k - t^{k+1}
    out.x1 = arc_offset(c1, f1_ref.tau, hit->tau);
    const Vec2 n1 = c1.outward_normal(hit->tau);
    const Vec2 T1 = c1.unit_tangent(hit->tau);
    const Vec2 w_post = reflect(w, n1);
    out.v1 = dot(T1, w_post);
    out.v3 = dot(n1, w_post);
    return out;
}

template <typename F>
double central_diff(F&& f, double h) {
    // One Richardson step over the pair (h, 2h); the wider companion keeps
    // the roundoff amplification at the base step's level.
    const double d1 = (f(h) - f(-h)) / (2 * h);
    const double d2 = (f(2 * h) - f(-2 * h)) / (4 * h);
    return (4.0 * d1 - d2) / 3.0;
}

}  // namespace detail

inline BounceDerivatives bounce_derivatives_fd(const Domain& domain, const BounceFrame& f0,
                                               const BounceFrame& f1, TraceDirection dir,
                                               const JacobianOptions& jopts) {
    const double h = jopts.fd_step * std::max(domain.diameter(), f0.speed);
    BounceDerivatives d;
    TraceOptions topts = jopts.trace;
    topts.residual_factor = std::min(topts.residual_factor, 1e-14);
    const auto run = [&](double dx1, double dv1, double dv3) {
        return detail::eval_one_bounce(domain, f0, f1, dir, topts, dx1, dv1, dv3);
    };
    const auto diff4 = [&](auto pick, int comp) {
        return detail::central_diff(
            [&](double e) {
                double p[3] = {0, 0, 0};
                p[comp] = e;
                return pick(run(p[0], p[1], p[2]));
            },
            h);
    };
    const auto get_dt = [](const detail::OneBounceOut& o) { return o.dt; };
    const auto get_x1 = [](const detail::OneBounceOut& o) { return o.x1; };
    const auto get_v1 = [](const detail::OneBounceOut& o) { return o.v1; };
    const auto get_v3 = [](const detail::OneBounceOut& o) { return o.v3; };

    d.dt_dx1 = diff4(get_dt, 0);
    d.dx1_dx1 = diff4(get_x1, 0);
    d.dv1_dx1 = diff4(get_v1, 0);
    d.dv3_dx1 = diff4(get_v3, 0);
    for (int j = 0; j < 2; ++j) {
        d.dt_dv[j] = diff4(get_dt, j + 1);
        d.dx1_dv[j] = diff4(get_x1, j + 1);
        d.dv1_dv[j] = diff4(get_v1, j + 1);
        d.dv3_dv[j] = diff4(get_v3, j + 1);
    }
    d.mat[0][0] = d.dx1_dx1; d.mat[0][1] = d.dx1_dv[0]; d.mat[0][2] = d.dx1_dv[1];
    d.mat[1][0] = d.dv1_dx1; d.mat[1][1] = d.dv1_dv[0]; d.mat[1][2] = d.dv1_dv[1];
    d.mat[2][0] = d.dv3_dx1; d.mat[2][1] = d.dv3_dv[0]; d.mat[2][2] = d.dv3_dv[1];
    return d;
}

struct JacobianEntry {
    std::string name;
    double analytic = 0.0;
    double fd = 0.0;
    double residual = 0.0;  // relative, with absolute floor
};

struct JacobianReport {
    int k = 0;
    std::vector<JacobianEntry> entries;
    double max_rel_residual = 0.0;
    double det_analytic = 0.0;
    double det_formula = 0.0;
    double det_fd = 0.0;
};

namespace detail {

inline double rel_residual(double a, double b, double abs_floor = 1e-9) {
    const double diff = std::abs(a - b);
    const double scale = std::max({std::abs(a), std::abs(b), abs_floor / 1e-5});
    return diff <= abs_floor ? 0.0 : diff / scale;
}

inline void push_entry(JacobianReport& rep, const std::string& name, double a, double fd) {
    JacobianEntry e{name, a, fd, rel_residual(a, fd)};
    rep.max_rel_residual = std::max(rep.max_rel_residual, e.residual);
    rep.entries.push_back(std::move(e));
}

inline TraceDirection cycle_direction(const SpecularCycle& cyc) {
    if (cyc.events.size() >= 1)
        return (cyc.events[0].t <= cyc.origin.t) ? TraceDirection::Backward
                                                 : TraceDirection::Forward;
    return TraceDirection::Backward;
}

}  // namespace detail

// Analytic one-bounce derivative block vs central differences, between the
// cycle's events k and k+1 (0-based indices into cycle.events).
inline JacobianReport bounce_jacobian(const Domain& domain, const SpecularCycle& cycle,
                                      std::size_t k, const JacobianOptions& jopts = {}) {
    if (k + 1 >= cycle.events.size()) throw ChartFailure("bounce index out of range");
    const BounceFrame f0 = bounce_frame(domain, cycle.events[k]);
    const BounceFrame f1 = bounce_frame(domain, cycle.events[k + 1]);
    if (std::abs(f0.v3) < jopts.grazing_floor * f0.speed ||
        std::abs(f1.v3) < jopts.grazing_floor * f1.speed)
        throw GrazingAtBounce("bounce too close to grazing for derivative evaluation");
    const double dt = cycle.events[k].t - cycle.events[k + 1].t;
    const TraceDirection dir = detail::cycle_direction(cycle);

    const BounceDerivatives a = bounce_derivatives_analytic(f0, f1, dt);
    const BounceDerivatives fd = bounce_derivatives_fd(domain, f0, f1, dir, jopts);

    JacobianReport rep;
    rep.k = cycle.events[k].index;
    detail::push_entry(rep, "dt/dx1", a.dt_dx1, fd.dt_dx1);
    detail::push_entry(rep, "x1'/dx1", a.dx1_dx1, fd.dx1_dx1);
    detail::push_entry(rep, "v1'/dx1", a.dv1_dx1, fd.dv1_dx1);
    detail::push_entry(rep, "v3'/dx1", a.dv3_dx1, fd.dv3_dx1);
    const char* jn[2] = {"1", "3"};
    for (int j = 0; j < 2; ++j) {
        detail::push_entry(rep, std::string("dt/dv") + jn[j], a.dt_dv[j], fd.dt_dv[j]);
        detail::push_entry(rep, std::string("x1'/dv") + jn[j], a.dx1_dv[j], fd.dx1_dv[j]);
        detail::push_entry(rep, std::string("v1'/dv") + jn[j], a.dv1_dv[j], fd.dv1_dv[j]);
        detail::push_entry(rep, std::string("v3'/dv") + jn[j], a.dv3_dv[j], fd.dv3_dv[j]);
    }
    rep.det_analytic = std::abs(det3(a.mat));
    rep.det_formula = std::abs(f0.v3 / f1.v3);  // sqrt(g) ratio is 1 in anchored charts
    rep.det_fd = std::abs(det3(fd.mat));
    return rep;
}

// ---------------------------------------------------------------------------
// First bounce from Euclidean phase-space coordinates.

struct FirstBounceDerivatives {
    std::array<double, 2> dt_dx{}, dt_dv{};          // j = 1, 3 (Euclidean)
    std::array<double, 2> dx1_dx{}, dx1_dv{};
    std::array<double, 2> dv1_dx{}, dv1_dv{};
    std::array<double, 2> dv3_dx{}, dv3_dv{};
    std::array<double, 2> dspeed_dx{}, dspeed_dv{};  // d|v^1| entries
};

inline FirstBounceDerivatives first_bounce_derivatives_analytic(const BounceFrame& f1,
                                                                Vec2 v_launch, double dt) {
    FirstBounceDerivatives d;
    const Vec2 proj = f1.T + (f1.v1 / f1.v3) * f1.n;
    const Vec2 e[2] = {{1, 0}, {0, 1}};  // Euclidean directions x1, x3
    const Vec2 vhat = v_launch / v_launch.norm();
    for (int j = 0; j < 2; ++j) {
        d.dt_dx[j] = -dot(e[j], f1.n) / f1.v3;
        d.dt_dv[j] = dt * dot(e[j], f1.n) / f1.v3;
        d.dx1_dx[j] = dot(e[j], proj);
        d.dx1_dv[j] = -dt * dot(e[j], proj);
        d.dv1_dx[j] = -f1.kappa * f1.v3 * d.dx1_dx[j];
        d.dv3_dx[j] = f1.kappa * f1.v1 * d.dx1_dx[j];
        d.dv1_dv[j] = dot(f1.T, e[j]) - f1.kappa * f1.v3 * d.dx1_dv[j];
        d.dv3_dv[j] = -dot(f1.n, e[j]) + f1.kappa * f1.v1 * d.dx1_dv[j];
        d.dspeed_dx[j] = 0.0;  // speed independent of the launch position
        d.dspeed_dv[j] = (j == 0) ? vhat.x : vhat.y;
    }
    return d;
}

struct FirstBounceReport {
    JacobianReport report;
    BounceFrame frame;
    double dt = 0.0;  // t - t^1 (signed)
};

inline FirstBounceReport first_bounce_jacobian_global(const Domain& domain,
                                                      const PhasePoint& phase,
                                                      const JacobianOptions& jopts = {}) {
    TraceOptions topts = jopts.trace;
    topts.horizon_time.reset();
    topts.horizon_length = 2.5 * domain.diameter();
    topts.residual_factor = std::min(topts.residual_factor, 1e-14);

    const double dirsign = (topts.direction == TraceDirection::Backward) ? -1.0 : 1.0;
    const auto trace_once = [&](Vec2 x, Vec2 v) {
        auto hit = first_exit_opt(domain, x, dirsign * v, topts, {});
        if (!hit) throw GrazingAtBounce("no first bounce");
        return *hit;
    };

    const Vec2 x0 = phase.x.cs(), v0 = phase.v.cs();
    const ExitHit hit0 = trace_once(x0, v0);
    const AnalyticCurve& c = domain.curve(hit0.curve_id);
    BounceFrame f1;
    f1.x = hit0.point;
    f1.tau = hit0.tau;
    f1.curve_id = hit0.curve_id;
    f1.T = c.unit_tangent(hit0.tau);
    f1.n = c.outward_normal(hit0.tau);
    f1.kappa = curvature(c, hit0.tau);
    f1.w = reflect(v0, f1.n);
    f1.v1 = dot(f1.T, f1.w);
    f1.v3 = dot(f1.n, f1.w);
    f1.speed = f1.w.norm();
    if (std::abs(f1.v3) < jopts.grazing_floor * f1.speed)
        throw GrazingAtBounce("first bounce is grazing");
    const double dt = -dirsign * hit0.time;  // t - t^1

    const FirstBounceDerivatives a = first_bounce_derivatives_analytic(f1, v0, dt);

    // finite differences in the four Euclidean phase coordinates
    const double h = jopts.fd_step * std::max(domain.diameter(), v0.norm());
    struct Out { double dt, x1, v1, v3, speed; };
    const auto run = [&](Vec2 dx, Vec2 dv) -> Out {
        const Vec2 x = x0 + dx;
        const Vec2 v = v0 + dv;
        const ExitHit hh = trace_once(x, v);
        if (hh.curve_id != f1.curve_id)
            throw GrazingAtBounce("perturbation changed the bounce combinatorics");
        const Vec2 n = c.outward_normal(hh.tau);
        const Vec2 T = c.unit_tangent(hh.tau);
        const Vec2 w = reflect(v, n);
        return {-dirsign * hh.time, detail::arc_offset(c, f1.tau, hh.tau), dot(T, w),
                dot(n, w), w.norm()};
    };
    FirstBounceDerivatives fd;
    for (int j = 0; j < 2; ++j) {
        const Vec2 ex = (j == 0) ? Vec2{1, 0} : Vec2{0, 1};
        const auto dx = [&](auto pick) {
            return detail::central_diff([&](double e) { return pick(run(e * ex, {0, 0})); }, h);
        };
        const auto dv = [&](auto pick) {
            return detail::central_diff([&](double e) { return pick(run({0, 0}, e * ex)); }, h);
        };
        fd.dt_dx[j] = dx([](const Out& o) { return o.dt; });
        fd.dt_dv[j] = dv([](const Out& o) { return o.dt; });
        fd.dx1_dx[j] = dx([](const Out& o) { return o.x1; });
        fd.dx1_dv[j] = dv([](const Out& o) { return o.x1; });
        fd.dv1_dx[j] = dx([](const Out& o) { return o.v1; });
        fd.dv1_dv[j] = dv([](const Out& o) { return o.v1; });
        fd.dv3_dx[j] = dx([](const Out& o) { return o.v3; });
        fd.dv3_dv[j] = dv([](const Out& o) { return o.v3; });
        fd.dspeed_dx[j] = dx([](const Out& o) { return o.speed; });
        fd.dspeed_dv[j] = dv([](const Out& o) { return o.speed; });
    }

    FirstBounceReport out;
    out.frame = f1;
    out.dt = dt;
    out.report.k = 1;
    const char* jn[2] = {"1", "3"};
    for (int j = 0; j < 2; ++j) {
        detail::push_entry(out.report, std::string("tb/dx") + jn[j], a.dt_dx[j], fd.dt_dx[j]);
        detail::push_entry(out.report, std::string("tb/dv") + jn[j], a.dt_dv[j], fd.dt_dv[j]);
        detail::push_entry(out.report, std::string("x1/dx") + jn[j], a.dx1_dx[j], fd.dx1_dx[j]);
        detail::push_entry(out.report, std::string("x1/dv") + jn[j], a.dx1_dv[j], fd.dx1_dv[j]);
        detail::push_entry(out.report, std::string("v1/dx") + jn[j], a.dv1_dx[j], fd.dv1_dx[j]);
        detail::push_entry(out.report, std::string("v3/dx") + jn[j], a.dv3_dx[j], fd.dv3_dx[j]);
        detail::push_entry(out.report, std::string("v1/dv") + jn[j], a.dv1_dv[j], fd.dv1_dv[j]);
        detail::push_entry(out.report, std::string("v3/dv") + jn[j], a.dv3_dv[j], fd.dv3_dv[j]);
        // the position-derivative of the speed is exactly zero
        detail::push_entry(out.report, std::string("|v|/dx") + jn[j], a.dspeed_dx[j],
                           fd.dspeed_dx[j]);
        detail::push_entry(out.report, std::string("|v|/dv") + jn[j], a.dspeed_dv[j],
                           fd.dspeed_dv[j]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Determinant identities.

struct DetCheck {
    double analytic = 0.0;  // |det| of the analytic 3x3 block
    double formula = 0.0;   // sqrt(g) ratio times |v3^k| / |v3^{k+1}|
    double fd = 0.0;        // |det| of the finite-difference block
};

inline DetCheck det_check(const Domain& domain, const SpecularCycle& cycle, std::size_t k,
                          const JacobianOptions& jopts = {}) {
    const JacobianReport rep = bounce_jacobian(domain, cycle, k, jopts);
    return {rep.det_analytic, rep.det_formula, rep.det_fd};
}

struct ChainDetCheck {
    double product_formula = 0.0;  // prod of per-bounce formula determinants (hat map)
    double product_fd = 0.0;       // prod of per-bounce fd determinants (hat map)
    double closed_form = 0.0;      // (v3^k / v3^1)^2 in anchored charts
};

// Per-bounce determinant of the (x1, vhat1) map: the 3x3 chart determinant
// times the speed-normalization factors (v3^{i+1}/v3^i)^3.
inline ChainDetCheck chain_det_check(const Domain& domain, const SpecularCycle& cycle,
                                     std::size_t k_last, const JacobianOptions& jopts = {}) {
    if (k_last + 1 >= cycle.events.size() + 1 || k_last < 1)
        throw ChartFailure("chain range invalid");
    ChainDetCheck out;
    out.product_formula = 1.0;
    out.product_fd = 1.0;
    for (std::size_t i = 0; i + 1 <= k_last; ++i) {
        const DetCheck dc = det_check(domain, cycle, i, jopts);
        const BounceFrame fa = bounce_frame(domain, cycle.events[i]);
        const BounceFrame fb = bounce_frame(domain, cycle.events[i + 1]);
        const double qfac = std::pow(std::abs(fb.v3 / fa.v3), 3);
        out.product_formula *= dc.formula * qfac;
        out.product_fd *= dc.fd * qfac;
    }
    const BounceFrame f1 = bounce_frame(domain, cycle.events[0]);
    const BounceFrame fk = bounce_frame(domain, cycle.events[k_last]);
    out.closed_form = (fk.v3 / f1.v3) * (fk.v3 / f1.v3);
    return out;
}

// ---------------------------------------------------------------------------
// Specular basis, transition matrix, and the transversality components R1, R2.

struct SpecularBasis {
    Vec2 e0;     // v^k / |v^k|
    Vec2 eperp;  // (v3, -v1)/|v| in Euclidean components
};

struct TransitionMatrix {
    double S1 = 0.0, S2 = 0.0, S3 = 0.0;  // lower-triangular entries
    double det() const { return S1 * S3; }
};

struct TransitionData {
    SpecularBasis basis;
    TransitionMatrix S;
    double R1 = 0.0, R2 = 0.0;
    double dx1_dvhat = 0.0, dvhat_dvhat = 0.0;  // chain inputs to R
    bool r_above_floor = false;
    bool hyp_con_v0 = true;   // |v3^i| > floor for all i <= k
    bool hyp_geo_e1 = true;   // |T(x^1) . e1| > 1/N
};

namespace detail {

// d(x1^k, v1^k, v3^k)/d vhat1 at fixed (t, x, |v|), chained through the
// first-bounce block and the per-bounce blocks.
struct ChainState {
    double dx1 = 0.0, dv1 = 0.0, dv3 = 0.0;
};

inline ChainState chain_to_bounce(const Domain& domain, const SpecularCycle& cycle,
                                  std::size_t k) {
    const Vec2 v0 = cycle.origin.v.cs();
    const double speed = v0.norm();
    const Vec2 vhat = v0 / speed;
    if (std::abs(vhat.y) < 1e-14) throw PreconditionFailed("v3 vanishes; vhat1 is not a chart");
    // dv/dvhat1 at fixed speed: |v| (1, -vhat1/vhat3)
    const Vec2 dv_dvhat{speed, -speed * vhat.x / vhat.y};

    // first-bounce derivatives in Euclidean coordinates
    const BounceFrame f1 = bounce_frame(domain, cycle.events[0]);
    const double dt1 = cycle.origin.t - cycle.events[0].t;
    const FirstBounceDerivatives g = first_bounce_derivatives_analytic(f1, v0, dt1);
    ChainState s;
    s.dx1 = g.dx1_dv[0] * dv_dvhat.x + g.dx1_dv[1] * dv_dvhat.y;
    s.dv1 = g.dv1_dv[0] * dv_dvhat.x + g.dv1_dv[1] * dv_dvhat.y;
    s.dv3 = g.dv3_dv[0] * dv_dvhat.x + g.dv3_dv[1] * dv_dvhat.y;

    for (std::size_t i = 0; i + 1 <= k; ++i) {
        const BounceFrame fa = bounce_frame(domain, cycle.events[i]);
        const BounceFrame fb = bounce_frame(domain, cycle.events[i + 1]);
        const double dt = cycle.events[i].t - cycle.events[i + 1].t;
        const BounceDerivatives bd = bounce_derivatives_analytic(fa, fb, dt);
        ChainState nxt;
        nxt.dx1 = bd.mat[0][0] * s.dx1 + bd.mat[0][1] * s.dv1 + bd.mat[0][2] * s.dv3;
        nxt.dv1 = bd.mat[1][0] * s.dx1 + bd.mat[1][1] * s.dv1 + bd.mat[1][2] * s.dv3;
        nxt.dv3 = bd.mat[2][0] * s.dx1 + bd.mat[2][1] * s.dv1 + bd.mat[2][2] * s.dv3;
        s = nxt;
    }
    return s;
}

}  // namespace detail

// Transition data at the cycle's bounce k (0-based index into events).
inline TransitionData transition_data(const Domain& domain, const SpecularCycle& cycle,
                                      std::size_t k, const JacobianOptions& jopts = {}) {
    if (k >= cycle.events.size()) throw ChartFailure("bounce index out of range");
    const BounceFrame f = bounce_frame(domain, cycle.events[k]);
    if (std::abs(f.v3) < jopts.grazing_floor * f.speed)
        throw GrazingAtBounce("transition data at a grazing bounce");

    TransitionData out;
    out.basis.e0 = f.w / f.speed;
    out.basis.eperp = Vec2{f.w.y, -f.w.x} / f.speed;

    // chain hypotheses, reported rather than enforced
    for (std::size_t i = 0; i <= k; ++i) {
        const BounceFrame fi = bounce_frame(domain, cycle.events[i]);
        if (std::abs(fi.v3) <= jopts.grazing_floor * fi.speed) out.hyp_con_v0 = false;
    }
    {
        const BounceFrame f1 = bounce_frame(domain, cycle.events[0]);
        out.hyp_geo_e1 = std::abs(f1.T.x) > 1.0 / jopts.band_N;
    }
    if (!out.hyp_con_v0)
        throw HypothesisViolated("con_v0: grazing bounce inside the chain");

    // S entries from their frame definitions (anchored chart: d1 eta = T,
    // d(frame)/dx1 reduces to kappa rotations).
    const double vh1 = f.v1 / f.speed, vh3 = f.v3 / f.speed;
    out.S.S1 = dot(f.T, out.basis.eperp);
    out.S.S2 = dot(f.kappa * (vh1 * f.n - vh3 * f.T), out.basis.eperp);
    out.S.S3 = dot(f.T - (vh1 / vh3) * f.n, out.basis.eperp);

    const detail::ChainState cs = detail::chain_to_bounce(domain, cycle, k);
    out.dx1_dvhat = cs.dx1;
    // vhat1^k = v1^k / |v|; the speed is invariant under d/dvhat1.
    out.dvhat_dvhat = cs.dv1 / f.speed;
    out.R1 = out.S.S1 * cs.dx1;
    out.R2 = out.S.S2 * cs.dx1 + out.S.S3 * out.dvhat_dvhat;
    out.r_above_floor = std::max(std::abs(out.R1), std::abs(out.R2)) > jopts.rho_floor;
    return out;
}

// ---------------------------------------------------------------------------
// Critical times of the affine transversality factor b s~ + c.

struct CriticalTimes {
    double b = 0.0, c = 0.0;
    double phi1 = 0.0;  // -c/b, defined when |b| > 0
    double phi2 = 0.0;  // gated by the indicator |b| > min|c|/4
    bool indicator = false;
    double psi1 = 0.0, psi2 = 0.0;  // t - phi
    double exclusion = 0.0;         // requested half-width delta*
    double guaranteed_lower = 0.0;  // |b s~ + c| bound outside the window
};

inline CriticalTimes critical_times_from_R(double t, double tk, double speed_k, double R1,
                                           double R2, double delta_star,
                                           double tiny_floor = 1e-14) {
    CriticalTimes ct;
    ct.b = speed_k * R2;
    ct.c = -R1 + (tk - t) * speed_k * R2;
    ct.exclusion = delta_star;
    if (std::abs(ct.b) < tiny_floor && std::abs(ct.c) < tiny_floor)
        throw BothCoefficientsTiny("both affine coefficients under the floor");
    if (std::abs(ct.b) > tiny_floor) {
        ct.phi1 = -ct.c / ct.b;
        ct.psi1 = t - ct.phi1;
    }
    ct.indicator = std::abs(ct.b) > std::abs(ct.c) / 4.0;
    ct.phi2 = ct.indicator ? -ct.c / ct.b : 0.0;
    ct.psi2 = t - ct.phi2;
    // two-sided guarantee: min|b| delta (slope case) or min|c|/2 vs
    // (min|c|/4) delta (intercept case)
    const double slope_bound = std::abs(ct.b) * delta_star;
    const double intercept_bound =
        std::min(std::abs(ct.c) / 2.0, std::abs(ct.c) / 4.0 * delta_star);
    ct.guaranteed_lower = std::max(slope_bound, intercept_bound);
    return ct;
}

inline CriticalTimes critical_times(const Domain& domain, const SpecularCycle& cycle,
                                    std::size_t k, double delta_star,
                                    const JacobianOptions& jopts = {}) {
    const TransitionData td = transition_data(domain, cycle, k, jopts);
    const BounceFrame f = bounce_frame(domain, cycle.events[k]);
    return critical_times_from_R(cycle.origin.t, cycle.events[k].t, f.speed, td.R1, td.R2,
                                 delta_star);
}

// ---------------------------------------------------------------------------
// Transversality product d_|v| X x d_vhat1 X at time s along a backward cycle.

struct TransversalityProduct {
    double analytic = 0.0;
    double fd = 0.0;
    std::size_t segment = 0;  // bounce index of the chord containing s (0 = free flight)
};

// The product is reported in the specular frame (e0, eperp), the convention
// of the closed-form expression; that frame is negatively oriented, so the
// value equals minus the standard 2D cross product.
inline TransversalityProduct transversality_product(const Domain& domain,
                                                    const PhasePoint& phase, double s,
                                                    const JacobianOptions& jopts = {}) {
    if (s >= phase.t) throw PreconditionFailed("transversality product needs s < t (backward)");
    TraceOptions topts = jopts.trace;
    topts.direction = TraceDirection::Backward;
    topts.horizon_time = (phase.t - s) * (1 + 1e-12);
    topts.horizon_length.reset();
    topts.residual_factor = std::min(topts.residual_factor, 1e-14);
    const SpecularCycle cyc = trace_cycles(domain, phase, topts);
    if (cyc.termination != Termination::HorizonTime &&
        cyc.termination != Termination::HorizonLength)
        throw GrazingOnPath("backward trace did not run clean to s");

    // locate the chord containing s
    std::size_t k = 0;
    while (k < cyc.events.size() && cyc.events[k].t > s) ++k;
    // chord index k means s lies between bounces k and k-1 (1-based);
    // k = 0 is the free-flight segment before any bounce.

    TransversalityProduct out;
    out.segment = k;
    const double t = phase.t;
    const Vec2 v0 = phase.v.cs();
    const double speed = v0.norm();
    if (k == 0) {
        // free flight: closed form (t - s)^2 |v| / vhat3 in the specular frame
        const Vec2 vhat = v0 / speed;
        out.analytic = (t - s) * (t - s) * speed / vhat.y;
    } else {
        const std::size_t ke = k - 1;
        const TransitionData td = transition_data(domain, cyc, ke, jopts);
        const BounceFrame f = bounce_frame(domain, cyc.events[ke]);
        const double tk = cyc.events[ke].t;
        out.analytic = -(t - s) * (td.R1 - (tk - s) * f.speed * td.R2);
    }

    // finite differences of X(s) in (|v|, vhat1)
    const auto xs = [&](double dspeed, double dvhat) {
        const Vec2 vhat0 = v0 / speed;
        const double vh1 = vhat0.x + dvhat;
        const double vh3 = std::copysign(std::sqrt(std::max(0.0, 1.0 - vh1 * vh1)), vhat0.y);
        PhasePoint p = phase;
        p.v = Vec3(Vec2{vh1, vh3} * (speed + dspeed), phase.v.x2);
        return specular_flow(domain, p, s, topts).x.cs();
    };
    const double h = jopts.fd_step;
    const Vec2 dxd_speed{detail::central_diff([&](double e) { return xs(e, 0).x; }, h),
                         detail::central_diff([&](double e) { return xs(e, 0).y; }, h)};
    const Vec2 dxd_vhat{detail::central_diff([&](double e) { return xs(0, e).x; }, h),
                        detail::central_diff([&](double e) { return xs(0, e).y; }, h)};
    out.fd = -cross(dxd_speed, dxd_vhat);  // specular-frame orientation
    return out;
}

// ---------------------------------------------------------------------------
// Change-of-variable determinant for the nested trajectory
// u -> X(s'; s, X(s; t, x, v), u): axial factor -(s - s') times the
// cross-section transversality product.

struct CovExclusions {
    std::vector<std::pair<Vec2, double>> sticky_balls;  // (center, radius)
    double delta2 = 1e-3;       // minimum |s - s'|
    double psi_halfwidth = 0.05;
    double band_N = 10.0;
    double time_margin = 1e-3;  // s' clearance from the nested bounce times
};

struct CovCheck {
    double det_fd = 0.0;        // 3x3 determinant in (|u|, uhat1, u2)
    double det_analytic = 0.0;  // -(s - s') times analytic product
    double rel_err = 0.0;
    bool pass = false;
    std::vector<std::string> violated;
};

inline CovCheck change_of_variable_check(const Domain& domain, double t, Vec3 x, Vec3 v,
                                         double s, Vec3 u, double s_prime,
                                         const CovExclusions& ex,
                                         const JacobianOptions& jopts = {}) {
    CovCheck out;
    PhasePoint phase{x, v, t};
    const PhasePoint mid = specular_flow(domain, phase, s);
    const Vec2 y = mid.x.cs();

    // preconditions
    if (std::abs(u.x3) < 1.0 / ex.band_N) out.violated.push_back("u3-band");
    for (const auto& [center, radius] : ex.sticky_balls)
        if ((y - center).norm() < radius) out.violated.push_back("sticky-ball");
    if (std::abs(s - s_prime) < ex.delta2) out.violated.push_back("s-separation");

    PhasePoint nested;
    nested.t = s;
    nested.x = mid.x;
    nested.v = u;

    // chart alignment at the first nested bounce
    {
        TraceOptions bopts = jopts.trace;
        bopts.direction = TraceDirection::Backward;
        const double dirsign = -1.0;
        auto hit = first_exit_opt(domain, y, dirsign * u.cs(), bopts, {});
        if (hit) {
            const Vec2 T = domain.curve(hit->curve_id).unit_tangent(hit->tau);
            if (std::abs(T.x) <= 1.0 / ex.band_N) out.violated.push_back("geo-e1-u");
        }
    }

    TransversalityProduct tp;
    try {
        tp = transversality_product(domain, nested, s_prime, jopts);
    } catch (const Error& e) {
        out.violated.push_back(std::string("trace: ") + e.what());
        return out;
    }

    // nested-cycle time separations and psi windows
    if (tp.segment >= 1) {
        TraceOptions topts = jopts.trace;
        topts.direction = TraceDirection::Backward;
        topts.horizon_time = (s - s_prime) * (1 + 1e-12);
        const SpecularCycle cyc = trace_cycles(domain, nested, topts);
        const std::size_t ke = tp.segment - 1;
        const double tk = cyc.events[ke].t;
        const double tk1 = (ke + 1 < cyc.events.size()) ? cyc.events[ke + 1].t
                                                        : s_prime - 2 * ex.time_margin;
        if (tk - s_prime < ex.time_margin || s_prime - tk1 < ex.time_margin)
            out.violated.push_back("sprime-k");
        try {
            const CriticalTimes ct = critical_times(domain, cyc, ke, ex.psi_halfwidth, jopts);
            if (std::abs(s_prime - ct.psi1) < ex.psi_halfwidth ||
                (ct.indicator && std::abs(s_prime - ct.psi2) < ex.psi_halfwidth))
                out.violated.push_back("psi-window");
        } catch (const BothCoefficientsTiny&) {
            out.violated.push_back("psi-degenerate");
        } catch (const Error& e) {
            out.violated.push_back(std::string("psi: ") + e.what());
        }
    }

    out.det_analytic = -(s - s_prime) * tp.analytic;
    out.det_fd = -(s - s_prime) * tp.fd;  // axial factor dX2/du2 = -(s - s')
    out.rel_err = detail::rel_residual(out.det_analytic, out.det_fd);
    out.pass = out.violated.empty() && std::abs(out.det_fd) > jopts.det_floor &&
               out.rel_err < 1e-5;
    return out;
}

}  // namespace billiard
