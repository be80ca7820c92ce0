#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "billiard/domain.hpp"
#include "billiard/errors.hpp"
#include "billiard/vec.hpp"

namespace billiard {

enum class TraceDirection { Backward, Forward };

struct TraceOptions {
    TraceDirection direction = TraceDirection::Backward;
    std::optional<double> horizon_time;
    std::optional<double> horizon_length;  // cross-section path length
    double eps_grazing = 1e-10;            // relative to cross-section speed
    long bounce_cap = 1'000'000;
    double speed_min = 0.0;                // admissible band on |v_cs|, mirrors V^N
    double speed_max = std::numeric_limits<double>::infinity();
    double residual_factor = 1e-11;        // Newton residual target, times diam
    double launch_tau_window = 1e-7;       // launch-point exclusion in tau
    double launch_s_floor = 1e-9;          // times diam / |v|
    double inflection_tau_tol = 1e-7;      // window for inflection classification
};

struct PhasePoint {
    Vec3 x;
    Vec3 v;
    double t = 0.0;
};

enum class GrazingClass { NonGrazing, Concave, Convex, InflectionOutward, InflectionInward };

inline const char* to_string(GrazingClass g) {
    switch (g) {
        case GrazingClass::NonGrazing: return "none";
        case GrazingClass::Concave: return "concave";
        case GrazingClass::Convex: return "convex";
        case GrazingClass::InflectionOutward: return "inflection+";
        case GrazingClass::InflectionInward: return "inflection-";
    }
    return "?";
}

struct BounceEvent {
    int index = 0;       // k, 1-based
    double t = 0.0;      // t^k
    Vec3 x;              // x^k, axial component lifted mod H
    int curve_id = -1;
    double tau = 0.0;
    Vec3 v_pre;          // velocity transported along the incoming chord
    Vec3 v_post;         // v^k, after specular reflection
    double incidence = 0.0;  // |v . n|
    GrazingClass grazing = GrazingClass::NonGrazing;
};

enum class Termination {
    HorizonTime,
    HorizonLength,
    ConvexGrazingStop,
    InwardInflectionTrap,
    BounceCap,
    SolverFailure,
};

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::HorizonTime: return "horizon-time";
        case Termination::HorizonLength: return "horizon-length";
        case Termination::ConvexGrazingStop: return "convex-grazing-stop";
        case Termination::InwardInflectionTrap: return "inward-inflection-trap";
        case Termination::BounceCap: return "bounce-cap";
        case Termination::SolverFailure: return "solver-failure";
    }
    return "?";
}

struct SpecularCycle {
    PhasePoint origin;
    std::vector<BounceEvent> events;
    Termination termination = Termination::HorizonTime;
    double path_length = 0.0;  // cross-section
    std::string failure_detail;
};

// Specular reflection R v = v - 2 (n.v) n. Cross-section normals leave the
// axial component untouched.
inline Vec3 reflect(Vec3 v, Vec3 n) {
    const double d = dot(n, v);
    return v - 2.0 * d * n;
}

inline Vec2 reflect(Vec2 v, Vec2 n) {
    const double d = dot(n, v);
    return v - 2.0 * d * n;
}

// X2(s) = (x2 - (t - s) v2) mod H; V2 is invariant.
inline double lift_cylinder_axial(double x2, double v2, double t, double s, double H) {
    double r = std::fmod(x2 - (t - s) * v2, H);
    if (r < 0) r += H;
    return r;
}

inline Vec3 lift_cylinder(const PhasePoint& phase, double s, double H, Vec2 cross_pos) {
    return Vec3(cross_pos, lift_cylinder_axial(phase.x.x2, phase.v.x2, phase.t, s, H));
}

namespace detail {

struct RayHit {
    double lambda = 0.0;  // distance along the unit direction
    int curve_id = -1;
    double tau = 0.0;
    bool tangential = false;
};

struct LaunchExclusion {
    int curve_id = -1;
    double tau = 0.0;
};

inline bool excluded(const AnalyticCurve& c, const LaunchExclusion& ex, int id, double tau,
                     double window) {
    if (ex.curve_id != id) return false;
    double d = tau - ex.tau;
    if (c.closed()) {
        const double per = c.period();
        d = std::remainder(d, per);
    }
    return std::abs(d) < window;
}

// Exact ray/circle intersection for the fast path.
inline void circle_hits(const Domain& dom, int id, Vec2 x, Vec2 dir, double lambda_floor,
                        const LaunchExclusion& ex, double tau_window, double accept,
                        std::vector<RayHit>& out) {
    const auto& cd = dom.circle_data(id);
    const Vec2 rel = cd.center - x;
    const double proj = dot(dir, rel);       // along-ray closest approach
    const double off = cross(dir, rel);      // signed line distance to center
    const auto tau_of = [&](Vec2 p) {
        const Vec2 u = (p - cd.center) / cd.radius;
        const double a = std::atan2(cd.sign * u.y, u.x);
        return a < 0 ? a + 2.0 * std::numbers::pi : a;
    };
    const double margin = std::abs(off) - cd.radius;
    if (margin > accept) return;  // line misses the circle
    if (margin >= -accept) {
        // tangential touch at the closest approach
        if (proj > lambda_floor) {
            const Vec2 foot = x + proj * dir;
            const Vec2 p = cd.center + cd.radius * (foot - cd.center).normalized();
            const double tau = tau_of(p);
            if (!excluded(dom.curve(id), ex, id, tau, tau_window))
                out.push_back({proj, id, tau, true});
        }
        return;
    }
    const double half = std::sqrt(std::max(0.0, cd.radius * cd.radius - off * off));
    for (const double lam : {proj - half, proj + half}) {
        if (lam <= lambda_floor) continue;
        const Vec2 p = cd.center + (x + lam * dir - cd.center).normalized() * cd.radius;
        const double tau = tau_of(p);
        if (excluded(dom.curve(id), ex, id, tau, tau_window)) continue;
        out.push_back({lam, id, tau, false});
    }
}

struct NewtonResult {
    bool converged = false;
    bool near_singular = false;
    double lambda = 0.0, tau = 0.0;
};

inline NewtonResult newton_crossing(const AnalyticCurve& c, Vec2 x, Vec2 dir, double lambda0,
                                    double tau0, double res_tol) {
    NewtonResult r;
    double lam = lambda0, tau = tau0;
    for (int it = 0; it < 60; ++it) {
        const Vec2 F = x + lam * dir - c.pos(tau);
        if (F.norm() < res_tol) {
            r.converged = true;
            r.lambda = lam;
            r.tau = tau;
            return r;
        }
        const Vec2 d = c.d1(tau);
        const double det = cross(dir, -d);  // det [dir | -alpha']
        if (std::abs(det) < 1e-8 * d.norm()) {
            r.near_singular = true;
            return r;
        }
        // solve [dir, -d] (dl, dt)^T = -F
        const double dl = (-F.x * (-d.y) - (-d.x) * (-F.y)) / det;
        const double dt = (dir.x * (-F.y) - (-F.x) * dir.y) / det;
        lam += dl;
        tau += dt;
    }
    return r;
}

// Minimize the signed line offset h(tau) = dir x (alpha(tau) - x) within a
// parameter window; used to certify tangency vs clean miss. A shallow double
// crossing hidden inside the window (extremum of h on the far side of zero)
// is recovered by bisection on both sub-brackets.
inline bool tangency_refine(const AnalyticCurve& c, Vec2 x, Vec2 dir, double tau_a, double tau_b,
                            double accept, double lambda_floor, RayHit& hit,
                            std::vector<RayHit>* extra = nullptr, int curve_id = -1,
                            bool* zero_at_launch = nullptr) {
    double tau = 0.5 * (tau_a + tau_b);
    for (int it = 0; it < 80; ++it) {
        const double hp = cross(dir, c.d1(tau));
        const double hpp = cross(dir, c.d2(tau));
        if (std::abs(hpp) < 1e-300) break;
        double step = hp / hpp;
        const double span = (tau_b - tau_a);
        step = std::clamp(step, -span, span);
        tau -= step;
        if (std::abs(step) < 1e-14) break;
    }
    const double h = cross(dir, c.pos(tau) - x);
    if (std::abs(h) > accept) {
        if (extra) {
            for (auto [lo, hi] : {std::pair{tau_a, tau}, std::pair{tau, tau_b}}) {
                double flo = cross(dir, c.pos(lo) - x), fhi = cross(dir, c.pos(hi) - x);
                if ((flo < 0) == (fhi < 0)) continue;
                for (int it = 0; it < 100; ++it) {
                    const double m = 0.5 * (lo + hi);
                    const double fm = cross(dir, c.pos(m) - x);
                    if ((flo < 0) == (fm < 0)) { lo = m; flo = fm; } else { hi = m; fhi = fm; }
                }
                const double tz = 0.5 * (lo + hi);
                const double lam = dot(dir, c.pos(tz) - x);
                if (lam > lambda_floor) extra->push_back({lam, curve_id, tz, false});
                else if (zero_at_launch) *zero_at_launch = true;
            }
        }
        return false;
    }
    const double lam = dot(dir, c.pos(tau) - x);
    if (lam <= lambda_floor) {
        if (zero_at_launch) *zero_at_launch = true;
        return false;
    }
    hit.lambda = lam;
    hit.tau = tau;
    hit.tangential = true;
    return true;
}

inline void generic_hits(const Domain& dom, int id, Vec2 x, Vec2 dir, double lambda_floor,
                         const LaunchExclusion& ex, double tau_window, double res_tol,
                         double accept, std::vector<RayHit>& out) {
    const AnalyticCurve& c = dom.curve(id);
    const Polyline& pl = dom.polyline(id);
    const std::size_t n = pl.pts.size();
    std::vector<double> co(n), de(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 r = pl.pts[i] - x;
        co[i] = cross(dir, r);
        de[i] = dot(dir, r);
    }
    const double band = 4.0 * pl.max_sagitta + 10.0 * accept;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const bool straddle = (co[i] <= 0 && co[i + 1] > 0) || (co[i] > 0 && co[i + 1] <= 0);
        if (straddle) {
            if (std::max(de[i], de[i + 1]) <= lambda_floor) continue;
            const double f = co[i] / (co[i] - co[i + 1]);
            const double tau0 = pl.taus[i] + f * (pl.taus[i + 1] - pl.taus[i]);
            const double lam0 = de[i] + f * (de[i + 1] - de[i]);
            NewtonResult nr = newton_crossing(c, x, dir, lam0, tau0, res_tol);
            if (nr.converged && nr.lambda > lambda_floor &&
                !excluded(c, ex, id, c.closed() ? c.wrap(nr.tau) : nr.tau, tau_window)) {
                if (!c.closed() && (nr.tau < c.tau_lo() - 1e-12 || nr.tau > c.tau_hi() + 1e-12))
                    continue;
                out.push_back({nr.lambda, id, c.closed() ? c.wrap(nr.tau) : nr.tau, false});
                continue;
            }
            if (nr.near_singular || !nr.converged) {
                RayHit hit;
                hit.curve_id = id;
                std::vector<RayHit> recovered;
                bool zero_at_launch = false;
                if (tangency_refine(c, x, dir, pl.taus[i == 0 ? 0 : i - 1],
                                    pl.taus[std::min(i + 2, n - 1)], accept, lambda_floor, hit,
                                    &recovered, id, &zero_at_launch)) {
                    if (!excluded(c, ex, id, hit.tau, tau_window)) out.push_back(hit);
                } else if (!recovered.empty()) {
                    for (auto& r : recovered)
                        if (!excluded(c, ex, id, r.tau, tau_window)) out.push_back(r);
                } else if (!zero_at_launch) {
                    const double h_at = std::abs(cross(dir, c.pos(tau0) - x));
                    if (h_at < 10 * accept)
                        throw TangencyAmbiguous("cannot certify crossing vs tangency");
                }
            }
        } else if (std::abs(co[i]) < band && de[i] > lambda_floor) {
            // candidate tangential touch: local |offset| minimum
            const bool local_min = (i == 0 || std::abs(co[i]) <= std::abs(co[i - 1])) &&
                                   std::abs(co[i]) <= std::abs(co[i + 1]);
            if (!local_min) continue;
            RayHit hit;
            hit.curve_id = id;
            std::vector<RayHit> recovered;
            if (tangency_refine(c, x, dir, pl.taus[i == 0 ? 0 : i - 1],
                                pl.taus[std::min(i + 2, n - 1)], accept, lambda_floor, hit,
                                &recovered, id)) {
                if (!c.closed() && (hit.tau < c.tau_lo() - 1e-12 || hit.tau > c.tau_hi() + 1e-12))
                    continue;
                if (!excluded(c, ex, id, hit.tau, tau_window)) out.push_back(hit);
            } else {
                for (auto& r : recovered) {
                    if (!c.closed() && (r.tau < c.tau_lo() - 1e-12 || r.tau > c.tau_hi() + 1e-12))
                        continue;
                    if (!excluded(c, ex, id, r.tau, tau_window)) out.push_back(r);
                }
            }
        }
    }
}

}  // namespace detail

struct ExitHit {
    double time = 0.0;  // flight time to the boundary
    Vec2 point;
    int curve_id = -1;
    double tau = 0.0;
    bool tangential = false;
};

// Smallest positive flight time with x + s v on the boundary. The launch
// point itself is excluded by a tau window and a flight-time floor.
inline std::optional<ExitHit> first_exit_opt(const Domain& domain, Vec2 x, Vec2 v,
                                             const TraceOptions& opts,
                                             detail::LaunchExclusion ex = {}) {
    const double vn = v.norm();
    if (vn <= 0) throw ValidationError("zero cross-section velocity");
    const Vec2 dir = v / vn;
    const double diam = domain.diameter();
    const double lambda_floor = opts.launch_s_floor * diam;
    const double res_tol = opts.residual_factor * diam;
    const double accept = 1e-9 * diam;
    std::vector<detail::RayHit> hits;
    for (int id = 0; id < domain.curve_count(); ++id) {
        if (domain.circle_data(id).is_circle)
            detail::circle_hits(domain, id, x, dir, lambda_floor, ex, opts.launch_tau_window,
                                accept, hits);
        else
            detail::generic_hits(domain, id, x, dir, lambda_floor, ex, opts.launch_tau_window,
                                 res_tol, accept, hits);
    }
    if (hits.empty()) return std::nullopt;
    // Deduplicate near-identical hits (a tangency may be found twice).
    std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
        return a.lambda < b.lambda || (a.lambda == b.lambda && a.curve_id < b.curve_id);
    });
    const detail::RayHit& best = hits.front();
    ExitHit out;
    out.time = best.lambda / vn;
    out.curve_id = best.curve_id;
    out.tau = best.tau;
    out.point = domain.curve(best.curve_id).pos(best.tau);  // snap onto the curve
    out.tangential = best.tangential;
    return out;
}

inline ExitHit first_exit(const Domain& domain, Vec2 x, Vec2 v, const TraceOptions& opts) {
    auto hit = first_exit_opt(domain, x, v, opts);
    if (!hit) {
        if (!domain.is_sandbox()) throw NoIntersection("ray found no boundary in closed domain");
        throw NoIntersection("ray escaped the sandbox scene");
    }
    return *hit;
}

// Grazing class of a boundary phase per the boundary decomposition: concave /
// convex by the interval containing tau, inflection by proximity to a
// curvature zero signed by the local sign pattern and travel direction.
inline GrazingClass classify_grazing_at(const Domain& domain, const BoundaryDecomposition& decomp,
                                        int curve_id, double tau, Vec3 v,
                                        const TraceOptions& opts) {
    const AnalyticCurve& c = domain.curve(curve_id);
    const Vec2 n = c.outward_normal(tau);
    const Vec2 vcs = v.cs();
    const double incidence = std::abs(dot(n, vcs));
    if (incidence > opts.eps_grazing * vcs.norm()) return GrazingClass::NonGrazing;
    const auto& dec = decomp.per_curve.at(static_cast<std::size_t>(curve_id));
    for (const auto& ip : dec.inflections) {
        double d = tau - ip.tau;
        if (c.closed()) d = std::remainder(d, c.period());
        if (std::abs(d) < opts.inflection_tau_tol) {
            // For a tag-Plus zero (kappa<0 before, >0 after), travel along
            // -alpha' is the outward inflection phase; tag-Minus swaps it.
            const double along = dot(vcs, c.d1(tau));
            const bool outward = (ip.sign == InflectionSign::Plus) ? (along < 0) : (along > 0);
            return outward ? GrazingClass::InflectionOutward : GrazingClass::InflectionInward;
        }
    }
    const auto near_endpoint = [&](const std::pair<double, double>& iv) {
        double da = tau - iv.first, db = tau - iv.second;
        if (c.closed()) {
            da = std::remainder(da, c.period());
            db = std::remainder(db, c.period());
        }
        return std::min(std::abs(da), std::abs(db)) < opts.inflection_tau_tol;
    };
    for (const auto& iv : dec.concave) {
        if (detail::tau_in_interval(c, tau, iv)) {
            if (!dec.all_concave && near_endpoint(iv))
                throw AmbiguousLocation("grazing parameter within tolerance of interval endpoint");
            return GrazingClass::Concave;
        }
    }
    return GrazingClass::Convex;
}

inline GrazingClass classify_grazing(const BounceEvent& event, const Domain& domain,
                                     const BoundaryDecomposition& decomp,
                                     const TraceOptions& opts) {
    return classify_grazing_at(domain, decomp, event.curve_id, event.tau, event.v_pre, opts);
}

// Iterate first_exit + reflect until a stop rule fires. Backward traces run
// along -v with decreasing times (the specular cycle convention); forward
// traces mirror it with increasing times.
inline SpecularCycle trace_cycles(const Domain& domain, const PhasePoint& phase,
                                  const TraceOptions& opts,
                                  const BoundaryDecomposition* decomp = nullptr) {
    const double vcs_norm = phase.v.cs().norm();
    if (vcs_norm < opts.speed_min || vcs_norm > opts.speed_max)
        throw SpeedOutOfBand("cross-section speed outside the admissible band");
    SpecularCycle cyc;
    cyc.origin = phase;
    const double dirsign = (opts.direction == TraceDirection::Backward) ? -1.0 : 1.0;

    std::optional<BoundaryDecomposition> local_decomp;
    if (!decomp) {
        local_decomp = decompose_boundary(domain);
        decomp = &*local_decomp;
    }

    double t = phase.t;
    Vec3 v = phase.v;
    Vec2 x = phase.x.cs();
    detail::LaunchExclusion ex;

    // Launch on the boundary: set the exclusion window and apply the grazing
    // stop rules to the initial phase.
    {
        double best = std::numeric_limits<double>::infinity();
        for (int id = 0; id < domain.curve_count(); ++id) {
            const auto& pl = domain.polyline(id);
            for (std::size_t i = 0; i < pl.pts.size(); ++i) {
                const double d = (pl.pts[i] - x).norm();
                if (d < best) {
                    best = d;
                    if (d < 1e-6 * domain.diameter()) {
                        ex.curve_id = id;
                        ex.tau = pl.taus[i];
                    }
                }
            }
        }
        if (ex.curve_id >= 0) {
            // refine foot parameter
            const AnalyticCurve& c = domain.curve(ex.curve_id);
            double tau = ex.tau;
            for (int it = 0; it < 50; ++it) {
                const Vec2 d = c.d1(tau);
                const double f = dot(x - c.pos(tau), d);
                const double fp = dot(x - c.pos(tau), c.d2(tau)) - d.norm2();
                if (std::abs(fp) < 1e-300) break;
                tau -= f / fp;
            }
            ex.tau = c.closed() ? c.wrap(tau) : tau;
            if ((c.pos(ex.tau) - x).norm() > 1e-7 * domain.diameter()) ex.curve_id = -1;
        }
        if (ex.curve_id >= 0) {
            const GrazingClass g =
                classify_grazing_at(domain, *decomp, ex.curve_id, ex.tau, v, opts);
            if (g == GrazingClass::Convex) {
                cyc.termination = Termination::ConvexGrazingStop;
                return cyc;
            }
            // The inward phase blocks backward propagation; the outward one
            // blocks forward propagation. The other sign continues straight.
            const GrazingClass trap = (opts.direction == TraceDirection::Backward)
                                          ? GrazingClass::InflectionInward
                                          : GrazingClass::InflectionOutward;
            if (g == trap) {
                cyc.termination = Termination::InwardInflectionTrap;
                return cyc;
            }
        }
    }

    int k = 0;
    while (true) {
        if (k >= opts.bounce_cap) {
            cyc.termination = Termination::BounceCap;
            return cyc;
        }
        const Vec2 ray_v = dirsign * v.cs();
        std::optional<ExitHit> hit;
        try {
            hit = first_exit_opt(domain, x, ray_v, opts, ex);
        } catch (const Error& e) {
            cyc.termination = Termination::SolverFailure;
            cyc.failure_detail = e.what();
            return cyc;
        }
        if (!hit) {
            if (!domain.is_sandbox()) {
                cyc.termination = Termination::SolverFailure;
                cyc.failure_detail = "no boundary intersection in closed domain";
                return cyc;
            }
            cyc.termination = opts.horizon_time ? Termination::HorizonTime
                                                : Termination::HorizonLength;
            return cyc;
        }
        const double chord_len = hit->time * v.cs().norm();
        // Time horizon cuts mid-chord: the particle is still in flight.
        if (opts.horizon_time && std::abs(t + dirsign * hit->time - phase.t) > *opts.horizon_time) {
            cyc.path_length += std::max(0.0, *opts.horizon_time - std::abs(t - phase.t)) * v.cs().norm();
            cyc.termination = Termination::HorizonTime;
            return cyc;
        }
        const double t_new = t + dirsign * hit->time;
        const AnalyticCurve& c = domain.curve(hit->curve_id);
        const Vec2 n2 = c.outward_normal(hit->tau);
        const Vec3 n3{n2.x, 0.0, n2.y};
        BounceEvent ev;
        ev.index = ++k;
        ev.t = t_new;
        ev.curve_id = hit->curve_id;
        ev.tau = hit->tau;
        ev.x = Vec3(hit->point, lift_cylinder_axial(phase.x.x2, phase.v.x2, phase.t, t_new, domain.H()));
        ev.v_pre = v;
        ev.incidence = std::abs(dot(n3, v));
        ev.grazing = classify_grazing_at(domain, *decomp, hit->curve_id, hit->tau, v, opts);
        ev.v_post = (ev.grazing == GrazingClass::NonGrazing) ? reflect(v, n3) : v;
        cyc.events.push_back(ev);
        cyc.path_length += chord_len;

        t = t_new;
        x = hit->point;
        v = ev.v_post;
        ex = {hit->curve_id, hit->tau};

        if (ev.grazing == GrazingClass::Convex) {
            cyc.termination = Termination::ConvexGrazingStop;
            return cyc;
        }
        const GrazingClass trap = (opts.direction == TraceDirection::Backward)
                                      ? GrazingClass::InflectionInward
                                      : GrazingClass::InflectionOutward;
        if (ev.grazing == trap) {
            cyc.termination = Termination::InwardInflectionTrap;
            return cyc;
        }
        // The chord crossing the length horizon is recorded, then the trace stops.
        if (opts.horizon_length && cyc.path_length > *opts.horizon_length) {
            cyc.termination = Termination::HorizonLength;
            return cyc;
        }
    }
}

// Bounce count N(x, v, L): the first k whose cumulative chord length exceeds
// L; when the trace is trapped at an inward inflection first, the trapping
// index is returned instead.
inline long bounce_count(const Domain& domain, const PhasePoint& phase, double L,
                         TraceOptions opts = {},
                         const BoundaryDecomposition* decomp = nullptr) {
    opts.horizon_time.reset();
    opts.horizon_length = L * (1.0 + 1e-12) + domain.diameter();  // one chord past L
    SpecularCycle cyc = trace_cycles(domain, phase, opts, decomp);
    double acc = 0.0;
    Vec2 prev = phase.x.cs();
    for (const auto& ev : cyc.events) {
        acc += (ev.x.cs() - prev).norm();
        prev = ev.x.cs();
        if (acc > L) return ev.index;
    }
    if (cyc.termination == Termination::InwardInflectionTrap)
        return cyc.events.empty() ? 0 : cyc.events.back().index;
    if (cyc.termination == Termination::ConvexGrazingStop && !cyc.events.empty())
        return cyc.events.back().index;
    throw BounceCapExceeded("bounce count undefined within the cap");
}

// Phase of the specular flow at time s: backward for s <= t, forward for
// s > t. Positions interpolate linearly inside a chord; the velocity is the
// chord velocity (post-reflection at bounce times).
inline PhasePoint specular_flow(const Domain& domain, const PhasePoint& phase, double s,
                                TraceOptions opts = {},
                                const BoundaryDecomposition* decomp = nullptr) {
    const double T = std::abs(phase.t - s);
    opts.direction = (s <= phase.t) ? TraceDirection::Backward : TraceDirection::Forward;
    opts.horizon_time = T * (1.0 + 1e-12) + 1e-300;
    opts.horizon_length.reset();
    const SpecularCycle cyc = trace_cycles(domain, phase, opts, decomp);
    if (cyc.termination == Termination::SolverFailure)
        throw TraceFailure("specular flow: " + cyc.failure_detail);
    double t0 = phase.t;
    Vec3 x0 = phase.x;
    Vec3 v0 = phase.v;
    for (const auto& ev : cyc.events) {
        const bool reached = (s <= phase.t) ? (s >= ev.t) : (s <= ev.t);
        if (reached) break;
        t0 = ev.t;
        x0 = ev.x;
        v0 = ev.v_post;
    }
    PhasePoint out;
    out.t = s;
    out.v = v0;
    const Vec2 cs = x0.cs() + (s - t0) * v0.cs();
    double x2 = std::fmod(x0.x2 + (s - t0) * v0.x2, domain.H());
    if (x2 < 0) x2 += domain.H();
    out.x = Vec3(cs, x2);
    return out;
}

// Minimum incidence and minimum inflection-distance functional
// D_I = dist(x^k, inflection set) + |n . v^k| over the cycle's events.
inline std::pair<double, double> grazing_margin(const Domain& domain, const SpecularCycle& cycle,
                                                const BoundaryDecomposition& decomp) {
    double min_inc = std::numeric_limits<double>::infinity();
    double min_di = std::numeric_limits<double>::infinity();
    std::vector<Vec2> inflection_pts;
    for (std::size_t cid = 0; cid < decomp.per_curve.size(); ++cid)
        for (const auto& ip : decomp.per_curve[cid].inflections)
            inflection_pts.push_back(domain.curve(static_cast<int>(cid)).pos(ip.tau));
    for (const auto& ev : cycle.events) {
        min_inc = std::min(min_inc, ev.incidence);
        double dist = std::numeric_limits<double>::infinity();
        for (const Vec2& p : inflection_pts) dist = std::min(dist, (ev.x.cs() - p).norm());
        if (inflection_pts.empty()) dist = domain.diameter();
        min_di = std::min(min_di, dist + ev.incidence);
    }
    return {min_inc, min_di};
}

}  // namespace billiard
