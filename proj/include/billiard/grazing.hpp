#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "billiard/domain.hpp"
#include "billiard/trajectory.hpp"

namespace billiard {

// ---------------------------------------------------------------------------
// Grazing families: forward cycles launched tangentially from a concave
// boundary interval.

struct GrazingFamily {
    int curve_id = -1;
    std::pair<double, double> interval;  // shrunken launch interval in tau
    int sign = +1;                       // launch direction = sign * tangent
    double speed = 1.0;
    std::vector<double> taus;
    std::vector<SpecularCycle> cycles;
};

inline GrazingFamily trace_grazing_family(const Domain& domain,
                                          const BoundaryDecomposition& decomp, int curve_id,
                                          std::pair<double, double> interval, int grid_size,
                                          double speed, int sign, double horizon_length,
                                          TraceOptions opts = {}) {
    if (grid_size < 2) throw EmptyInterval("family needs at least two launches");
    const double len = interval.second - interval.first;
    if (!(len > 0)) throw EmptyInterval("degenerate concave interval");
    // Shrink by 1% per side: launches stay clear of the inflection endpoints.
    const double a = interval.first + 0.01 * len;
    const double b = interval.second - 0.01 * len;

    GrazingFamily fam;
    fam.curve_id = curve_id;
    fam.interval = {a, b};
    fam.sign = sign;
    fam.speed = speed;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = horizon_length;
    opts.horizon_time.reset();

    const AnalyticCurve& c = domain.curve(curve_id);
    int live = 0;
    for (int i = 0; i < grid_size; ++i) {
        const double tau = c.wrap(a + (b - a) * i / (grid_size - 1));
        const Vec2 t = c.unit_tangent(tau);
        PhasePoint p;
        p.x = Vec3(c.pos(tau), 0.0);
        p.v = Vec3(t * (sign * speed), 0.0);
        p.t = 0.0;
        SpecularCycle cyc = trace_cycles(domain, p, opts, &decomp);
        if (!cyc.events.empty()) ++live;
        fam.taus.push_back(tau);
        fam.cycles.push_back(std::move(cyc));
    }
    if (live == 0) throw AllTrapped("every tangent launch terminated immediately");
    return fam;
}

// ---------------------------------------------------------------------------
// Sticky-vs-isolated dichotomy on the family's k-th chords.

enum class StickyVerdict { Sticky, Isolated, Degenerate };

inline const char* to_string(StickyVerdict v) {
    switch (v) {
        case StickyVerdict::Sticky: return "sticky";
        case StickyVerdict::Isolated: return "isolated";
        case StickyVerdict::Degenerate: return "degenerate";
    }
    return "?";
}

struct StickyReport {
    int k = 1;
    Vec2 point;             // least-squares concurrence candidate
    double max_residual = 0.0;  // max point-to-segment distance over the family
    StickyVerdict verdict = StickyVerdict::Degenerate;
    std::size_t family_size = 0;
    double condition = 0.0;  // normal-matrix condition number
};

namespace detail {

inline double point_to_segment(Vec2 p, Vec2 a, Vec2 b) {
    return point_segment_distance(p, a, b);
}

}  // namespace detail

// Least-squares point through the supporting lines of the k-th chords,
// validated against the segments themselves.
inline StickyReport detect_sticky_segments(const std::vector<std::pair<Vec2, Vec2>>& segments,
                                           double sticky_tol, int k = 1,
                                           std::size_t min_family_size = 8) {
    if (segments.size() < 2) throw DegenerateFamily("need at least two chords");
    StickyReport rep;
    rep.k = k;
    rep.family_size = segments.size();
    double m11 = 0, m12 = 0, m22 = 0, r1 = 0, r2 = 0;
    for (const auto& [a, b] : segments) {
        const Vec2 d = (b - a).normalized();
        // projector I - d d^T
        const double p11 = 1 - d.x * d.x, p12 = -d.x * d.y, p22 = 1 - d.y * d.y;
        m11 += p11; m12 += p12; m22 += p22;
        r1 += p11 * a.x + p12 * a.y;
        r2 += p12 * a.x + p22 * a.y;
    }
    const double tr = m11 + m22;
    const double det = m11 * m22 - m12 * m12;
    const double disc = std::sqrt(std::max(0.0, tr * tr - 4 * det));
    const double lmax = 0.5 * (tr + disc), lmin = 0.5 * (tr - disc);
    rep.condition = (lmin > 0) ? lmax / lmin : std::numeric_limits<double>::infinity();
    if (rep.condition > 1e8) {
        rep.verdict = StickyVerdict::Degenerate;
        return rep;
    }
    rep.point = {(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det};
    rep.max_residual = 0.0;
    for (const auto& [a, b] : segments)
        rep.max_residual = std::max(rep.max_residual, detail::point_to_segment(rep.point, a, b));
    const bool sticky = rep.max_residual < sticky_tol && segments.size() >= min_family_size;
    rep.verdict = sticky ? StickyVerdict::Sticky : StickyVerdict::Isolated;
    return rep;
}

// k is the 1-based bounce index: the chord from bounce k to k+1.
inline StickyReport detect_sticky(const GrazingFamily& family, int k, double sticky_tol,
                                  std::size_t min_family_size = 8) {
    if (family.cycles.size() < 2) throw DegenerateFamily("family of size < 2");
    std::vector<std::pair<Vec2, Vec2>> segments;
    for (const auto& cyc : family.cycles) {
        if (cyc.events.size() < static_cast<std::size_t>(k) + 1)
            throw InsufficientBounces("cycle lacks bounce k+1");
        for (int i = 0; i < k; ++i)
            if (cyc.events[static_cast<std::size_t>(i)].grazing != GrazingClass::NonGrazing)
                throw InsufficientBounces("grazing bounce inside 1..k");
        segments.push_back({cyc.events[static_cast<std::size_t>(k - 1)].x.cs(),
                            cyc.events[static_cast<std::size_t>(k)].x.cs()});
    }
    return detect_sticky_segments(segments, sticky_tol, k, min_family_size);
}

// ---------------------------------------------------------------------------
// Refocusing-arc example: the concave arc whose tangent launches, after one
// bounce on y = x^2/2, refocus through (1, 1).
//
// Closed forms: a backward ray from (1,1) with slope 1 + d meets the parabola
// at (d*, d*^2/2) with d* = 1 + d - sqrt(1 + d^2); the reflected slope is
// L(d) = [3 + 5d + 4d^2 + 2d^3 - 2(2 + 2d + d^2) sqrt(1+d^2)] / (1 + 2d).
// The tangency conditions Y'/X' = L and the line-through-bounce-point
// condition pin the arc pointwise as the envelope of the reflected rays:
//   X(d) = -A'(d)/L'(d),  Y(d) = A(d) + L(d) X(d),  A = -L d* + d*^2/2.

struct StickyArcSample {
    double delta = 0.0;
    Vec2 point;      // (X(d), Y(d))
    double slope = 0.0;  // L(d)
};

struct StickyExample {
    std::vector<StickyArcSample> arc;
    AnalyticCurve arc_curve;   // concave-oriented parametric arc
    Domain sandbox;            // parabola y = x^2/2 plus the arc
    Vec2 focus{1.0, 1.0};      // the sticky point of the construction
    Vec2 ray_anchor;           // (x0, -x0) on the delta = 0 tangent ray y = -x
    double rk4_max_deviation = 0.0;  // integrated-route consistency check
};

namespace detail {

struct StickyForms {
    double dstar, dstar_p, dstar_pp;
    double L, Lp, Lpp;
    double A, Ap, App;
    double X, Y, Xp, Yp;
};

inline StickyForms sticky_forms(double d) {
    StickyForms f;
    const double w = std::sqrt(1.0 + d * d);
    const double wp = d / w;
    const double wpp = 1.0 / (w * w * w);
    f.dstar = 1.0 + d - w;
    f.dstar_p = 1.0 - wp;
    f.dstar_pp = -wpp;
    const double q = 2.0 + 2.0 * d + d * d;
    const double N = 3.0 + 5.0 * d + 4.0 * d * d + 2.0 * d * d * d - 2.0 * q * w;
    const double Np = 5.0 + 8.0 * d + 6.0 * d * d - 2.0 * ((2.0 + 2.0 * d) * w + q * wp);
    const double Npp = 8.0 + 12.0 * d - 2.0 * (2.0 * w + 2.0 * (2.0 + 2.0 * d) * wp + q * wpp);
    const double D = 1.0 + 2.0 * d;
    f.L = N / D;
    f.Lp = (Np * D - 2.0 * N) / (D * D);
    f.Lpp = (Npp * D * D - 4.0 * (Np * D - 2.0 * N)) / (D * D * D);
    f.A = -f.L * f.dstar + 0.5 * f.dstar * f.dstar;
    f.Ap = -f.Lp * f.dstar - f.L * f.dstar_p + f.dstar * f.dstar_p;
    f.App = -f.Lpp * f.dstar - 2.0 * f.Lp * f.dstar_p - f.L * f.dstar_pp +
            f.dstar_p * f.dstar_p + f.dstar * f.dstar_pp;
    f.X = -f.Ap / f.Lp;
    f.Y = f.A + f.L * f.X;
    f.Xp = (f.Ap * f.Lpp - f.App * f.Lp) / (f.Lp * f.Lp);
    f.Yp = f.L * f.Xp;
    return f;
}

}  // namespace detail

// Evaluation helpers exposed for tests and the CLI.
inline double sticky_delta_star(double d) { return 1.0 + d - std::sqrt(1.0 + d * d); }
inline double sticky_slope(double d) { return detail::sticky_forms(d).L; }

// The tangency conditions determine the arc uniquely (it is the envelope of
// the reflected-ray family); x0 < 0 selects the reported anchor point
// (x0, -x0) on the delta = 0 tangent ray y = -x and is validated only.
inline StickyExample build_sticky_example(double delta_max, int samples, double x0) {
    if (!(delta_max > 0.0) || delta_max > 0.2)
        throw ValidationError("delta_max must lie in (0, 0.2]");
    if (samples < 2) throw ValidationError("need at least two samples");
    if (!(x0 < 0.0)) throw ValidationError("x0 must be negative");

    StickyExample out;
    out.ray_anchor = {x0, -x0};
    out.arc.reserve(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) {
        const double d = delta_max * i / (samples - 1);
        const detail::StickyForms f = detail::sticky_forms(d);
        if (!(f.Lp > 0.0)) throw StepFailure("L'(delta) lost positivity");
        out.arc.push_back({d, {f.X, f.Y}, f.L});
    }

    // Consistency of the integrated route (classic RK4 on X' and Y' = L X')
    // against the closed forms.
    {
        const double d0 = 0.0;
        const detail::StickyForms f0 = detail::sticky_forms(d0);
        double X = f0.X, Y = f0.Y;
        const int steps = std::max(64, samples);
        const double h = delta_max / steps;
        const auto rhs = [](double d) {
            const detail::StickyForms f = detail::sticky_forms(d);
            return Vec2{f.Xp, f.Yp};
        };
        double max_dev = 0.0;
        for (int i = 0; i < steps; ++i) {
            const double d = d0 + h * i;
            const Vec2 k1 = rhs(d);
            const Vec2 k2 = rhs(d + h / 2);
            const Vec2 k4 = rhs(d + h);
            // k3 == k2 here: the right-hand side depends on delta only
            X += h / 6.0 * (k1.x + 4.0 * k2.x + k4.x);
            Y += h / 6.0 * (k1.y + 4.0 * k2.y + k4.y);
            const detail::StickyForms f = detail::sticky_forms(d + h);
            max_dev = std::max(max_dev, std::hypot(X - f.X, Y - f.Y));
        }
        out.rk4_max_deviation = max_dev;
    }

    // Concave orientation: parametrize by sigma = delta_max - delta so the
    // signed curvature is positive (launch sign -1 points at the parabola).
    const double dm = delta_max;
    const auto pos = [dm](double sigma) {
        const detail::StickyForms f = detail::sticky_forms(dm - sigma);
        return Vec2{f.X, f.Y};
    };
    const auto d1 = [dm](double sigma) {
        const detail::StickyForms f = detail::sticky_forms(dm - sigma);
        return Vec2{-f.Xp, -f.Yp};
    };
    AnalyticCurve arc = AnalyticCurve::parametric_arc(pos, d1, 0.0, delta_max);
    AnalyticCurve parabola = AnalyticCurve::poly_graph({0.0, 0.0, 0.5}, -1.5, 3.5);
    out.sandbox = Domain::sandbox({parabola, arc});
    out.arc_curve = std::move(arc);
    return out;
}

// ---------------------------------------------------------------------------
// Inflection-ray atlas: all particle paths launched tangentially from the
// inflection points, up to a length horizon.

struct AtlasSegment {
    Vec2 a, b;
    Vec2 dir;             // unit chord direction (paths carry +-dir labels)
    int inflection = -1;  // index into launches
};

struct AtlasLaunch {
    int curve_id = -1;
    double tau = 0.0;
    Vec2 x;
    Vec2 v;  // unit tangent launch velocity (+- alpha')
    GrazingClass cls = GrazingClass::NonGrazing;
};

struct InflectionAtlas {
    std::vector<AtlasLaunch> launches;
    std::vector<AtlasSegment> segments;

    bool contains(Vec2 p, double clearance) const {
        for (const auto& s : segments)
            if (detail::point_to_segment(p, s.a, s.b) < clearance) return true;
        return false;
    }
};

inline InflectionAtlas inflection_ray_atlas(const Domain& domain,
                                            const BoundaryDecomposition& decomp,
                                            double length_horizon, TraceOptions opts = {}) {
    InflectionAtlas atlas;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = length_horizon;
    opts.horizon_time.reset();
    for (int cid = 0; cid < domain.curve_count(); ++cid) {
        const AnalyticCurve& c = domain.curve(cid);
        for (const auto& ip : decomp.per_curve[static_cast<std::size_t>(cid)].inflections) {
            const Vec2 that = c.unit_tangent(ip.tau);
            for (int p : {+1, -1}) {
                AtlasLaunch launch;
                launch.curve_id = cid;
                launch.tau = ip.tau;
                launch.x = c.pos(ip.tau);
                launch.v = static_cast<double>(p) * that;
                launch.cls = classify_grazing_at(domain, decomp, cid, ip.tau,
                                                 Vec3(launch.v, 0.0), opts);
                // the ray is traceable into the locally concave side: along -v
                // for the outward phase, along +v for the inward one
                const Vec2 ray = (launch.cls == GrazingClass::InflectionOutward)
                                     ? -launch.v
                                     : launch.v;
                const int idx = static_cast<int>(atlas.launches.size());
                atlas.launches.push_back(launch);
                PhasePoint ph;
                ph.x = Vec3(launch.x, 0.0);
                ph.v = Vec3(ray, 0.0);
                SpecularCycle cyc;
                try {
                    cyc = trace_cycles(domain, ph, opts, &decomp);
                } catch (const Error&) {
                    continue;
                }
                Vec2 prev = launch.x;
                for (const auto& ev : cyc.events) {
                    const Vec2 seg = ev.x.cs() - prev;
                    if (seg.norm() > 0)
                        atlas.segments.push_back({prev, ev.x.cs(), seg.normalized(), idx});
                    prev = ev.x.cs();
                }
            }
        }
    }
    return atlas;
}

// ---------------------------------------------------------------------------
// Sampled excluded-direction diagnostics: directions whose K-bounce cycle
// grazes are bracketed by itinerary changes between adjacent grid directions.

struct ExcludedDirections {
    int grid_size = 0;
    int angular_points = 0;            // directions actually sampled
    std::vector<double> flagged_angles;
    double fraction = 0.0;             // flagged cells / sampled cells
    double measure_estimate = 0.0;     // fraction times the velocity-band area
};

inline ExcludedDirections sample_excluded_directions(const Domain& domain,
                                                     const BoundaryDecomposition& decomp,
                                                     Vec2 x, int grid_size, int K,
                                                     double horizon_length,
                                                     double band_lo = 0.1, double band_hi = 10.0,
                                                     TraceOptions opts = {}) {
    ExcludedDirections out;
    out.grid_size = grid_size;
    opts.direction = TraceDirection::Forward;
    opts.horizon_length = horizon_length;
    opts.horizon_time.reset();
    opts.bounce_cap = std::max<long>(K + 8, 64);

    // On-boundary launch points sample the inward half-circle only.
    double theta_lo = 0.0, span = 2.0 * std::numbers::pi;
    bool on_boundary = false;
    if (domain.boundary_distance_estimate(x) < 1e-9 * domain.diameter()) {
        // nearest boundary normal
        double best = std::numeric_limits<double>::infinity();
        Vec2 n{1, 0};
        for (int cid = 0; cid < domain.curve_count(); ++cid) {
            const auto& pl = domain.polyline(cid);
            for (std::size_t i = 0; i < pl.pts.size(); ++i) {
                const double d = (pl.pts[i] - x).norm();
                if (d < best) {
                    best = d;
                    n = domain.curve(cid).outward_normal(pl.taus[i]);
                }
            }
        }
        const double theta_n = std::atan2(n.y, n.x);
        theta_lo = theta_n + 0.5 * std::numbers::pi;
        span = std::numbers::pi;
        on_boundary = true;
    }

    std::vector<std::vector<int>> itineraries;
    std::vector<bool> direct(static_cast<std::size_t>(grid_size), false);
    itineraries.reserve(static_cast<std::size_t>(grid_size));
    for (int i = 0; i < grid_size; ++i) {
        const double theta = on_boundary
                                 ? theta_lo + span * (i + 1) / (grid_size + 1)
                                 : theta_lo + span * i / grid_size;
        const Vec2 v{std::cos(theta), std::sin(theta)};
        std::vector<int> itin;
        try {
            PhasePoint ph;
            ph.x = Vec3(x, 0.0);
            ph.v = Vec3(v, 0.0);
            const SpecularCycle cyc = trace_cycles(domain, ph, opts, &decomp);
            for (std::size_t k = 0; k < std::min<std::size_t>(cyc.events.size(),
                                                              static_cast<std::size_t>(K)); ++k) {
                itin.push_back(cyc.events[k].curve_id);
                if (cyc.events[k].grazing != GrazingClass::NonGrazing)
                    direct[static_cast<std::size_t>(i)] = true;
            }
            if (cyc.termination == Termination::ConvexGrazingStop ||
                cyc.termination == Termination::InwardInflectionTrap)
                direct[static_cast<std::size_t>(i)] = true;
        } catch (const Error&) {
            itin.push_back(-2);
        }
        itineraries.push_back(std::move(itin));
    }

    std::vector<bool> flagged = direct;
    const int cells = on_boundary ? grid_size - 1 : grid_size;
    for (int i = 0; i < cells; ++i) {
        const int j = (i + 1) % grid_size;
        if (itineraries[static_cast<std::size_t>(i)] != itineraries[static_cast<std::size_t>(j)]) {
            flagged[static_cast<std::size_t>(i)] = true;
            flagged[static_cast<std::size_t>(j)] = true;
        }
    }
    int count = 0;
    for (int i = 0; i < grid_size; ++i)
        if (flagged[static_cast<std::size_t>(i)]) {
            ++count;
            const double theta = on_boundary
                                     ? theta_lo + span * (i + 1) / (grid_size + 1)
                                     : theta_lo + span * i / grid_size;
            out.flagged_angles.push_back(theta);
        }
    out.angular_points = grid_size;
    out.fraction = static_cast<double>(count) / grid_size;
    const double band_area = std::numbers::pi * (band_hi * band_hi - band_lo * band_lo);
    out.measure_estimate = out.fraction * band_area * (span / (2.0 * std::numbers::pi));
    return out;
}

}  // namespace billiard
