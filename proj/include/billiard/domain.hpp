#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "billiard/curve.hpp"
#include "billiard/errors.hpp"
#include "billiard/vec.hpp"

namespace billiard {

namespace detail {

// Dense sample cache used by the intersection pre-filter and winding tests.
struct Polyline {
    std::vector<double> taus;
    std::vector<Vec2> pts;
    double max_kappa = 0.0;
    double max_sagitta = 0.0;  // bound on curve-to-chord distance per segment
};

inline Polyline sample_curve(const AnalyticCurve& c, std::size_t min_samples) {
    Polyline pl;
    double max_kappa = 0.0;
    const std::size_t probe = 512;
    for (std::size_t i = 0; i <= probe; ++i) {
        const double tau = c.tau_lo() + c.period() * i / probe;
        max_kappa = std::max(max_kappa, std::abs(curvature(c, tau)));
    }
    pl.max_kappa = max_kappa;
    // Segment count proportional to total turning; floor keeps flat arcs sane.
    const double arclen = c.arclength(c.tau_lo(), c.tau_hi());
    std::size_t n = std::max<std::size_t>(min_samples,
        static_cast<std::size_t>(std::ceil(24.0 * arclen * max_kappa)));
    n = std::min<std::size_t>(n, 1 << 15);
    pl.taus.resize(n + 1);
    pl.pts.resize(n + 1);
    double max_seg = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double tau = c.tau_lo() + c.period() * i / n;
        pl.taus[i] = tau;
        pl.pts[i] = c.pos(tau);
        if (i > 0) max_seg = std::max(max_seg, (pl.pts[i] - pl.pts[i - 1]).norm());
    }
    pl.max_sagitta = 0.125 * max_seg * max_seg * max_kappa;
    return pl;
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.norm2();
    double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (a + ab * t)).norm();
}

}  // namespace detail

// Cross section Omega = outer \ (hole_1 u ... u hole_M), periodic in the axial
// direction with period H. Sandbox scenes hold open arcs only and suspend the
// closed-domain invariants.
class Domain {
public:
    static Domain closed(AnalyticCurve outer, std::vector<AnalyticCurve> holes, double H) {
        Domain d;
        d.sandbox_ = false;
        d.H_ = H;
        d.curves_.push_back(std::move(outer));
        for (auto& h : holes) d.curves_.push_back(std::move(h));
        d.finalize();
        d.validate_closed();
        return d;
    }

    static Domain sandbox(std::vector<AnalyticCurve> arcs, double H = 1.0) {
        Domain d;
        d.sandbox_ = true;
        d.H_ = H;
        d.curves_ = std::move(arcs);
        if (d.H_ <= 0) throw ValidationError("H must be positive");
        d.finalize();
        return d;
    }

    const std::vector<AnalyticCurve>& curves() const { return curves_; }
    const AnalyticCurve& curve(int id) const { return curves_.at(static_cast<std::size_t>(id)); }
    int curve_count() const { return static_cast<int>(curves_.size()); }
    double H() const { return H_; }
    bool is_sandbox() const { return sandbox_; }
    double diameter() const { return diameter_; }
    const detail::Polyline& polyline(int id) const { return polylines_.at(static_cast<std::size_t>(id)); }

    // Winding-number containment test for the closed cross section; sandbox
    // scenes are unbounded and report every point as admissible.
    bool contains(Vec2 p, double boundary_tol = 0.0) const {
        if (sandbox_) return true;
        if (boundary_tol > 0 && boundary_distance_estimate(p) <= boundary_tol) return true;
        if (std::abs(winding(0, p)) != 1) return false;
        for (int i = 1; i < curve_count(); ++i)
            if (winding(i, p) != 0) return false;
        return true;
    }

    // Distance from p to the sampled boundary (polyline lower-bound estimate).
    double boundary_distance_estimate(Vec2 p) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& pl : polylines_)
            for (std::size_t i = 0; i + 1 < pl.pts.size(); ++i)
                best = std::min(best, detail::point_segment_distance(p, pl.pts[i], pl.pts[i + 1]));
        return best;
    }

    int winding(int curve_id, Vec2 p) const {
        const auto& pl = polylines_[static_cast<std::size_t>(curve_id)];
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < pl.pts.size(); ++i) {
            const Vec2 a = pl.pts[i] - p, b = pl.pts[i + 1] - p;
            total += std::atan2(cross(a, b), dot(a, b));
        }
        return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
    }

private:
    void finalize() {
        if (curves_.empty()) throw ValidationError("domain needs at least one curve");
        polylines_.reserve(curves_.size());
        Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
        for (const auto& c : curves_) {
            polylines_.push_back(detail::sample_curve(c, c.closed() ? 1024 : 512));
            for (const Vec2& p : polylines_.back().pts) {
                lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y);
                hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y);
            }
        }
        bbox_lo_ = lo;
        bbox_hi_ = hi;
        diameter_ = (hi - lo).norm();
        if (diameter_ <= 0) throw ValidationError("degenerate domain extent");
        // Exact-circle fast path detection (single harmonic, axis-aligned).
        circle_.assign(curves_.size(), CircleData{});
        for (std::size_t i = 0; i < curves_.size(); ++i) {
            const auto& c = curves_[i];
            if (!c.closed() || c.harmonics() != 1) continue;
            const Vec2 A = c.cos_coeffs()[0], B = c.sin_coeffs()[0];
            if (std::abs(A.y) < 1e-15 && std::abs(B.x) < 1e-15 &&
                std::abs(std::abs(A.x) - std::abs(B.y)) < 1e-15) {
                circle_[i] = CircleData{true, c.a0(), std::abs(A.x), B.y >= 0 ? 1.0 : -1.0};
            }
        }
    }

    void validate_closed() {
        if (H_ <= 0) throw ValidationError("H must be positive");
        if (!curves_[0].closed() || curves_[0].orientation() != Orientation::Counterclockwise)
            throw ValidationError("outer boundary must be a counterclockwise closed curve");
        for (int i = 1; i < curve_count(); ++i) {
            if (!curves_[static_cast<std::size_t>(i)].closed() ||
                curves_[static_cast<std::size_t>(i)].orientation() != Orientation::Clockwise)
                throw ValidationError("hole boundaries must be clockwise closed curves");
            for (const Vec2& p : polylines_[static_cast<std::size_t>(i)].pts)
                if (winding(0, p) == 0)
                    throw ValidationError("hole boundary not strictly inside the outer curve");
        }
        // pairwise disjoint boundaries (sampled distance)
        for (int i = 0; i < curve_count(); ++i)
            for (int j = i + 1; j < curve_count(); ++j) {
                double dmin = std::numeric_limits<double>::infinity();
                for (const Vec2& p : polylines_[static_cast<std::size_t>(i)].pts) {
                    const auto& q = polylines_[static_cast<std::size_t>(j)];
                    for (std::size_t s = 0; s + 1 < q.pts.size(); ++s)
                        dmin = std::min(dmin, detail::point_segment_distance(p, q.pts[s], q.pts[s + 1]));
                }
                if (dmin < 1e-9 * diameter_)
                    throw ValidationError("boundary curves intersect");
            }
    }

public:
    struct CircleData {
        bool is_circle = false;
        Vec2 center{0, 0};
        double radius = 0.0;
        double sign = 1.0;  // +1: tau measured counterclockwise
    };
    const CircleData& circle_data(int id) const { return circle_.at(static_cast<std::size_t>(id)); }

private:
    std::vector<AnalyticCurve> curves_;
    std::vector<detail::Polyline> polylines_;
    std::vector<CircleData> circle_;
    double H_ = 1.0;
    bool sandbox_ = false;
    Vec2 bbox_lo_{0, 0}, bbox_hi_{0, 0};
    double diameter_ = 0.0;

public:
    Vec2 bbox_lo() const { return bbox_lo_; }
    Vec2 bbox_hi() const { return bbox_hi_; }
};

enum class InflectionSign { Plus, Minus };  // Plus: kappa < 0 before, > 0 after

struct InflectionPoint {
    double tau = 0.0;
    InflectionSign sign = InflectionSign::Plus;
};

struct CurveDecomposition {
    // Maximal parameter intervals with kappa > 0 (concave) / < 0 (convex).
    // On closed curves an interval may wrap; it is stored as [a, b] with
    // b > a in the unrolled parameter, b - a <= period.
    std::vector<std::pair<double, double>> concave;
    std::vector<std::pair<double, double>> convex;
    std::vector<InflectionPoint> inflections;
    bool all_concave = false;
    bool all_convex = false;
};

struct BoundaryDecomposition {
    std::vector<CurveDecomposition> per_curve;
    double kappa_tol = 1e-10;

    bool has_inflections() const {
        for (const auto& c : per_curve)
            if (!c.inflections.empty()) return true;
        return false;
    }
};

namespace detail {

inline double bisect_curvature_zero(const AnalyticCurve& c, double a, double b) {
    double fa = curvature(c, a);
    for (int it = 0; it < 200 && (b - a) > 1e-13; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = curvature(c, m);
        if ((fa < 0) == (fm < 0)) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    if (b - a > 1e-12) throw UnresolvedZero("curvature sign change not isolated");
    return 0.5 * (a + b);
}

}  // namespace detail

// Locate all sign changes of the signed curvature on every boundary curve and
// assemble the concave / convex / inflection decomposition.
inline BoundaryDecomposition decompose_boundary(const Domain& domain, double kappa_tol = 1e-10) {
    if (kappa_tol <= 0) throw ValidationError("kappa_tol must be positive");
    BoundaryDecomposition out;
    out.kappa_tol = kappa_tol;
    for (int id = 0; id < domain.curve_count(); ++id) {
        const AnalyticCurve& c = domain.curve(id);
        CurveDecomposition dec;
        const std::size_t n = std::max<std::size_t>(1024, 64 * std::max<std::size_t>(1, c.harmonics()));
        std::vector<double> taus(n + 1), kappas(n + 1);
        double max_abs = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            taus[i] = c.tau_lo() + c.period() * i / n;
            kappas[i] = curvature(c, taus[i]);
            max_abs = std::max(max_abs, std::abs(kappas[i]));
        }
        if (max_abs < kappa_tol) {
            if (c.closed()) throw FlatArc("closed boundary with identically zero curvature");
            dec.all_convex = true;  // flat sandbox segment: treat as non-concave
            dec.convex.push_back({c.tau_lo(), c.tau_hi()});
            out.per_curve.push_back(std::move(dec));
            continue;
        }
        // sign-change zeros
        std::vector<double> zeros;
        for (std::size_t i = 0; i < n; ++i)
            if ((kappas[i] < 0) != (kappas[i + 1] < 0))
                zeros.push_back(detail::bisect_curvature_zero(c, taus[i], taus[i + 1]));
        if (zeros.empty()) {
            (kappas[n / 2] > 0 ? dec.all_concave : dec.all_convex) = true;
            auto& dst = kappas[n / 2] > 0 ? dec.concave : dec.convex;
            dst.push_back({c.tau_lo(), c.tau_hi()});
            out.per_curve.push_back(std::move(dec));
            continue;
        }
        for (double z : zeros) {
            const double eps = std::max(1e-8, 2e-6 * c.period());
            double before = curvature(c, c.closed() ? c.wrap(z - eps) : std::max(z - eps, c.tau_lo()));
            double after = curvature(c, c.closed() ? c.wrap(z + eps) : std::min(z + eps, c.tau_hi()));
            dec.inflections.push_back({z, (before < 0 && after > 0) ? InflectionSign::Plus
                                                                   : InflectionSign::Minus});
        }
        // Intervals between consecutive zeros, classified by a midpoint sample.
        const double per = c.period();
        for (std::size_t i = 0; i < zeros.size(); ++i) {
            double a = zeros[i];
            double b = (i + 1 < zeros.size()) ? zeros[i + 1]
                                              : (c.closed() ? zeros[0] + per : c.tau_hi());
            if (!c.closed() && i + 1 == zeros.size() && b <= a) break;
            const double mid = c.closed() ? c.wrap(0.5 * (a + b)) : 0.5 * (a + b);
            ((curvature(c, mid) > 0) ? dec.concave : dec.convex).push_back({a, b});
        }
        if (!c.closed() && zeros.front() > c.tau_lo()) {
            const double mid = 0.5 * (c.tau_lo() + zeros.front());
            ((curvature(c, mid) > 0) ? dec.concave : dec.convex)
                .insert(((curvature(c, mid) > 0) ? dec.concave : dec.convex).begin(),
                        {c.tau_lo(), zeros.front()});
        }
        out.per_curve.push_back(std::move(dec));
    }
    return out;
}

namespace detail {

inline bool tau_in_interval(const AnalyticCurve& c, double tau, std::pair<double, double> iv) {
    if (!c.closed()) return tau >= iv.first && tau <= iv.second;
    const double per = c.period();
    double t = c.wrap(tau);
    if (t < iv.first) t += per;
    return t >= iv.first && t <= iv.second;
}

}  // namespace detail

}  // namespace billiard
