#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "billiard/errors.hpp"
#include "billiard/vec.hpp"

namespace billiard {

enum class Orientation { Counterclockwise, Clockwise };
enum class CurveKind { Closed, OpenArc };

// Closed analytic planar curve as a truncated Fourier series
//   alpha(tau) = a0 + sum_m [ A_m cos(m tau) + B_m sin(m tau) ],   tau in [0, 2pi),
// or an open analytic arc (polynomial graph y = p(x), or a generic parametric
// form supplied as callables). Closed curves have exact derivatives; parametric
// arcs fall back to Richardson-extrapolated differences for the second
// derivative when no analytic one is supplied.
class AnalyticCurve {
public:
    using Fn = std::function<Vec2(double)>;

    static AnalyticCurve fourier(Vec2 a0, std::vector<Vec2> cos_coeffs,
                                 std::vector<Vec2> sin_coeffs, Orientation declared) {
        AnalyticCurve c;
        c.kind_ = CurveKind::Closed;
        c.orientation_ = declared;
        c.a0_ = a0;
        c.cos_ = std::move(cos_coeffs);
        c.sin_ = std::move(sin_coeffs);
        c.sin_.resize(std::max(c.cos_.size(), c.sin_.size()));
        c.cos_.resize(std::max(c.cos_.size(), c.sin_.size()));
        c.tau_lo_ = 0.0;
        c.tau_hi_ = 2.0 * std::numbers::pi;
        c.check_regularity();
        c.check_orientation();
        return c;
    }

    static AnalyticCurve circle(Vec2 center, double radius, Orientation o) {
        const double sy = (o == Orientation::Counterclockwise) ? radius : -radius;
        return fourier(center, {{radius, 0.0}}, {{0.0, sy}}, o);
    }

    static AnalyticCurve ellipse(Vec2 center, double rx, double ry, Orientation o) {
        const double sy = (o == Orientation::Counterclockwise) ? ry : -ry;
        return fourier(center, {{rx, 0.0}}, {{0.0, sy}}, o);
    }

    // Polar curve r(theta) = 1 + a cos(3 theta) expanded exactly:
    //   x = cos t + (a/2)(cos 2t + cos 4t),  y = sin t + (a/2)(sin 4t - sin 2t).
    static AnalyticCurve polar_cos3(double amplitude) {
        const double h = amplitude / 2.0;
        std::vector<Vec2> A = {{1, 0}, {h, 0}, {0, 0}, {h, 0}};
        std::vector<Vec2> B = {{0, 1}, {0, -h}, {0, 0}, {0, h}};
        return fourier({0, 0}, A, B, Orientation::Counterclockwise);
    }

    // Open arc y = p(x) with p given by coefficients (c0 + c1 x + c2 x^2 + ...),
    // parametrized by tau = x over [x_lo, x_hi].
    static AnalyticCurve poly_graph(std::vector<double> coeffs, double x_lo, double x_hi) {
        AnalyticCurve c;
        c.kind_ = CurveKind::OpenArc;
        c.poly_ = std::move(coeffs);
        c.is_poly_graph_ = true;
        c.tau_lo_ = x_lo;
        c.tau_hi_ = x_hi;
        return c;
    }

    // Open arc from parametric callables. d2 optional; differences are used if absent.
    static AnalyticCurve parametric_arc(Fn pos, Fn d1, double tau_lo, double tau_hi,
                                        Fn d2 = nullptr) {
        AnalyticCurve c;
        c.kind_ = CurveKind::OpenArc;
        c.fn_pos_ = std::move(pos);
        c.fn_d1_ = std::move(d1);
        c.fn_d2_ = std::move(d2);
        c.tau_lo_ = tau_lo;
        c.tau_hi_ = tau_hi;
        c.check_regularity();
        return c;
    }

    CurveKind kind() const { return kind_; }
    bool closed() const { return kind_ == CurveKind::Closed; }
    Orientation orientation() const { return orientation_; }
    double tau_lo() const { return tau_lo_; }
    double tau_hi() const { return tau_hi_; }
    double period() const { return tau_hi_ - tau_lo_; }
    std::size_t harmonics() const { return cos_.size(); }
    Vec2 a0() const { return a0_; }
    const std::vector<Vec2>& cos_coeffs() const { return cos_; }
    const std::vector<Vec2>& sin_coeffs() const { return sin_; }
    const std::vector<double>& poly_coeffs() const { return poly_; }
    bool is_poly_graph() const { return is_poly_graph_; }

    double wrap(double tau) const {
        if (!closed()) return tau;
        const double p = period();
        double t = std::fmod(tau - tau_lo_, p);
        if (t < 0) t += p;
        return tau_lo_ + t;
    }

    Vec2 pos(double tau) const {
        if (closed()) {
            Vec2 r = a0_;
            for (std::size_t m = 1; m <= cos_.size(); ++m) {
                const double c = std::cos(m * tau), s = std::sin(m * tau);
                r += cos_[m - 1] * c + sin_[m - 1] * s;
            }
            return r;
        }
        if (is_poly_graph_) return {tau, poly_eval(tau, 0)};
        return fn_pos_(tau);
    }

    Vec2 d1(double tau) const {
        if (closed()) {
            Vec2 r{0, 0};
            for (std::size_t m = 1; m <= cos_.size(); ++m) {
                const double c = std::cos(m * tau), s = std::sin(m * tau);
                r += (sin_[m - 1] * c - cos_[m - 1] * s) * static_cast<double>(m);
            }
            return r;
        }
        if (is_poly_graph_) return {1.0, poly_eval(tau, 1)};
        return fn_d1_(tau);
    }

    Vec2 d2(double tau) const {
        if (closed()) {
            Vec2 r{0, 0};
            for (std::size_t m = 1; m <= cos_.size(); ++m) {
                const double c = std::cos(m * tau), s = std::sin(m * tau);
                r += (cos_[m - 1] * c + sin_[m - 1] * s) * (-static_cast<double>(m * m));
            }
            return r;
        }
        if (is_poly_graph_) return {0.0, poly_eval(tau, 2)};
        if (fn_d2_) return fn_d2_(tau);
        // Richardson-extrapolated central difference of d1.
        const double h = 1e-5 * std::max(1.0, std::abs(tau));
        const Vec2 dh = (fn_d1_(tau + h) - fn_d1_(tau - h)) / (2 * h);
        const Vec2 dh2 = (fn_d1_(tau + h / 2) - fn_d1_(tau - h / 2)) / h;
        return (dh2 * 4.0 - dh) / 3.0;
    }

    double speed(double tau) const { return d1(tau).norm(); }

    Vec2 unit_tangent(double tau) const {
        const Vec2 d = d1(tau);
        const double n = d.norm();
        if (n < kRegularityFloor) throw DegenerateParametrization();
        return d / n;
    }

    // Outward unit normal n = (a'_3, -a'_1)/|a'|. Outward from the domain for
    // counterclockwise outer curves and clockwise hole curves.
    Vec2 outward_normal(double tau) const {
        const Vec2 t = unit_tangent(tau);
        return {t.y, -t.x};
    }

    // Exact arclength integral between parameters (adaptive Simpson).
    double arclength(double tau_a, double tau_b) const {
        return adaptive_simpson(tau_a, tau_b, 1e-13);
    }

    static constexpr double kRegularityFloor = 1e-12;

private:
    double poly_eval(double x, int deriv) const {
        double r = 0.0;
        for (std::size_t i = poly_.size(); i-- > 0;) {
            const auto n = static_cast<int>(i);
            if (deriv == 0) {
                r = r * x + poly_[i];
            } else if (deriv == 1) {
                if (n >= 1) r = r * x + n * poly_[i];
            } else {
                if (n >= 2) r = r * x + n * (n - 1) * poly_[i];
            }
        }
        return r;
    }

    void check_regularity() const {
        const int K = 512;
        for (int i = 0; i <= K; ++i) {
            const double tau = tau_lo_ + period() * i / K;
            if (d1(tau).norm() < 1e-9) throw DegenerateParametrization("curve not regular");
        }
    }

    void check_orientation() const {
        // Signed area (1/2) int (x y' - y x'); positive for counterclockwise.
        const int K = 2048;
        double area = 0.0;
        const double h = period() / K;
        for (int i = 0; i < K; ++i) {
            const double tau = tau_lo_ + h * (i + 0.5);
            const Vec2 p = pos(tau), d = d1(tau);
            area += 0.5 * cross(p, d) * h;
        }
        const bool ccw = area > 0;
        if (ccw != (orientation_ == Orientation::Counterclockwise))
            throw ValidationError("declared orientation does not match signed area");
    }

    double adaptive_simpson(double a, double b, double tol) const {
        const auto f = [this](double t) { return speed(t); };
        const auto simpson = [&f](double lo, double hi) {
            return (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
        };
        struct Frame { double a, b, whole; int depth; };
        double total = 0.0;
        std::vector<Frame> stack{{a, b, simpson(a, b), 0}};
        while (!stack.empty()) {
            const Frame fr = stack.back();
            stack.pop_back();
            const double m = 0.5 * (fr.a + fr.b);
            const double left = simpson(fr.a, m), right = simpson(m, fr.b);
            if (fr.depth > 48 || std::abs(left + right - fr.whole) < 15 * tol * std::max(1.0, std::abs(left + right))) {
                total += left + right + (left + right - fr.whole) / 15.0;
            } else {
                stack.push_back({fr.a, m, left, fr.depth + 1});
                stack.push_back({m, fr.b, right, fr.depth + 1});
            }
        }
        return total;
    }

    CurveKind kind_ = CurveKind::Closed;
    Orientation orientation_ = Orientation::Counterclockwise;
    Vec2 a0_{0, 0};
    std::vector<Vec2> cos_, sin_;
    std::vector<double> poly_;
    bool is_poly_graph_ = false;
    Fn fn_pos_, fn_d1_, fn_d2_;
    double tau_lo_ = 0.0, tau_hi_ = 0.0;
};

// Signed curvature (a''_1 a'_3 - a'_1 a''_3)/|a'|^3 with outward normal
// (a'_3, -a'_1)/|a'|. Negative on convex boundary, positive on concave.
// Reduces to a'' . n for unit-speed parametrizations.
inline double curvature(const AnalyticCurve& curve, double tau) {
    const Vec2 d = curve.d1(tau);
    const Vec2 dd = curve.d2(tau);
    const double sp = d.norm();
    if (sp < 1e-9) throw DegenerateParametrization("curvature at irregular parameter");
    return (dd.x * d.y - d.x * dd.y) / (sp * sp * sp);
}

// d kappa / d tau, from the quotient rule; exact given exact d1/d2/d3 is not
// available, so use a high-order difference of the analytic curvature.
inline double curvature_derivative(const AnalyticCurve& curve, double tau) {
    const double h = 1e-5;
    const double k1 = curvature(curve, tau + h), k2 = curvature(curve, tau - h);
    const double k3 = curvature(curve, tau + h / 2), k4 = curvature(curve, tau - h / 2);
    const double dh = (k1 - k2) / (2 * h), dh2 = (k3 - k4) / h;
    return (4.0 * dh2 - dh) / 3.0;
}

}  // namespace billiard
