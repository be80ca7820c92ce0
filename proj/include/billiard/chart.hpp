#pragma once

#include <cmath>

#include "billiard/domain.hpp"

namespace billiard {

// Boundary tubular chart anchored at p = alpha(tau_p):
//
//   eta(x1, x3) = alpha(tau(x1)) + x3 * n(tau(x1)),
//
// where x1 is arclength along the boundary from the anchor and x3 the signed
// normal depth (negative inside the domain). The axial coordinate x2 passes
// through unchanged, so the full map is a triple orthogonal system with
//
//   g11 = (1 - kappa(x1) x3)^2,   g22 = g33 = 1,   g13 = 0.
class LocalChart {
public:
    LocalChart(const Domain& domain, int curve_id, double tau_p, double radius)
        : curve_(domain.curve(curve_id)), curve_id_(curve_id), tau_p_(curve_.wrap(tau_p)),
          radius_(radius) {
        // Reach cap: the tubular map folds at depth 1/|kappa|; stay at half.
        double mk = 0.0;
        const int probe = 128;
        const double span = radius / std::max(curve_.speed(tau_p_), 1e-12);
        for (int i = -probe; i <= probe; ++i) {
            const double tau = clamp_tau(tau_p_ + span * i / probe);
            mk = std::max(mk, std::abs(curvature(curve_, tau)));
        }
        reach_ = (mk > 0) ? 0.5 / mk : 1e300;
        if (radius_ > reach_) throw ReachExceeded("chart radius exceeds boundary reach");
    }

    int curve_id() const { return curve_id_; }
    double tau_anchor() const { return tau_p_; }
    double validity_radius() const { return radius_; }
    double reach() const { return reach_; }

    // tau of the foot point at arclength offset x1 from the anchor.
    double tau_of_x1(double x1) const {
        double tau = tau_p_ + x1 / curve_.speed(tau_p_);
        for (int it = 0; it < 64; ++it) {
            const double s = curve_.arclength(tau_p_, tau) - x1;
            const double sp = curve_.speed(tau);
            const double step = s / sp;
            tau -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(tau))) break;
        }
        return tau;
    }

    double x1_of_tau(double tau) const { return curve_.arclength(tau_p_, tau); }

    double kappa(double x1) const { return curvature(curve_, tau_of_x1(x1)); }

    // d kappa / d arclength.
    double kappa_prime(double x1) const {
        const double tau = tau_of_x1(x1);
        return curvature_derivative(curve_, tau) / curve_.speed(tau);
    }

    Vec2 tangent(double x1) const { return curve_.unit_tangent(tau_of_x1(x1)); }
    Vec2 normal(double x1) const { return curve_.outward_normal(tau_of_x1(x1)); }

    Vec2 eval(double x1, double x3) const {
        const double tau = tau_of_x1(x1);
        return curve_.pos(tau) + x3 * curve_.outward_normal(tau);
    }

    double g11(double x1, double x3) const {
        const double f = 1.0 - kappa(x1) * x3;
        return f * f;
    }
    static double g22() { return 1.0; }
    static double g33() { return 1.0; }

    double dg11_dx1(double x1, double x3) const {
        return -2.0 * (1.0 - kappa(x1) * x3) * kappa_prime(x1) * x3;
    }
    double dg11_dx3(double x1, double x3) const {
        return -2.0 * (1.0 - kappa(x1) * x3) * kappa(x1);
    }

    // Christoffel symbols of the diagonal metric; all others vanish.
    double gamma1_11(double x1, double x3) const { return 0.5 * dg11_dx1(x1, x3) / g11(x1, x3); }
    double gamma1_13(double x1, double x3) const { return 0.5 * dg11_dx3(x1, x3) / g11(x1, x3); }
    double gamma3_11(double x1, double x3) const { return -0.5 * dg11_dx3(x1, x3); }

    // Chart coordinates of a nearby cross-section point (foot-point Newton).
    Vec2 chart_coords(Vec2 p) const {
        double tau = tau_p_;
        for (int it = 0; it < 100; ++it) {
            const Vec2 d = curve_.d1(tau);
            const Vec2 r = p - curve_.pos(tau);
            const double f = dot(r, d);
            const double fp = dot(r, curve_.d2(tau)) - d.norm2();
            if (std::abs(fp) < 1e-300) break;
            const double step = f / fp;
            tau -= step;
            if (std::abs(step) < 1e-15) break;
        }
        const double x3 = dot(p - curve_.pos(tau), curve_.outward_normal(tau));
        return {curve_.arclength(tau_p_, tau), x3};
    }

private:
    double clamp_tau(double tau) const {
        if (curve_.closed()) return curve_.wrap(tau);
        return std::clamp(tau, curve_.tau_lo(), curve_.tau_hi());
    }

    AnalyticCurve curve_;
    int curve_id_;
    double tau_p_;
    double radius_;
    double reach_ = 0.0;
};

inline LocalChart chart(const Domain& domain, int curve_id, double tau_p, double radius) {
    return LocalChart(domain, curve_id, tau_p, radius);
}

}  // namespace billiard
