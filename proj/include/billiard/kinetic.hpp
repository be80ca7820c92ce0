#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

#include "billiard/domain.hpp"
#include "billiard/rng.hpp"
#include "billiard/trajectory.hpp"

namespace billiard {

// ---------------------------------------------------------------------------
// Particle ensembles and conservation checks for pure specular transport.

struct ParticleEnsemble {
    std::vector<PhasePoint> particles;
    std::vector<double> weights;
    std::uint64_t seed = 0;

    // Maxwellian velocities (density e^{-|v|^2/2}) with the cross-section
    // speed re-sampled into [band_lo, band_hi]; positions uniform in the
    // cross section, axial uniform in [0, H). Per-particle RNG streams make
    // the ensemble reproducible at any parallelism level.
    static ParticleEnsemble maxwellian(const Domain& domain, std::size_t count,
                                       std::uint64_t seed, double band_lo = 0.1,
                                       double band_hi = 10.0) {
        ParticleEnsemble ens;
        ens.seed = seed;
        ens.particles.reserve(count);
        ens.weights.assign(count, 1.0);
        const Rng root(seed);
        const Vec2 lo = domain.bbox_lo(), hi = domain.bbox_hi();
        for (std::size_t i = 0; i < count; ++i) {
            Rng rng = root.split(i);
            PhasePoint p;
            for (int guard = 0; guard < 100000; ++guard) {
                const Vec2 x{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
                if (domain.contains(x) &&
                    domain.boundary_distance_estimate(x) > 1e-6 * domain.diameter()) {
                    p.x = Vec3(x, rng.uniform(0.0, domain.H()));
                    break;
                }
            }
            for (int guard = 0; guard < 100000; ++guard) {
                const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
                const double cs = v.cs().norm();
                if (cs >= band_lo && cs <= band_hi) {
                    p.v = v;
                    break;
                }
            }
            p.t = 0.0;
            ens.particles.push_back(p);
        }
        return ens;
    }
};

struct Axis {
    Vec2 center;
    Vec3 direction{0, 1, 0};  // the cylinder axis
    double max_residual = 0.0;
};

// Fit a center x0 for which {(x - x0) x e2} . n vanishes on the boundary;
// present only when the fit residual stays below tol.
inline std::optional<Axis> axis_symmetry_test(const Domain& domain, double tol = 1e-8) {
    if (domain.is_sandbox()) return std::nullopt;
    // moment of the normal: cross2(x - x0, n) = cross2(x, n) - cross2(x0, n)
    double m11 = 0, m12 = 0, m22 = 0, r1 = 0, r2 = 0;
    std::vector<std::pair<Vec2, Vec2>> samples;  // (x, n) on the boundary
    for (int cid = 0; cid < domain.curve_count(); ++cid) {
        const AnalyticCurve& c = domain.curve(cid);
        const int K = 512;
        for (int i = 0; i < K; ++i) {
            const double tau = c.tau_lo() + c.period() * i / K;
            samples.push_back({c.pos(tau), c.outward_normal(tau)});
        }
    }
    for (const auto& [x, n] : samples) {
        // cross2(x0, n) = x0.x n.y - x0.y n.x: coefficients (n.y, -n.x)
        const double a = n.y, b = -n.x;
        const double rhs = cross(x, n);
        m11 += a * a; m12 += a * b; m22 += b * b;
        r1 += a * rhs; r2 += b * rhs;
    }
    const double det = m11 * m22 - m12 * m12;
    if (std::abs(det) < 1e-14) return std::nullopt;
    Axis axis;
    axis.center = {(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det};
    for (const auto& [x, n] : samples)
        axis.max_residual = std::max(axis.max_residual, std::abs(cross(x - axis.center, n)));
    if (axis.max_residual >= tol) return std::nullopt;
    return axis;
}

struct ConservationReport {
    double mass0 = 0.0, mass1 = 0.0;
    double energy0 = 0.0, energy1 = 0.0;
    double angular0 = 0.0, angular1 = 0.0;
    bool has_axis = false;
    Vec2 axis_center;
    double mass_drift = 0.0;     // relative
    double energy_drift = 0.0;   // relative
    double angular_drift = 0.0;  // relative to max(|M0|, sum w |v| diam/2)
    long min_bounces = 0;
    long total_bounces = 0;
    std::vector<std::size_t> quarantined;  // particles whose trace failed
};

namespace detail {

inline double angular_moment(const PhasePoint& p, Vec2 center) {
    const Vec2 a = p.x.cs() - center;
    return cross(a, p.v.cs());  // {(x - x0) x e2} . v for the cylinder axis
}

}  // namespace detail

// Event-driven transport: every particle flies exactly to each bounce. When
// min_bounces > 0 the per-particle duration is extended until that many
// bounces have occurred.
inline std::pair<ParticleEnsemble, ConservationReport> transport_ensemble(
    const Domain& domain, const ParticleEnsemble& ensemble, double duration,
    long min_bounces = 0, const std::optional<Axis>& axis = std::nullopt) {
    ParticleEnsemble out = ensemble;
    ConservationReport rep;
    rep.has_axis = axis.has_value();
    if (axis) rep.axis_center = axis->center;
    rep.min_bounces = std::numeric_limits<long>::max();
    double scale_sum = 0.0;
    for (std::size_t i = 0; i < ensemble.particles.size(); ++i) {
        const PhasePoint& p = ensemble.particles[i];
        const double w = ensemble.weights[i];
        rep.mass0 += w;
        rep.energy0 += 0.5 * w * p.v.norm2();
        if (axis) rep.angular0 += w * detail::angular_moment(p, axis->center);
        scale_sum += w * p.v.cs().norm() * domain.diameter() * 0.5;
    }
    TraceOptions opts;
    opts.direction = TraceDirection::Forward;
    for (std::size_t i = 0; i < ensemble.particles.size(); ++i) {
        PhasePoint cur = ensemble.particles[i];
        long bounces = 0;
        bool failed = false;
        for (int rounds = 0; rounds < 64; ++rounds) {
            // Extend the span until the bounce target is met; a chord is at
            // most one diameter long.
            double span = duration;
            if (min_bounces > 0 && rounds > 0)
                span = (min_bounces - bounces + 2) * domain.diameter() /
                       std::max(cur.v.cs().norm(), 1e-12);
            TraceOptions o = opts;
            o.horizon_time = span;
            SpecularCycle cyc;
            try {
                cyc = trace_cycles(domain, cur, o);
            } catch (const Error&) {
                failed = true;
                break;
            }
            if (cyc.termination == Termination::SolverFailure ||
                cyc.termination == Termination::ConvexGrazingStop ||
                cyc.termination == Termination::InwardInflectionTrap) {
                failed = true;
                break;
            }
            bounces += static_cast<long>(cyc.events.size());
            // advance to the end of this span
            double t_end = cur.t + span;
            double t0 = cur.t;
            Vec3 x0 = cur.x, v0 = cur.v;
            for (const auto& ev : cyc.events) {
                t0 = ev.t;
                x0 = ev.x;
                v0 = ev.v_post;
            }
            cur.t = t_end;
            const Vec2 cs = x0.cs() + (t_end - t0) * v0.cs();
            double x2 = std::fmod(x0.x2 + (t_end - t0) * v0.x2, domain.H());
            if (x2 < 0) x2 += domain.H();
            cur.x = Vec3(cs, x2);
            cur.v = v0;
            if (bounces >= min_bounces) break;
        }
        if (failed) {
            rep.quarantined.push_back(i);
            continue;
        }
        out.particles[i] = cur;
        rep.min_bounces = std::min(rep.min_bounces, bounces);
        rep.total_bounces += bounces;
    }
    if (rep.min_bounces == std::numeric_limits<long>::max()) rep.min_bounces = 0;
    for (std::size_t i = 0; i < out.particles.size(); ++i) {
        const double w = out.weights[i];
        rep.mass1 += w;
        rep.energy1 += 0.5 * w * out.particles[i].v.norm2();
        if (axis) rep.angular1 += w * detail::angular_moment(out.particles[i], axis->center);
    }
    rep.mass_drift = std::abs(rep.mass1 - rep.mass0) / std::max(rep.mass0, 1e-300);
    rep.energy_drift = std::abs(rep.energy1 - rep.energy0) / std::max(rep.energy0, 1e-300);
    if (axis)
        rep.angular_drift = std::abs(rep.angular1 - rep.angular0) /
                            std::max(std::abs(rep.angular0), scale_sum);
    return {std::move(out), rep};
}

// ---------------------------------------------------------------------------
// Desk-scale linear kinetic toys on a small phase grid over the cross section.

struct KineticGrid {
    int nx = 8, ny = 8, ndir = 8, nspeed = 2;
    double nu0 = 1.0;
    double n_cut = 1.0;  // velocity cutoff of the gain integral
    Vec2 lattice_lo, lattice_hi;
    std::vector<Vec2> xs;         // nx*ny lattice points (all inside the domain)
    std::vector<Vec2> dirs;       // ndir unit directions
    std::vector<double> speeds;   // nspeed midpoint speeds in (0, n_cut]
    std::vector<double> speed_w;  // 2D quadrature weights |u| d|u|
};

// The lattice is placed on a centered box scaled into the domain so every
// node is interior; characteristics may leave the box and interpolation
// clamps to it.
inline KineticGrid make_kinetic_grid(const Domain& domain, int nx, int ny, int ndir, int nspeed,
                                     double n_cut, double nu0, double shrink = 0.68) {
    KineticGrid g;
    g.nx = nx; g.ny = ny; g.ndir = ndir; g.nspeed = nspeed;
    g.nu0 = nu0;
    g.n_cut = n_cut;
    const Vec2 c = (domain.bbox_lo() + domain.bbox_hi()) / 2.0;
    const Vec2 half = (domain.bbox_hi() - domain.bbox_lo()) / 2.0;
    g.lattice_lo = c - half * shrink;
    g.lattice_hi = c + half * shrink;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const Vec2 p{g.lattice_lo.x + (g.lattice_hi.x - g.lattice_lo.x) * i / (nx - 1),
                         g.lattice_lo.y + (g.lattice_hi.y - g.lattice_lo.y) * j / (ny - 1)};
            if (!domain.contains(p))
                throw ValidationError("kinetic lattice node outside the domain; shrink more");
            g.xs.push_back(p);
        }
    for (int d = 0; d < ndir; ++d) {
        const double a = 2.0 * std::numbers::pi * d / ndir;
        g.dirs.push_back({std::cos(a), std::sin(a)});
    }
    if (n_cut > 0.0) {
        const double du = n_cut / nspeed;
        for (int s = 0; s < nspeed; ++s) {
            const double u = du * (s + 0.5);
            g.speeds.push_back(u);
            g.speed_w.push_back(u * du * 2.0 * std::numbers::pi / ndir);
        }
    } else {
        g.speeds.assign(static_cast<std::size_t>(nspeed), 1.0);
        g.speed_w.assign(static_cast<std::size_t>(nspeed), 0.0);  // gain off
    }
    return g;
}

using InitialDatum = std::function<double(Vec2 x, Vec2 v)>;

struct DecaySample {
    double t = 0.0;
    double sup = 0.0;
    int failures = 0;
};

// f(t, x, v) = e^{-nu0 t} f0(X(0; t, x, v), V(0; t, x, v)) on the grid.
inline std::vector<DecaySample> relaxation_decay(const Domain& domain, const KineticGrid& grid,
                                                 const InitialDatum& f0, double T,
                                                 int time_samples) {
    if (!(grid.nu0 > 0)) throw ValidationError("relaxation requires nu0 > 0");
    std::vector<DecaySample> out;
    for (int j = 0; j < time_samples; ++j) {
        const double t = T * j / std::max(1, time_samples - 1);
        DecaySample smp;
        smp.t = t;
        for (const Vec2& x : grid.xs)
            for (const Vec2& d : grid.dirs)
                for (const double sp : grid.speeds) {
                    PhasePoint p;
                    p.x = Vec3(x, 0.0);
                    p.v = Vec3(d * sp, 0.0);
                    p.t = t;
                    try {
                        const PhasePoint back = specular_flow(domain, p, 0.0);
                        const double val =
                            std::exp(-grid.nu0 * t) * f0(back.x.cs(), back.v.cs());
                        smp.sup = std::max(smp.sup, std::abs(val));
                    } catch (const Error&) {
                        ++smp.failures;
                    }
                }
        out.push_back(smp);
    }
    return out;
}

struct DuhamelResult {
    std::vector<double> times;
    // f[time][x][dir][speed] flattened; rho[time][x]
    std::vector<double> f;
    std::vector<double> rho;
    std::vector<double> residuals;  // sup |f^{m+1} - f^m| per iteration
    bool contraction = true;
    int nx_nodes = 0;

    double& at(std::vector<double>& v, int j, int xi, int d, int s, const KineticGrid& g) {
        return v[((static_cast<std::size_t>(j) * g.xs.size() + xi) * g.dirs.size() + d) *
                     g.speeds.size() +
                 s];
    }
};

namespace detail {

inline double clamped_bilinear(const KineticGrid& g, const double* rho_slice, Vec2 p) {
    const double fx = std::clamp((p.x - g.lattice_lo.x) / (g.lattice_hi.x - g.lattice_lo.x), 0.0,
                                 1.0) * (g.nx - 1);
    const double fy = std::clamp((p.y - g.lattice_lo.y) / (g.lattice_hi.y - g.lattice_lo.y), 0.0,
                                 1.0) * (g.ny - 1);
    const int i0 = std::min(static_cast<int>(fx), g.nx - 2);
    const int j0 = std::min(static_cast<int>(fy), g.ny - 2);
    const double ax = fx - i0, ay = fy - j0;
    const auto v = [&](int i, int j) { return rho_slice[static_cast<std::size_t>(j) * g.nx + i]; };
    return (1 - ax) * (1 - ay) * v(i0, j0) + ax * (1 - ay) * v(i0 + 1, j0) +
           (1 - ax) * ay * v(i0, j0 + 1) + ax * ay * v(i0 + 1, j0 + 1);
}

}  // namespace detail

// Picard iteration of the simplified gain model
//   f(t,x,v) = e^{-t} f0(X(0), V(0))
//            + int_0^t e^{-(t-s)} int_{|u| <= N_cut} f(s, X(s), u) du ds,
// trapezoidal in s along the exact specular characteristic, velocity
// integral over the grid's direction/speed quadrature.
inline DuhamelResult duhamel_gain_iteration(const Domain& domain, const KineticGrid& grid,
                                            const InitialDatum& f0, double T, int time_samples,
                                            int iterations) {
    if (iterations < 1) throw ValidationError("need at least one iteration");
    DuhamelResult res;
    res.nx_nodes = static_cast<int>(grid.xs.size());
    const int nt = time_samples;
    for (int j = 0; j < nt; ++j) res.times.push_back(T * j / std::max(1, nt - 1));
    const std::size_t nx = grid.xs.size(), nd = grid.dirs.size(), ns = grid.speeds.size();
    const std::size_t nphase = nx * nd * ns;

    // Backward characteristics are iteration-independent: cache the sampled
    // positions at every earlier time node and the phase at time zero.
    struct CharCache {
        std::vector<Vec2> xs;  // X(t_l) for l = 0..j
        Vec2 x0, v0;           // phase at time zero
        bool ok = false;
    };
    std::vector<CharCache> cache(static_cast<std::size_t>(nt) * nphase);
    for (int j = 0; j < nt; ++j) {
        const double t = res.times[static_cast<std::size_t>(j)];
        std::size_t idx = static_cast<std::size_t>(j) * nphase;
        for (std::size_t xi = 0; xi < nx; ++xi)
            for (std::size_t d = 0; d < nd; ++d)
                for (std::size_t s = 0; s < ns; ++s, ++idx) {
                    PhasePoint p;
                    p.x = Vec3(grid.xs[xi], 0.0);
                    p.v = Vec3(grid.dirs[d] * grid.speeds[s], 0.0);
                    p.t = t;
                    CharCache cc;
                    try {
                        TraceOptions opts;
                        opts.direction = TraceDirection::Backward;
                        opts.horizon_time = t * (1 + 1e-12) + 1e-300;
                        const SpecularCycle cyc = trace_cycles(domain, p, opts);
                        if (cyc.termination != Termination::HorizonTime &&
                            cyc.termination != Termination::HorizonLength && t > 0)
                            throw TraceFailure("characteristic interrupted");
                        // walk the cycle once, sampling every time node <= t
                        double t0 = p.t;
                        Vec3 x0 = p.x, v0 = p.v;
                        std::size_t ev = 0;
                        cc.xs.assign(static_cast<std::size_t>(j) + 1, Vec2{});
                        for (int l = j; l >= 0; --l) {
                            const double tl = res.times[static_cast<std::size_t>(l)];
                            while (ev < cyc.events.size() && cyc.events[ev].t >= tl) {
                                t0 = cyc.events[ev].t;
                                x0 = cyc.events[ev].x;
                                v0 = cyc.events[ev].v_post;
                                ++ev;
                            }
                            cc.xs[static_cast<std::size_t>(l)] = x0.cs() + (tl - t0) * v0.cs();
                        }
                        cc.x0 = cc.xs[0];
                        cc.v0 = v0.cs();
                        cc.ok = true;
                    } catch (const Error&) {
                        cc.ok = false;
                    }
                    cache[static_cast<std::size_t>(j) * nphase +
                          ((xi * nd + d) * ns + s)] = std::move(cc);
                }
    }

    std::vector<double> f_prev(static_cast<std::size_t>(nt) * nphase, 0.0);
    std::vector<double> rho(static_cast<std::size_t>(nt) * nx, 0.0);
    std::vector<double> f_next = f_prev;
    for (int m = 0; m < iterations; ++m) {
        double resid = 0.0;
        for (int j = 0; j < nt; ++j) {
            const double t = res.times[static_cast<std::size_t>(j)];
            for (std::size_t xi = 0; xi < nx; ++xi)
                for (std::size_t d = 0; d < nd; ++d)
                    for (std::size_t s = 0; s < ns; ++s) {
                        const std::size_t at =
                            (static_cast<std::size_t>(j) * nx + xi) * nd * ns + d * ns + s;
                        const CharCache& cc =
                            cache[static_cast<std::size_t>(j) * nphase + ((xi * nd + d) * ns + s)];
                        if (!cc.ok) continue;
                        double val = std::exp(-t) * f0(cc.x0, cc.v0);
                        if (j > 0 && grid.n_cut > 0.0) {
                            // trapezoid over the time nodes 0..j
                            double integral = 0.0;
                            const double dt = res.times[1] - res.times[0];
                            for (int l = 0; l <= j; ++l) {
                                const double tl = res.times[static_cast<std::size_t>(l)];
                                const double weight = (l == 0 || l == j) ? 0.5 : 1.0;
                                integral +=
                                    weight * dt * std::exp(-(t - tl)) *
                                    detail::clamped_bilinear(
                                        grid, rho.data() + static_cast<std::size_t>(l) * nx,
                                        cc.xs[static_cast<std::size_t>(l)]);
                            }
                            val += integral;
                        }
                        f_next[at] = val;
                        resid = std::max(resid, std::abs(f_next[at] - f_prev[at]));
                    }
        }
        // velocity-integrated field for the next pass
        for (int j = 0; j < nt; ++j)
            for (std::size_t xi = 0; xi < nx; ++xi) {
                double acc = 0.0;
                for (std::size_t d = 0; d < nd; ++d)
                    for (std::size_t s = 0; s < ns; ++s)
                        acc += grid.speed_w[s] *
                               f_next[(static_cast<std::size_t>(j) * nx + xi) * nd * ns + d * ns + s];
                rho[static_cast<std::size_t>(j) * nx + xi] = acc;
            }
        res.residuals.push_back(resid);
        if (res.residuals.size() >= 2 &&
            res.residuals.back() > res.residuals[res.residuals.size() - 2])
            res.contraction = false;  // reported, run continues
        f_prev = f_next;
    }
    res.f = std::move(f_next);
    res.rho = std::move(rho);
    return res;
}

}  // namespace billiard
