#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fracsde/time_grid.hpp"

namespace fracsde {

class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Diffusion coefficient g with derivatives through third order and sup-norm
/// bound constants. For entries that are genuinely C^3_b the bounds are global
/// sup norms; the plain identity entry carries bounds valid only on a probe
/// box and is excluded from the bound-verification sweeps.
struct DiffusionG {
    std::string name;
    std::function<double(double)> g, dg, d2g, d3g;
    double bound_g = 0.0, bound_dg = 0.0, bound_d2g = 0.0, bound_d3g = 0.0;
    bool bounds_global = true;

    /// C = 1 + |g| + |g'| + |g''| + |g'''| (sup norms): one concrete constant
    /// under which the flow and inverse-flow estimates are checked.
    double lemma_constant() const { return 1.0 + bound_g + bound_dg + bound_d2g + bound_d3g; }

    /// Max discrepancy between supplied derivatives and central differences.
    /// Second differences use a wider step to stay clear of cancellation.
    double probe_consistency(double lo = -3.0, double hi = 3.0, std::size_t n = 25,
                             double h = 1e-5) const {
        const double h2 = 1e-4;
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
            const double d1 = (g(u + h) - g(u - h)) / (2 * h);
            const double d2 = (g(u + h2) - 2 * g(u) + g(u - h2)) / (h2 * h2);
            const double d3 = (dg(u + h2) - 2 * dg(u) + dg(u - h2)) / (h2 * h2);
            worst = std::max({worst, std::abs(d1 - dg(u)), std::abs(d2 - d2g(u)),
                              std::abs(d3 - d3g(u))});
        }
        return worst;
    }
};

/// Flow value and y-derivatives through third order at one (y, z).
struct FlowJet {
    double alpha;  // alpha(y, z)
    double d1;     // d alpha / dy  (> 0)
    double d2;     // d^2 alpha / dy^2
    double d3;     // d^3 alpha / dy^3
};

namespace detail {

using FlowState = std::array<double, 4>;

/// Joint ODE in z for (alpha, alpha_y, alpha_yy, alpha_yyy), obtained by
/// formal y-differentiation of alpha_z = g(alpha); solving the four
/// components together avoids the cancellation of nested differencing.
inline FlowState flow_rhs(const DiffusionG& g, const FlowState& u) {
    const double a = u[0], p = u[1], q = u[2], r = u[3];
    const double g1 = g.dg(a), g2 = g.d2g(a), g3 = g.d3g(a);
    return {g.g(a), g1 * p, g1 * q + g2 * p * p, g1 * r + 3.0 * g2 * p * q + g3 * p * p * p};
}

inline FlowState rk4_sweep(const DiffusionG& g, FlowState u, double z, std::size_t n_steps) {
    const double h = z / static_cast<double>(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) {
        const FlowState k1 = flow_rhs(g, u);
        FlowState tmp;
        for (int c = 0; c < 4; ++c) tmp[c] = u[c] + 0.5 * h * k1[c];
        const FlowState k2 = flow_rhs(g, tmp);
        for (int c = 0; c < 4; ++c) tmp[c] = u[c] + 0.5 * h * k2[c];
        const FlowState k3 = flow_rhs(g, tmp);
        for (int c = 0; c < 4; ++c) tmp[c] = u[c] + h * k3[c];
        const FlowState k4 = flow_rhs(g, tmp);
        for (int c = 0; c < 4; ++c)
            u[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
    return u;
}

}  // namespace detail

/// Integrate alpha_z = g(alpha), alpha(y,0) = y, together with the first three
/// y-derivatives, from 0 to z. Classical fixed-step RK4 with Richardson step
/// doubling until successive sweeps agree to `tol`.
inline FlowJet flow(const DiffusionG& g, double y, double z, double tol = 1e-10) {
    const detail::FlowState init{y, 1.0, 0.0, 0.0};
    if (z == 0.0) return {y, 1.0, 0.0, 0.0};
    std::size_t n = std::max<std::size_t>(32, static_cast<std::size_t>(std::ceil(std::abs(z) * 64.0)));
    detail::FlowState coarse = detail::rk4_sweep(g, init, z, n);
    for (int attempt = 0; attempt < 16; ++attempt) {
        n *= 2;
        const detail::FlowState fine = detail::rk4_sweep(g, init, z, n);
        double diff = 0.0;
        for (int c = 0; c < 4; ++c)
            diff = std::max(diff, std::abs(fine[c] - coarse[c]) / (1.0 + std::abs(fine[c])));
        if (diff < tol) return {fine[0], fine[1], fine[2], fine[3]};
        coarse = fine;
    }
    throw numeric_error("flow: step control failed to reach tolerance for g=" + g.name);
}

struct FlowInverse {
    double h;      // h(y, z) with alpha(h, z) = y
    double dh_dy;  // 1 / alpha_y(h, z)
};

/// y-inverse of the flow by safeguarded Newton on w -> alpha(w,z) - y.
/// The map is strictly increasing in w, so a sign-change bracket (seeded from
/// the growth estimate |h| <= |y| + C|z| and expanded geometrically if needed)
/// plus bisection fallback makes the iteration globally safe.
inline FlowInverse inverse_flow(const DiffusionG& g, double y, double z, double tol = 1e-10) {
    const double C = g.lemma_constant();
    double radius = std::isfinite(C) ? std::abs(y) + C * std::abs(z) + 1.0
                                     : std::abs(y) + 10.0 * (1.0 + std::abs(z));
    double lo = -radius, hi = radius;
    auto value = [&](double w) { return flow(g, w, z, tol).alpha - y; };
    double flo = value(lo), fhi = value(hi);
    int expansions = 0;
    while (flo > 0.0 || fhi < 0.0) {
        if (++expansions > 60)
            throw numeric_error("inverse_flow: failed to bracket the root (flow bounds violated?)");
        radius *= 2.0;
        lo = -radius;
        hi = radius;
        flo = value(lo);
        fhi = value(hi);
    }
    double w = 0.5 * (lo + hi);
    for (int iter = 0; iter < 100; ++iter) {
        const FlowJet jet = flow(g, w, z, tol);
        const double fw = jet.alpha - y;
        if (fw > 0.0)
            hi = w;
        else
            lo = w;
        if (std::abs(fw) < tol * (1.0 + std::abs(y))) return {w, 1.0 / jet.d1};
        double step = fw / jet.d1;
        double next = w - step;
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);  // bisection fallback
        if (std::abs(next - w) < 1e-15 * (1.0 + std::abs(w))) {
            w = next;
            break;
        }
        w = next;
    }
    const FlowJet jet = flow(g, w, z, tol);
    if (std::abs(jet.alpha - y) > 1e3 * tol * (1.0 + std::abs(y)))
        throw numeric_error("inverse_flow: Newton iteration stalled");
    return {w, 1.0 / jet.d1};
}

/// eta(t,y) = alpha(y, B_t) and its inverse field E(t,y) = h(y, B_t) along
/// one driving path.
inline std::pair<SamplePath, SamplePath> eta_and_E(const DiffusionG& g, const SamplePath& B,
                                                   double y) {
    if (B.dim != 1) throw std::invalid_argument("eta_and_E: scalar driving path expected");
    SamplePath eta(B.grid, 1, "eta");
    SamplePath inv(B.grid, 1, "E");
    for (std::size_t k = 0; k < B.n_nodes(); ++k) {
        eta.at(k) = flow(g, y, B.value(k)).alpha;
        inv.at(k) = inverse_flow(g, y, B.value(k)).h;
    }
    return {std::move(eta), std::move(inv)};
}

/// Worst-case slack of the flow estimates over a (y,z) box, for the forward
/// flow and its inverse. Violations are positive; values <= ~1e-9 mean the
/// bound holds to solver accuracy.
struct FlowBoundReport {
    double growth = -std::numeric_limits<double>::infinity();        // |xi| - (|y| + C|z|)
    double d1_upper = -std::numeric_limits<double>::infinity();      // |xi_y| - e^{C|z|}
    double d1_lower = -std::numeric_limits<double>::infinity();      // e^{-C|z|} - |xi_y|
    double d2 = -std::numeric_limits<double>::infinity();            // |xi_yy| - e^{C|z|}
    double d3 = -std::numeric_limits<double>::infinity();            // |xi_yyy| - e^{C|z|}
    double constant = 0.0;

    double worst() const { return std::max({growth, d1_upper, d1_lower, d2, d3}); }
};

inline FlowBoundReport verify_flow_bounds(const DiffusionG& g, double y_lo, double y_hi,
                                          double z_lo, double z_hi, std::size_t n_y = 21,
                                          std::size_t n_z = 21) {
    if (!g.bounds_global)
        throw std::invalid_argument("verify_flow_bounds: " + g.name +
                                    " does not carry global C^3_b bounds");
    FlowBoundReport rep;
    rep.constant = g.lemma_constant();
    const double C = rep.constant;
    auto absorb = [&](double y, double z, double xi, double d1, double d2, double d3) {
        const double grow = std::abs(y) + C * std::abs(z);
        const double env = std::exp(C * std::abs(z));
        const double env_inv = std::exp(-C * std::abs(z));
        rep.growth = std::max(rep.growth, std::abs(xi) - grow);
        rep.d1_upper = std::max(rep.d1_upper, std::abs(d1) - env);
        rep.d1_lower = std::max(rep.d1_lower, env_inv - std::abs(d1));
        rep.d2 = std::max(rep.d2, std::abs(d2) - env);
        rep.d3 = std::max(rep.d3, std::abs(d3) - env);
    };
    for (std::size_t i = 0; i < n_y; ++i) {
        const double y = y_lo + (y_hi - y_lo) * static_cast<double>(i) / (n_y - 1);
        for (std::size_t j = 0; j < n_z; ++j) {
            const double z = z_lo + (z_hi - z_lo) * static_cast<double>(j) / (n_z - 1);
            const FlowJet fj = flow(g, y, z);
            absorb(y, z, fj.alpha, fj.d1, fj.d2, fj.d3);
            // inverse-flow jets from the forward jets at (h, z)
            const FlowInverse hv = inverse_flow(g, y, z);
            const FlowJet bj = flow(g, hv.h, z);
            const double p = bj.d1, q = bj.d2, r = bj.d3;
            const double hy = 1.0 / p;
            const double hyy = -q / (p * p * p);
            const double hyyy = (3.0 * q * q - p * r) / (p * p * p * p * p);
            absorb(y, z, hv.h, hy, hyy, hyyy);
        }
    }
    return rep;
}

/// Tabulated flow jets over a (y,z) box with Hermite reads.
///
/// Built by one RK4 sweep in z per y node (all table z-nodes fall out of the
/// same integration), so the build costs what a single row of direct flow
/// calls would. Queries interpolate in z and y using the ODE right-hand side
/// and the stored derivative components as Hermite slopes; queries outside
/// the box fall back to the exact integrator.
class FlowTable {
public:
    FlowTable(DiffusionG g, double y_lo, double y_hi, std::size_t n_y, double z_lo,
              double z_hi, std::size_t n_z)
        : g_(std::move(g)), y_lo_(y_lo), y_hi_(y_hi), n_y_(n_y), z_lo_(z_lo), z_hi_(z_hi),
          n_z_(n_z), data_(n_y * n_z) {
        if (n_y < 2 || n_z < 2 || !(y_hi > y_lo) || !(z_hi > z_lo) || !(z_lo <= 0.0) ||
            !(z_hi >= 0.0))
            throw std::invalid_argument("FlowTable: invalid box (must contain z = 0)");
        const double hz = dz();
        const std::size_t substeps =
            std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(hz / 0.004)));
        for (std::size_t i = 0; i < n_y_; ++i) {
            const double y = y_node(i);
            // index of the last z-node <= 0 (z grid need not contain 0 exactly)
            detail::FlowState u{y, 1.0, 0.0, 0.0};
            double z_cur = 0.0;
            // upward sweep
            for (std::size_t j = 0; j < n_z_; ++j) {
                const double zj = z_node(j);
                if (zj < 0.0) continue;
                u = detail::rk4_sweep(g_, u, zj - z_cur, substeps);
                z_cur = zj;
                data_[i * n_z_ + j] = u;
            }
            // downward sweep
            u = {y, 1.0, 0.0, 0.0};
            z_cur = 0.0;
            for (std::size_t j = n_z_; j-- > 0;) {
                const double zj = z_node(j);
                if (zj >= 0.0) continue;
                u = detail::rk4_sweep(g_, u, zj - z_cur, substeps);
                z_cur = zj;
                data_[i * n_z_ + j] = u;
            }
        }
    }

    FlowJet jet(double y, double z) const {
        if (y < y_lo_ || y > y_hi_ || z < z_lo_ || z > z_hi_) return flow(g_, y, z);
        const double fy = (y - y_lo_) / dy();
        const double fz = (z - z_lo_) / dz();
        const std::size_t iy = std::min(static_cast<std::size_t>(fy), n_y_ - 2);
        const std::size_t iz = std::min(static_cast<std::size_t>(fz), n_z_ - 2);
        const detail::FlowState a0 = z_interp(iy, iz, z);
        const detail::FlowState a1 = z_interp(iy + 1, iz, z);
        const double t = (y - y_node(iy)) / dy();
        // Hermite in y: value slopes are the next derivative component.
        const double alpha = hermite(a0[0], a0[1], a1[0], a1[1], t, dy());
        const double d1 = hermite(a0[1], a0[2], a1[1], a1[2], t, dy());
        const double d2 = hermite(a0[2], a0[3], a1[2], a1[3], t, dy());
        const double d3 = a0[3] + t * (a1[3] - a0[3]);
        return {alpha, d1, d2, d3};
    }

    const DiffusionG& coefficient() const { return g_; }

private:
    double dy() const { return (y_hi_ - y_lo_) / static_cast<double>(n_y_ - 1); }
    double dz() const { return (z_hi_ - z_lo_) / static_cast<double>(n_z_ - 1); }
    double y_node(std::size_t i) const { return y_lo_ + dy() * static_cast<double>(i); }
    double z_node(std::size_t j) const { return z_lo_ + dz() * static_cast<double>(j); }

    static double hermite(double f0, double s0, double f1, double s1, double t, double h) {
        const double t2 = t * t, t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + t) * h * s0 +
               (-2 * t3 + 3 * t2) * f1 + (t3 - t2) * h * s1;
    }

    detail::FlowState z_interp(std::size_t iy, std::size_t iz, double z) const {
        const detail::FlowState& u0 = data_[iy * n_z_ + iz];
        const detail::FlowState& u1 = data_[iy * n_z_ + iz + 1];
        const detail::FlowState s0 = detail::flow_rhs(g_, u0);
        const detail::FlowState s1 = detail::flow_rhs(g_, u1);
        const double t = (z - z_node(iz)) / dz();
        detail::FlowState out;
        for (int c = 0; c < 4; ++c) out[c] = hermite(u0[c], s0[c], u1[c], s1[c], t, dz());
        return out;
    }

    DiffusionG g_;
    double y_lo_, y_hi_;
    std::size_t n_y_;
    double z_lo_, z_hi_;
    std::size_t n_z_;
    std::vector<detail::FlowState> data_;
};

}  // namespace fracsde
