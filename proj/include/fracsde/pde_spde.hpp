#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracsde/bsde.hpp"
#include "fracsde/doss_flow.hpp"
#include "fracsde/rv_calculus.hpp"
#include "fracsde/time_grid.hpp"

namespace fracsde {

/// Space-time box for the explicit scheme. The parabolic bound
/// dt <= h^2 / (max sigma^2 * 1.1) is checked before any stepping.
struct SpaceTimeGrid {
    TimeGrid time;
    double x_min = -6.0, x_max = 6.0;
    std::size_t n_x = 128;  // intervals; nodes 0..n_x

    double h() const { return (x_max - x_min) / static_cast<double>(n_x); }
    std::size_t n_x_nodes() const { return n_x + 1; }
    double x_node(std::size_t j) const { return x_min + h() * static_cast<double>(j); }

    void check_stability(double max_sigma_sq) const {
        if (!(x_max > x_min) || n_x < 8)
            throw std::invalid_argument("SpaceTimeGrid: degenerate spatial box");
        const double limit = h() * h() / (std::max(max_sigma_sq, 1e-300) * 1.1);
        if (time.dt() > limit)
            throw std::invalid_argument(
                "SpaceTimeGrid: explicit scheme unstable (dt > h^2 / (max sigma^2 * 1.1))");
    }
};

/// Scalar random field u(t_k, x_j) tied to one driving-path realization.
struct RandomField {
    SpaceTimeGrid grid;
    std::vector<double> values;  // time-major: values[k * n_x_nodes + j]
    std::string provenance;

    double at(std::size_t k, std::size_t j) const { return values[k * grid.n_x_nodes() + j]; }
    double& at(std::size_t k, std::size_t j) { return values[k * grid.n_x_nodes() + j]; }
};

/// Explicit finite differences for the random-coefficient problem
///   du/dt = L u - f~(t, x, u, sigma du/dx),   u(0,x) = Phi(x),
/// with L = 1/2 sigma^2 d_xx + b d_x (central stencils) and Dirichlet values
/// frozen at Phi on the two boundary columns. Interior-only consumers should
/// discard a band near the boundary.
inline RandomField solve_pde_random_coeff(const std::function<double(double)>& b,
                                          const std::function<double(double)>& sigma,
                                          const BsdeDriverFn& f_tilde,
                                          const std::function<double(double)>& terminal,
                                          const SpaceTimeGrid& grid) {
    const std::size_t nx = grid.n_x_nodes();
    const std::size_t nt = grid.time.n_steps;
    const double h = grid.h();
    const double dt = grid.time.dt();
    double max_sig_sq = 0.0;
    for (std::size_t j = 0; j < nx; ++j) {
        const double s = sigma(grid.x_node(j));
        max_sig_sq = std::max(max_sig_sq, s * s);
    }
    grid.check_stability(max_sig_sq);

    RandomField u;
    u.grid = grid;
    u.values.assign((nt + 1) * nx, 0.0);
    u.provenance = "w-pde";
    for (std::size_t j = 0; j < nx; ++j) u.at(0, j) = terminal(grid.x_node(j));
    for (std::size_t k = 0; k < nt; ++k) {
        u.at(k + 1, 0) = u.at(0, 0);
        u.at(k + 1, nx - 1) = u.at(0, nx - 1);
        for (std::size_t j = 1; j + 1 < nx; ++j) {
            const double x = grid.x_node(j);
            const double sig = sigma(x);
            const double uc = u.at(k, j);
            const double dxx = (u.at(k, j + 1) - 2.0 * uc + u.at(k, j - 1)) / (h * h);
            const double dx = (u.at(k, j + 1) - u.at(k, j - 1)) / (2.0 * h);
            const double lu = 0.5 * sig * sig * dxx + b(x) * dx;
            u.at(k + 1, j) = uc + dt * (lu - f_tilde(k, x, uc, sig * dx));
        }
    }
    return u;
}

/// Pointwise flow map between the random-coefficient solution u and the
/// candidate driven-field solution u^ = alpha(u, B_t); `inverse` applies the
/// y-inverse instead (u = E(t, u^)).
inline RandomField spde_transform(const RandomField& field, const FlowTable& flow_table,
                                  const SamplePath& B, bool inverse = false) {
    if (!(B.grid == field.grid.time)) throw std::invalid_argument("spde_transform: grid mismatch");
    RandomField out;
    out.grid = field.grid;
    out.values.resize(field.values.size());
    out.provenance = inverse ? "inverse_transform(" + field.provenance + ")"
                             : "transform(" + field.provenance + ")";
    const std::size_t nx = field.grid.n_x_nodes();
    for (std::size_t k = 0; k <= field.grid.time.n_steps; ++k) {
        const double z = B.value(k);
        for (std::size_t j = 0; j < nx; ++j) {
            if (!inverse) {
                out.at(k, j) = flow_table.jet(field.at(k, j), z).alpha;
            } else {
                double w = field.at(k, j);
                bool ok = false;
                for (int iter = 0; iter < 60; ++iter) {
                    const FlowJet jet = flow_table.jet(w, z);
                    const double fw = jet.alpha - field.at(k, j);
                    if (std::abs(fw) < 1e-11 * (1.0 + std::abs(field.at(k, j)))) {
                        ok = true;
                        break;
                    }
                    w -= fw / jet.d1;
                }
                out.at(k, j) = ok ? w : inverse_flow(flow_table.coefficient(), field.at(k, j), z).h;
            }
        }
    }
    return out;
}

/// Max over interior columns (a `band` of nodes next to each boundary is
/// excluded) of sup_t | u^(t,x_j) - u^(0,x_j) - int drift dt - I(eps,t,g(u^),dB) |
/// where drift = L u^ - f(t,x,u^,sigma d_x u^).
inline double spde_residual(const RandomField& u_hat, const std::function<double(double)>& b,
                            const std::function<double(double)>& sigma, const Driver& f,
                            const DiffusionG& g, const SamplePath& B, std::size_t eps_steps,
                            std::size_t band = 4) {
    if (!(B.grid == u_hat.grid.time)) throw std::invalid_argument("spde_residual: grid mismatch");
    const std::size_t nx = u_hat.grid.n_x_nodes();
    const std::size_t nt = u_hat.grid.time.n_steps;
    if (nx < 2 * band + 3) throw std::invalid_argument("spde_residual: grid too narrow for band");
    const double h = u_hat.grid.h();
    const double dt = u_hat.grid.time.dt();

    double worst = 0.0;
    SamplePath column(u_hat.grid.time, 1);
    for (std::size_t j = band; j + band < nx; ++j) {
        if (j == 0 || j + 1 == nx) continue;
        const double x = u_hat.grid.x_node(j);
        const double sig = sigma(x);
        for (std::size_t k = 0; k <= nt; ++k) column.at(k) = g.g(u_hat.at(k, j));
        const SamplePath rv = rv_backward_integral(column, B, eps_steps);
        double drift = 0.0;
        double col_worst = 0.0;
        for (std::size_t k = 0; k <= nt; ++k) {
            if (k > 0) {
                const std::size_t i = k - 1;
                const double uc = u_hat.at(i, j);
                const double dxx = (u_hat.at(i, j + 1) - 2.0 * uc + u_hat.at(i, j - 1)) / (h * h);
                const double dx = (u_hat.at(i, j + 1) - u_hat.at(i, j - 1)) / (2.0 * h);
                const double lu = 0.5 * sig * sig * dxx + b(x) * dx;
                drift += (lu - f.f(u_hat.grid.time.node(i), x, uc, sig * dx)) * dt;
            }
            const double res = u_hat.at(k, j) - u_hat.at(0, j) - drift - rv.value(k);
            col_worst = std::max(col_worst, std::abs(res));
        }
        worst = std::max(worst, col_worst);
    }
    return worst;
}

/// Probe-point comparison between a PDE field and pathwise BSDE values.
struct FeynmanKacProbe {
    double t, x;
    double bsde_value;
    double bsde_se;
};

struct FeynmanKacReport {
    double max_discrepancy = 0.0;
    std::vector<double> field_values, discrepancies;
};

inline FeynmanKacReport feynman_kac_check(const RandomField& field,
                                          const std::vector<FeynmanKacProbe>& probes) {
    FeynmanKacReport rep;
    for (const auto& probe : probes) {
        const std::size_t k = field.grid.time.index_of(probe.t);
        const double fj = (probe.x - field.grid.x_min) / field.grid.h();
        if (fj < 0.0 || fj > static_cast<double>(field.grid.n_x))
            throw std::domain_error("feynman_kac_check: probe outside the spatial box");
        const auto j0 = std::min(static_cast<std::size_t>(fj), field.grid.n_x - 1);
        const double w = fj - static_cast<double>(j0);
        const double value = (1.0 - w) * field.at(k, j0) + w * field.at(k, j0 + 1);
        rep.field_values.push_back(value);
        rep.discrepancies.push_back(value - probe.bsde_value);
        rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(value - probe.bsde_value));
    }
    return rep;
}

}  // namespace fracsde
