#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracsde/bsde.hpp"
#include "fracsde/doss_flow.hpp"
#include "fracsde/forward_sde.hpp"
#include "fracsde/rv_calculus.hpp"
#include "fracsde/time_grid.hpp"

namespace fracsde {

/// Pathwise (U, V) arrays assembled from a BSDE solution through the flow:
/// U_s = alpha(Y_s, B_s), V_s = alpha_y(Y_s, B_s) Z_s.
struct BdsdeSolution {
    TimeGrid grid;
    std::size_t t_index = 0;
    std::size_t n_paths = 0;
    std::vector<double> u, v;  // node-major, same layout as BsdeSolution
    std::string provenance;

    double u_at(std::size_t node, std::size_t path) const { return u[node * n_paths + path]; }
    double v_at(std::size_t node, std::size_t path) const { return v[node * n_paths + path]; }
};

inline BdsdeSolution doss_sussman_lift(const BsdeSolution& sol, const FlowTable& flow_table,
                                       const SamplePath& B) {
    if (!(B.grid == sol.grid)) throw std::invalid_argument("doss_sussman_lift: grid mismatch");
    BdsdeSolution out;
    out.grid = sol.grid;
    out.t_index = sol.t_index;
    out.n_paths = sol.n_paths;
    out.u.resize(sol.y.size());
    out.v.resize(sol.z.size());
    out.provenance = "lift(" + flow_table.coefficient().name + ")";
    for (std::size_t j = 0; j <= sol.t_index; ++j) {
        const double z = B.value(j);
        for (std::size_t p = 0; p < sol.n_paths; ++p) {
            const FlowJet jet = flow_table.jet(sol.y_at(j, p), z);
            out.u[j * sol.n_paths + p] = jet.alpha;
            out.v[j * sol.n_paths + p] = jet.d1 * sol.z_at(j, p);
        }
    }
    return out;
}

/// Invert the lift: Y_s = E(s, U_s) via the monotone y-inverse of the flow,
/// Z_s = V_s / alpha_y(Y_s, B_s). Newton on the tabulated flow with the exact
/// integrator as an out-of-range fallback.
inline BsdeSolution inverse_transform(const BdsdeSolution& bd, const FlowTable& flow_table,
                                      const SamplePath& B) {
    if (!(B.grid == bd.grid)) throw std::invalid_argument("inverse_transform: grid mismatch");
    BsdeSolution out;
    out.grid = bd.grid;
    out.t_index = bd.t_index;
    out.n_paths = bd.n_paths;
    out.y.assign(bd.u.size(), 0.0);
    out.z.assign(bd.v.size(), 0.0);
    const DiffusionG& g = flow_table.coefficient();
    for (std::size_t j = 0; j <= bd.t_index; ++j) {
        const double z = B.value(j);
        for (std::size_t p = 0; p < bd.n_paths; ++p) {
            const double target = bd.u_at(j, p);
            // Newton with the table jets; inverse_flow() is exact but slower.
            double w = target;
            bool ok = false;
            for (int iter = 0; iter < 60; ++iter) {
                const FlowJet jet = flow_table.jet(w, z);
                const double fw = jet.alpha - target;
                if (std::abs(fw) < 1e-11 * (1.0 + std::abs(target))) {
                    ok = true;
                    break;
                }
                w -= fw / jet.d1;
            }
            if (!ok) w = inverse_flow(g, target, z).h;
            out.y[j * bd.n_paths + p] = w;
            out.z[j * bd.n_paths + p] = bd.v_at(j, p) / flow_table.jet(w, z).d1;
        }
    }
    return out;
}

/// sup over grid nodes s of
///   | U_s - Phi(X_0) - sum f(r,X,U,V) dr - I(eps,s,g(U),dB) + sum V dW |
/// for one path: the backward-integral term is the regularized estimator
/// against the fBm path, the dW term the right-endpoint backward sum.
inline double bdsde_residual(const BdsdeSolution& bd, std::size_t path, const Driver& f,
                             const DiffusionG& g,
                             const std::function<double(double)>& terminal,
                             const DiffusionPath& x_path, const SamplePath& w_path,
                             const SamplePath& B, std::size_t eps_steps) {
    if (!(w_path.grid == bd.grid) || !(B.grid == bd.grid))
        throw std::invalid_argument("bdsde_residual: grid mismatch");
    if (path >= bd.n_paths) throw std::invalid_argument("bdsde_residual: path out of range");
    const std::size_t kt = bd.t_index;
    const double dt = bd.grid.dt();

    SamplePath g_of_u(bd.grid, 1, "g(U)");
    for (std::size_t j = 0; j <= kt; ++j) g_of_u.at(j) = g.g(bd.u_at(j, path));
    // restrict the integral to [0, t] by zeroing increments past the horizon
    const SamplePath rv = rv_backward_integral(g_of_u, B, eps_steps);

    const double phi0 = terminal(x_path.at(0, 0));
    double drift = 0.0, ito_w = 0.0, worst = 0.0;
    for (std::size_t j = 0; j <= kt; ++j) {
        if (j > 0) {
            const std::size_t i = j - 1;
            drift += f.f(bd.grid.node(i), x_path.at(i, 0), bd.u_at(i, path), bd.v_at(i, path)) * dt;
            ito_w += bd.v_at(j, path) * (w_path.value(j) - w_path.value(i));
        }
        const double rhs = phi0 + drift + rv.value(j) - ito_w;
        worst = std::max(worst, std::abs(bd.u_at(j, path) - rhs));
    }
    return worst;
}

}  // namespace fracsde
