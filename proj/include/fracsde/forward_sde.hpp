#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracsde/time_grid.hpp"

namespace fracsde {

/// Coefficients of the state equation, dimension-generic: b maps R^n -> R^n
/// and sigma maps R^n -> R^{n x d} (row-major, row i = diffusion loading of
/// coordinate i).
struct SdeCoefficients {
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    std::function<void(std::span<const double>, std::span<double>)> drift;
    std::function<void(std::span<const double>, std::span<double>)> diffusion;
    double drift_lipschitz = 0.0;
    double diffusion_lipschitz = 0.0;

    /// Max sampled difference quotient minus the declared constant (<= 0 means
    /// the declared constants dominate the probe set).
    double probe_lipschitz_slack(double lo = -3.0, double hi = 3.0, std::size_t n = 41) const {
        if (state_dim != 1) throw std::invalid_argument("probe_lipschitz_slack: 1-d probe only");
        double worst = -1e300;
        std::vector<double> fa(state_dim), fb(state_dim), sa(noise_dim), sb(noise_dim);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double a = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
            const double b2 = lo + (hi - lo) * static_cast<double>(i + 1) / (n - 1);
            drift({&a, 1}, fa);
            drift({&b2, 1}, fb);
            diffusion({&a, 1}, sa);
            diffusion({&b2, 1}, sb);
            const double gap = b2 - a;
            worst = std::max(worst, std::abs(fb[0] - fa[0]) / gap - drift_lipschitz);
            worst = std::max(worst, std::abs(sb[0] - sa[0]) / gap - diffusion_lipschitz);
        }
        return worst;
    }
};

/// Path of the state equation on [0, t], anchored at X_t = x.
struct DiffusionPath {
    TimeGrid grid;
    std::size_t dim = 1;
    std::size_t anchor_index = 0;          // grid index of t
    std::vector<double> anchor_state;      // x
    std::vector<double> data;              // node-major values on nodes 0..anchor_index

    double at(std::size_t k, std::size_t j = 0) const { return data[k * dim + j]; }
    std::span<const double> state(std::size_t k) const { return {data.data() + k * dim, dim}; }
};

/// Solve dX_s = -b(X_s) ds - sigma(X_s) dW_s (backward Ito) on [0,t] with
/// X_t = x by time reversal: X~_r := X_{t-r} satisfies a standard forward SDE
/// against the reversed increments W_t - W_{t-r}, and Euler-Maruyama with
/// left-point evaluation in reversed time realizes the right-endpoint backward
/// sums. X_s therefore reads only W increments on [s, t].
inline DiffusionPath solve_forward_sde(const SdeCoefficients& coeffs, double t,
                                       std::span<const double> x, const SamplePath& W) {
    if (x.size() != coeffs.state_dim)
        throw std::invalid_argument("solve_forward_sde: state dimension mismatch");
    if (W.dim != coeffs.noise_dim)
        throw std::invalid_argument("solve_forward_sde: noise dimension mismatch");
    const std::size_t kt = W.grid.index_of(t);
    const double dt = W.grid.dt();
    const std::size_t n = coeffs.state_dim, d = coeffs.noise_dim;

    DiffusionPath out;
    out.grid = W.grid;
    out.dim = n;
    out.anchor_index = kt;
    out.anchor_state.assign(x.begin(), x.end());
    out.data.assign((kt + 1) * n, 0.0);

    std::vector<double> state(x.begin(), x.end());
    std::vector<double> b(n), s(n * d);
    for (std::size_t j = 0; j < n; ++j) out.data[kt * n + j] = state[j];
    for (std::size_t k = kt; k-- > 0;) {
        // step from node k+1 down to node k
        coeffs.drift(state, b);
        coeffs.diffusion(state, s);
        for (std::size_t i = 0; i < n; ++i) {
            double diff = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                diff += s[i * d + j] * (W.at(k + 1, j) - W.at(k, j));
            state[i] += b[i] * dt + diff;
        }
        for (std::size_t j = 0; j < n; ++j) out.data[k * n + j] = state[j];
    }
    return out;
}

}  // namespace fracsde
