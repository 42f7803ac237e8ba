#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fracsde/time_grid.hpp"

namespace fracsde {

/// Strictly decreasing list of regularization widths, in grid steps, so that
/// every shifted difference X(s) - X(s - eps) is an exact lattice read.
struct EpsSchedule {
    std::vector<std::size_t> steps;

    explicit EpsSchedule(std::vector<std::size_t> m) : steps(std::move(m)) {
        if (steps.empty()) throw std::invalid_argument("EpsSchedule: empty");
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (steps[i] == 0) throw std::invalid_argument("EpsSchedule: eps must be >= dt");
            if (i > 0 && steps[i] >= steps[i - 1])
                throw std::invalid_argument("EpsSchedule: must be strictly decreasing");
        }
    }

    static EpsSchedule from_eps(const TimeGrid& grid, const std::vector<double>& eps) {
        std::vector<std::size_t> m;
        m.reserve(eps.size());
        for (double e : eps) {
            const double k = e / grid.dt();
            const auto ki = static_cast<std::size_t>(k + 0.5);
            if (ki == 0 || std::abs(k - static_cast<double>(ki)) > 1e-9 * (1.0 + k))
                throw std::invalid_argument("EpsSchedule: eps is not a multiple of dt");
            m.push_back(ki);
        }
        return EpsSchedule(std::move(m));
    }
};

/// Backward regularized integral path
///   t_k -> (1/eps) \int_0^{t_k} X(s) (Y(s) - Y(s-eps)) ds,
/// discretized as a left-endpoint Riemann sum with eps = m * dt and the flat
/// extension Y(s) = Y(0) for s < 0. Exact for grid-piecewise-constant data.
inline SamplePath rv_backward_integral(const SamplePath& X, const SamplePath& Y,
                                       std::size_t eps_steps) {
    require_same_grid(X, Y);
    if (X.dim != 1 || Y.dim != 1)
        throw std::invalid_argument("rv_backward_integral: scalar paths expected");
    if (eps_steps == 0) throw std::invalid_argument("rv_backward_integral: eps must be >= dt");
    const std::size_t n = X.grid.n_steps;
    const double w = 1.0 / static_cast<double>(eps_steps);  // dt/eps
    SamplePath out(X.grid, 1, "rv_integral");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += w * X.value(i) * (Y.value(i) - Y.value_shifted(i, eps_steps));
        out.at(i + 1) = acc;
    }
    return out;
}

/// Regularized bracket path
///   t_k -> (1/eps) \int_0^{t_k} (X(s)-X(s-eps)) (Y(s)-Y(s-eps)) ds,
/// same discretization and extension convention as rv_backward_integral.
inline SamplePath rv_bracket(const SamplePath& X, const SamplePath& Y, std::size_t eps_steps) {
    require_same_grid(X, Y);
    if (X.dim != 1 || Y.dim != 1) throw std::invalid_argument("rv_bracket: scalar paths expected");
    if (eps_steps == 0) throw std::invalid_argument("rv_bracket: eps must be >= dt");
    const std::size_t n = X.grid.n_steps;
    const double w = 1.0 / static_cast<double>(eps_steps);
    SamplePath out(X.grid, 1, "rv_bracket");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += w * (X.value(i) - X.value_shifted(i, eps_steps)) *
               (Y.value(i) - Y.value_shifted(i, eps_steps));
        out.at(i + 1) = acc;
    }
    return out;
}

/// Scalar C^2 function bundle for the one-dimensional change-of-variable check.
struct ScalarField1 {
    std::function<double(double)> f, df, d2f;
};

/// sup_t | f(X_t) - f(X_0) - I(eps,t,f'(X),dX) + 1/2 \int f''(X) dC_eps(X,X) |.
///
/// The bracket integral is a left-endpoint Stieltjes sum against the
/// regularized bracket path, matching the convergence statement for
/// continuous integrands against C_eps.
inline double ito_residual_1d(const ScalarField1& f, const SamplePath& X,
                              std::size_t eps_steps) {
    if (X.dim != 1) throw std::invalid_argument("ito_residual_1d: scalar path expected");
    const std::size_t n = X.grid.n_steps;
    SamplePath fprime(X.grid, 1);
    for (std::size_t k = 0; k <= n; ++k) fprime.at(k) = f.df(X.value(k));
    const SamplePath integral = rv_backward_integral(fprime, X, eps_steps);
    const SamplePath bracket = rv_bracket(X, X, eps_steps);

    double worst = 0.0;
    double stieltjes = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        if (k > 0)
            stieltjes += f.d2f(X.value(k - 1)) * (bracket.value(k) - bracket.value(k - 1));
        const double lhs = f.f(X.value(k)) - f.f(X.value(0));
        const double rhs = integral.value(k) - 0.5 * stieltjes;
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

/// C^2 function of two variables with all derivatives through second order.
struct ScalarField2 {
    std::function<double(double, double)> f, fx, fy, fxx, fxy, fyy;

    /// Max discrepancy between the supplied derivatives and central finite
    /// differences of f over a probe box; construction-time sanity check.
    /// Second differences use a wider step to stay clear of cancellation.
    double probe_consistency(double lo = -2.0, double hi = 2.0, std::size_t n = 9,
                             double h = 1e-5) const {
        const double h2 = 1e-4;
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double x = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
                const double y = lo + (hi - lo) * static_cast<double>(j) / (n - 1);
                const double dx = (f(x + h, y) - f(x - h, y)) / (2 * h);
                const double dy = (f(x, y + h) - f(x, y - h)) / (2 * h);
                const double dxx = (f(x + h2, y) - 2 * f(x, y) + f(x - h2, y)) / (h2 * h2);
                const double dyy = (f(x, y + h2) - 2 * f(x, y) + f(x, y - h2)) / (h2 * h2);
                const double dxy = (f(x + h2, y + h2) - f(x + h2, y - h2) -
                                    f(x - h2, y + h2) + f(x - h2, y - h2)) /
                                   (4 * h2 * h2);
                worst = std::max({worst, std::abs(dx - fx(x, y)), std::abs(dy - fy(x, y)),
                                  std::abs(dxx - fxx(x, y)), std::abs(dyy - fyy(x, y)),
                                  std::abs(dxy - fxy(x, y))});
            }
        }
        return worst;
    }
};

/// Residual of the mixed change-of-variable formula for F(alpha_t, B_t) where
/// alpha_t = alpha_0 + \int beta ds + \int gamma dW (backward Ito sum with
/// right-endpoint gamma) and the dB term is the backward regularized integral
/// of dF/dy(alpha, B) against B at the given eps.
inline double mixed_ito_residual(const ScalarField2& F, double alpha0, const SamplePath& beta,
                                 const SamplePath& gamma, const SamplePath& W,
                                 const SamplePath& B, std::size_t eps_steps) {
    require_same_grid(beta, gamma);
    require_same_grid(beta, W);
    require_same_grid(beta, B);
    if (W.dim != 1 || B.dim != 1 || beta.dim != 1 || gamma.dim != 1)
        throw std::invalid_argument("mixed_ito_residual: scalar paths expected");
    const std::size_t n = W.grid.n_steps;
    const double dt = W.grid.dt();

    SamplePath alpha(W.grid, 1, "alpha");
    alpha.at(0) = alpha0;
    for (std::size_t i = 0; i < n; ++i)
        alpha.at(i + 1) = alpha.value(i) + beta.value(i) * dt +
                          gamma.value(i + 1) * (W.value(i + 1) - W.value(i));

    SamplePath fy(W.grid, 1);
    for (std::size_t k = 0; k <= n; ++k) fy.at(k) = F.fy(alpha.value(k), B.value(k));
    const SamplePath rv_term = rv_backward_integral(fy, B, eps_steps);

    double worst = 0.0;
    double drift = 0.0, ito_w = 0.0, quad = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        if (k > 0) {
            const std::size_t i = k - 1;
            drift += F.fx(alpha.value(i), B.value(i)) * beta.value(i) * dt;
            ito_w += F.fx(alpha.value(i + 1), B.value(i + 1)) * gamma.value(i + 1) *
                     (W.value(i + 1) - W.value(i));
            const double g = gamma.value(i);
            quad += F.fxx(alpha.value(i), B.value(i)) * g * g * dt;
        }
        const double lhs = F.f(alpha.value(k), B.value(k)) - F.f(alpha0, 0.0);
        const double rhs = drift + ito_w + rv_term.value(k) - 0.5 * quad;
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

}  // namespace fracsde
