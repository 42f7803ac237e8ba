#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fracsde/doss_flow.hpp"
#include "fracsde/forward_sde.hpp"
#include "fracsde/time_grid.hpp"

namespace fracsde {

class invariant_violation : public numeric_error {
public:
    using numeric_error::numeric_error;
};

/// Driver f(t, x, y, z) of the doubly driven equation, with the constants of
/// the standing Lipschitz/boundedness assumptions.
struct Driver {
    std::string name;
    std::function<double(double, double, double, double)> f;
    double lip_x = 0.0, lip_y = 0.0, lip_z = 0.0;
    double f0_bound = 0.0;  // sup_t |f(t,0,0,0)|
};

/// Driver seen by the solver: evaluated at a grid node of the driving fBm path.
using BsdeDriverFn = std::function<double(std::size_t node, double x, double y, double z)>;

/// Driver after the flow change of variables,
///   f~(t,x,y,z) = (1/p) { f(t, x, a, p z) + 1/2 q z^2 },
/// with (a, p, q) = (alpha, alpha_y, alpha_yy)(y, B_t). Quadratic growth in z
/// enters through the q z^2 term.
class TransformedDriver {
public:
    TransformedDriver(Driver base, const DiffusionG& g, SamplePath B, double y_lo = -8.0,
                      double y_hi = 8.0)
        : base_(std::move(base)), b_path_(std::move(B)),
          table_(make_table(g, b_path_, y_lo, y_hi)) {}

    double eval_node(std::size_t node, double x, double y, double z) const {
        const FlowJet j = table_.jet(y, b_path_.value(node));
        if (!(j.d1 > 0.0))
            throw invariant_violation("transformed driver: flow derivative not positive");
        return (base_.f(b_path_.grid.node(node), x, j.alpha, j.d1 * z) +
                0.5 * j.d2 * z * z) /
               j.d1;
    }

    double eval_time(double s, double x, double y, double z) const {
        return eval_node(b_path_.grid.index_of(s), x, y, z);
    }

    BsdeDriverFn fn() const {
        return [this](std::size_t node, double x, double y, double z) {
            return eval_node(node, x, y, z);
        };
    }

    /// Max of |f~| - K (1 + z^2) over a probe box, K = exp(C sup_s |B_s|);
    /// <= 0 certifies the quadratic-growth envelope on the sampled points.
    double growth_slack(double C, double box = 2.0, std::size_t n = 9) const {
        double sup_b = 0.0;
        for (std::size_t k = 0; k < b_path_.n_nodes(); ++k)
            sup_b = std::max(sup_b, std::abs(b_path_.value(k)));
        const double K = std::exp(C * sup_b);
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t kn = 0; kn < b_path_.n_nodes(); kn += std::max<std::size_t>(1, b_path_.n_nodes() / 8))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t l = 0; l < n; ++l) {
                        const double x = -box + 2 * box * static_cast<double>(i) / (n - 1);
                        const double y = -box + 2 * box * static_cast<double>(j) / (n - 1);
                        const double z = -box + 2 * box * static_cast<double>(l) / (n - 1);
                        worst = std::max(worst, std::abs(eval_node(kn, x, y, z)) -
                                                    K * (1.0 + z * z));
                    }
        return worst;
    }

    const SamplePath& driving_path() const { return b_path_; }
    const FlowTable& table() const { return table_; }

private:
    static FlowTable make_table(const DiffusionG& g, const SamplePath& B, double y_lo,
                                double y_hi) {
        double z_lo = 0.0, z_hi = 0.0;
        for (std::size_t k = 0; k < B.n_nodes(); ++k) {
            z_lo = std::min(z_lo, B.value(k));
            z_hi = std::max(z_hi, B.value(k));
        }
        const double pad = 0.05 * (z_hi - z_lo) + 1e-3;
        z_lo -= pad;
        z_hi += pad;
        const auto n_z = static_cast<std::size_t>(
            std::clamp((z_hi - z_lo) / 0.015, 129.0, 1025.0));
        const auto n_y = static_cast<std::size_t>(
            std::clamp((y_hi - y_lo) / 0.02, 129.0, 2049.0));
        return FlowTable(g, y_lo, y_hi, n_y, z_lo, z_hi, n_z);
    }

    Driver base_;
    SamplePath b_path_;
    FlowTable table_;
};

inline TransformedDriver transformed_driver(Driver f, const DiffusionG& g, SamplePath B) {
    return TransformedDriver(std::move(f), g, std::move(B));
}

/// theta_s = (phi_bound + 1) exp{ exp{C sup_{r<=t} |B_r|} s } - 1: the a-priori
/// envelope under which |Y_s| stays pathwise.
inline double theta_bound(double phi_bound, const SamplePath& B, double C, double s, double t) {
    if (s > t + 1e-12) throw std::invalid_argument("theta_bound: need s <= t");
    const std::size_t kt = B.grid.index_of(t);
    double sup_b = 0.0;
    for (std::size_t k = 0; k <= kt; ++k) sup_b = std::max(sup_b, std::abs(B.value(k)));
    const double rate = std::exp(C * sup_b);
    return (phi_bound + 1.0) * std::exp(rate * s) - 1.0;
}

struct BsdeOptions {
    std::size_t basis_degree = 3;
    int picard_iters = 2;
    double z_truncation = std::numeric_limits<double>::infinity();
    /// Optional a-priori envelope s -> theta_s. Fitted Y values are truncated
    /// into [-theta, theta] (the exact solution already lives there, so the
    /// truncation only tames polynomial tail overshoot); the worst
    /// pre-truncation excess is reported, and exceeding the envelope by more
    /// than its own size aborts the solve.
    std::function<double(double)> theta_envelope;
    double condition_warn = 1e10;
};

/// Pathwise solution arrays in the original clock (value known at s = 0,
/// equation propagated to s = t). Node j of y/z/state is time s_j = j dt.
struct BsdeSolution {
    TimeGrid grid;
    std::size_t t_index = 0;
    std::size_t n_paths = 0;
    std::vector<double> y;      // (t_index+1) * n_paths
    std::vector<double> z;      // same layout; node 0 copies node 1
    std::vector<double> state;  // forward-state values, same layout
    double value_at_t = 0.0;    // Y_t^{t,x}; deterministic given the fBm path
    double value_se = 0.0;      // Monte Carlo error proxy for value_at_t
    std::vector<double> step_residual_norm;  // per reversed regression step
    std::vector<double> step_condition;
    bool basis_warning = false;
    // worst |Y| - theta seen BEFORE envelope truncation; the stored arrays
    // respect the envelope by construction
    double theta_margin = -std::numeric_limits<double>::infinity();

    double y_at(std::size_t node, std::size_t path) const { return y[node * n_paths + path]; }
    double z_at(std::size_t node, std::size_t path) const { return z[node * n_paths + path]; }
    double state_at(std::size_t node, std::size_t path) const {
        return state[node * n_paths + path];
    }
};

namespace detail {

/// Least squares on a standardized monomial basis of the state sample.
/// A nearly degenerate sample (all paths at the anchor point) collapses to the
/// constant basis, which is exactly the plain-mean regression.
struct StepRegression {
    Eigen::MatrixXd psi;
    double mean = 0.0, scale = 1.0;
    std::size_t degree = 0;
    double condition = 1.0;

    StepRegression(const std::vector<double>& xs, std::size_t degree_req) {
        const std::size_t m = xs.size();
        mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(m);
        double var = 0.0;
        for (double v : xs) var += (v - mean) * (v - mean);
        scale = std::sqrt(var / static_cast<double>(m));
        degree = (scale < 1e-12) ? 0 : degree_req;
        if (degree == 0) scale = 1.0;
        psi.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(degree + 1));
        for (std::size_t p = 0; p < m; ++p) {
            const double u = (xs[p] - mean) / scale;
            double pw = 1.0;
            for (std::size_t d = 0; d <= degree; ++d) {
                psi(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(d)) = pw;
                pw *= u;
            }
        }
    }

    /// Fitted values of the projection of rhs onto the basis; fills residual
    /// norm (RMS) and records the worst R-diagonal ratio as a condition proxy.
    Eigen::VectorXd project(const Eigen::VectorXd& rhs, double& residual_rms) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(psi);
        const Eigen::MatrixXd r = qr.matrixR()
                                      .topLeftCorner(psi.cols(), psi.cols())
                                      .triangularView<Eigen::Upper>();
        double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < r.rows(); ++i) {
            dmax = std::max(dmax, std::abs(r(i, i)));
            dmin = std::min(dmin, std::abs(r(i, i)));
        }
        condition = dmin > 0.0 ? dmax / dmin : std::numeric_limits<double>::infinity();
        const Eigen::VectorXd coeffs = qr.solve(rhs);
        Eigen::VectorXd fitted = psi * coeffs;
        residual_rms = std::sqrt((rhs - fitted).squaredNorm() / static_cast<double>(rhs.size()));
        return fitted;
    }
};

}  // namespace detail

/// Regression Monte Carlo solver for
///   Y_s = Phi(X_0) + int_0^s f(r, X_r, Y_r, Z_r) dr - int_0^s Z_r dW_r
/// (backward Ito integral), pathwise in the fixed fBm realization baked into
/// the driver. The known value sits at s = 0; time reversal turns the
/// equation into a standard backward induction with terminal value Phi(X_0)
/// and reversed Brownian increments. Z comes from regressing Y dW / dt on the
/// state basis, Y from an explicit update with optional inner Picard passes
/// for the quadratic term.
inline BsdeSolution solve_bsde(const BsdeDriverFn& driver,
                               const std::function<double(double)>& terminal, double t,
                               double x, const std::vector<SamplePath>& w_paths,
                               const std::vector<DiffusionPath>& x_paths,
                               const BsdeOptions& opt = {}) {
    const std::size_t n_paths = w_paths.size();
    if (n_paths == 0 || x_paths.size() != n_paths)
        throw std::invalid_argument("solve_bsde: need matching nonempty path sets");
    if (n_paths < 10 * (opt.basis_degree + 1))
        throw std::invalid_argument("solve_bsde: need at least 10 paths per basis function");
    const TimeGrid grid = w_paths.front().grid;
    const std::size_t kt = grid.index_of(t);
    const double dt = grid.dt();
    for (const auto& xp : x_paths) {
        if (xp.anchor_index != kt || !(xp.grid == grid))
            throw std::invalid_argument("solve_bsde: state paths must be anchored at t");
        if (std::abs(xp.anchor_state.at(0) - x) > 0.0)
            throw std::invalid_argument("solve_bsde: state paths anchored at a different x");
    }

    BsdeSolution sol;
    sol.grid = grid;
    sol.t_index = kt;
    sol.n_paths = n_paths;
    sol.y.assign((kt + 1) * n_paths, 0.0);
    sol.z.assign((kt + 1) * n_paths, 0.0);
    sol.state.assign((kt + 1) * n_paths, 0.0);
    for (std::size_t j = 0; j <= kt; ++j)
        for (std::size_t p = 0; p < n_paths; ++p)
            sol.state[j * n_paths + p] = x_paths[p].at(j, 0);

    // Reversed clock: index k corresponds to original node j = kt - k.
    std::vector<double> y_next(n_paths), y_cur(n_paths), xs(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) y_next[p] = terminal(x_paths[p].at(0, 0));

    auto truncate_to_theta = [&](std::size_t node_j, std::vector<double>& vals) {
        if (!opt.theta_envelope) return;
        const double theta = opt.theta_envelope(grid.node(node_j));
        for (double& v : vals) {
            if (!std::isfinite(v))
                throw invariant_violation("solve_bsde: Y became non-finite");
            const double excess = std::abs(v) - theta;
            sol.theta_margin = std::max(sol.theta_margin, excess);
            if (excess > theta)
                throw invariant_violation(
                    "solve_bsde: |Y| exceeded twice the theta envelope");
            if (excess > 0.0) v = std::copysign(theta, v);
        }
    };
    truncate_to_theta(0, y_next);
    for (std::size_t p = 0; p < n_paths; ++p) sol.y[0 * n_paths + p] = y_next[p];

    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n_paths));
    for (std::size_t k = kt; k-- > 0;) {
        const std::size_t node_j = kt - k;  // original node carrying (Y, Z) of this step
        for (std::size_t p = 0; p < n_paths; ++p) xs[p] = x_paths[p].at(node_j, 0);
        detail::StepRegression reg(xs, opt.basis_degree);

        // Conditional expectation of Y at the next reversed step.
        for (std::size_t p = 0; p < n_paths; ++p) rhs(static_cast<Eigen::Index>(p)) = y_next[p];
        double res_y = 0.0;
        Eigen::VectorXd e_fit = reg.project(rhs, res_y);

        // Z: projection of the centered martingale increment (Y - E[Y]) dW / dt.
        // Centering does not change the conditional expectation (dW is mean
        // zero given the state) but removes most of the sampling variance.
        for (std::size_t p = 0; p < n_paths; ++p) {
            const double dw = w_paths[p].value(node_j) - w_paths[p].value(node_j - 1);
            rhs(static_cast<Eigen::Index>(p)) =
                (y_next[p] - e_fit(static_cast<Eigen::Index>(p))) * dw / dt;
        }
        double res_z = 0.0;
        Eigen::VectorXd z_fit = reg.project(rhs, res_z);

        sol.step_residual_norm.push_back(res_y);
        sol.step_condition.push_back(reg.condition);
        if (reg.condition > opt.condition_warn) sol.basis_warning = true;

        for (std::size_t p = 0; p < n_paths; ++p) {
            double zv = z_fit(static_cast<Eigen::Index>(p));
            if (std::abs(zv) > opt.z_truncation)
                zv = std::copysign(opt.z_truncation, zv);
            double yv = e_fit(static_cast<Eigen::Index>(p));
            for (int it = 0; it < opt.picard_iters; ++it)
                yv = e_fit(static_cast<Eigen::Index>(p)) +
                     dt * driver(node_j, xs[p], yv, zv);
            y_cur[p] = yv;
            sol.z[node_j * n_paths + p] = zv;
        }
        truncate_to_theta(node_j, y_cur);
        for (std::size_t p = 0; p < n_paths; ++p) sol.y[node_j * n_paths + p] = y_cur[p];
        std::swap(y_next, y_cur);
    }
    for (std::size_t p = 0; p < n_paths; ++p) sol.z[0 * n_paths + p] = sol.z[1 * n_paths + p];

    sol.value_at_t = sol.y[kt * n_paths];
    // MC error proxy: spread of the values entering the final (constant-basis)
    // projection.
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t p = 0; p < n_paths; ++p) {
        const double v = sol.y[(kt - 1) * n_paths + p];
        m1 += v;
        m2 += v * v;
    }
    m1 /= static_cast<double>(n_paths);
    m2 = m2 / static_cast<double>(n_paths) - m1 * m1;
    sol.value_se = std::sqrt(std::max(m2, 0.0) / static_cast<double>(n_paths));
    return sol;
}

/// Conditional-second-moment check for Z: at each stopping node tau, regress
/// the pathwise int_0^tau |Z|^2 ds on the state basis at tau and compare the
/// largest fitted value against exp{exp{C sup_{s<=t} |B_s|}}.
struct ZBoundReport {
    double bound = 0.0;
    double max_ratio = 0.0;
    std::vector<std::pair<double, double>> per_node;  // (tau, max fitted / bound)
};

inline ZBoundReport z_bound_check(const BsdeSolution& sol, const SamplePath& B, double C,
                                  const std::vector<std::size_t>& stopping_nodes) {
    const std::size_t kt = sol.t_index;
    double sup_b = 0.0;
    for (std::size_t k = 0; k <= kt; ++k) sup_b = std::max(sup_b, std::abs(B.value(k)));
    const double log_bound = std::exp(std::min(C * sup_b, 700.0));
    const double bound = log_bound > 700.0 ? std::numeric_limits<double>::infinity()
                                           : std::exp(log_bound);
    ZBoundReport rep;
    rep.bound = bound;
    const double dt = sol.grid.dt();
    std::vector<double> cum(sol.n_paths, 0.0), xs(sol.n_paths);
    std::size_t last = 0;
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(sol.n_paths));
    for (std::size_t node : stopping_nodes) {
        if (node > kt) throw std::invalid_argument("z_bound_check: node beyond horizon");
        for (std::size_t j = last; j < node; ++j)
            for (std::size_t p = 0; p < sol.n_paths; ++p) {
                const double zv = sol.z_at(j + 1, p);
                cum[p] += zv * zv * dt;
            }
        last = node;
        for (std::size_t p = 0; p < sol.n_paths; ++p) {
            xs[p] = sol.state_at(node, p);
            rhs(static_cast<Eigen::Index>(p)) = cum[p];
        }
        detail::StepRegression reg(xs, 3);
        double res = 0.0;
        const Eigen::VectorXd fitted = reg.project(rhs, res);
        const double worst = fitted.maxCoeff();
        const double ratio = std::isinf(bound) ? 0.0 : std::max(worst, 0.0) / bound;
        rep.per_node.emplace_back(sol.grid.node(node), ratio);
        rep.max_ratio = std::max(rep.max_ratio, ratio);
    }
    return rep;
}

}  // namespace fracsde
