#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fracsde {

/// Uniform partition of [0, horizon] with nodes t_k = k * dt().
struct TimeGrid {
    double horizon = 1.0;
    std::size_t n_steps = 1024;

    TimeGrid() = default;
    TimeGrid(double T, std::size_t n) : horizon(T), n_steps(n) {
        if (!(horizon > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be > 0");
        if (n_steps == 0) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
    }

    double dt() const { return horizon / static_cast<double>(n_steps); }
    std::size_t n_nodes() const { return n_steps + 1; }
    double node(std::size_t k) const { return static_cast<double>(k) * dt(); }

    /// Index of a node that must lie on the grid (relative tolerance on placement).
    std::size_t index_of(double t) const {
        const double k = t / dt();
        const auto ki = static_cast<std::size_t>(k + 0.5);
        if (ki > n_steps || std::abs(k - static_cast<double>(ki)) > 1e-9 * (1.0 + k))
            throw std::domain_error("TimeGrid: time is not a grid node");
        return ki;
    }

    bool operator==(const TimeGrid&) const = default;
};

/// Hurst parameter constrained to (1/2, 1).
struct HurstParam {
    double value;
    explicit HurstParam(double H) : value(H) {
        if (!(H > 0.5) || !(H < 1.0))
            throw std::invalid_argument("HurstParam: H must lie in (1/2, 1)");
    }
};

/// One realization of a scalar or R^d-valued process on a TimeGrid.
///
/// Values are stored node-major: data[k * dim + j] is coordinate j at node k.
/// Consumers apply the flat extension X_t = X_0 for t < 0 and X_t = X_T for
/// t > horizon; helpers below implement the t < 0 side for shifted reads.
struct SamplePath {
    TimeGrid grid;
    std::size_t dim = 1;
    std::vector<double> data;
    std::string label;

    SamplePath() = default;
    SamplePath(TimeGrid g, std::size_t d, std::string name = {})
        : grid(g), dim(d), data(g.n_nodes() * d, 0.0), label(std::move(name)) {
        if (dim == 0) throw std::invalid_argument("SamplePath: dim must be >= 1");
    }

    std::size_t n_nodes() const { return grid.n_nodes(); }

    double& at(std::size_t k, std::size_t j = 0) { return data[k * dim + j]; }
    double at(std::size_t k, std::size_t j = 0) const { return data[k * dim + j]; }

    /// Scalar value at node k (requires dim == 1).
    double value(std::size_t k) const { return data[k]; }

    /// Value at node k - m with the flat extension below zero.
    double value_shifted(std::size_t k, std::size_t m, std::size_t j = 0) const {
        return at(k >= m ? k - m : 0, j);
    }

    std::span<const double> node_values(std::size_t k) const {
        return {data.data() + k * dim, dim};
    }
};

inline void require_same_grid(const SamplePath& a, const SamplePath& b) {
    if (!(a.grid == b.grid))
        throw std::invalid_argument("paths are defined on different grids");
}

}  // namespace fracsde
