#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracsde/bsde.hpp"
#include "fracsde/doss_flow.hpp"

namespace fracsde {

/// Scalar coefficient with its Lipschitz constant (drift / diffusion entries).
struct ScalarCoefficient {
    std::string name;
    std::function<double(double)> fn;
    double lipschitz = 0.0;
};

/// Bounded terminal map.
struct TerminalMap {
    std::string name;
    std::function<double(double)> fn;
    double bound = 0.0;
};

namespace registry {

namespace detail {

inline std::string known(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
    return out;
}

template <typename T>
const T& lookup(const std::map<std::string, T>& table, const std::string& name,
                const char* what) {
    const auto it = table.find(name);
    if (it == table.end()) {
        std::vector<std::string> names;
        for (const auto& [k, v] : table) names.push_back(k);
        throw std::invalid_argument(std::string("unknown ") + what + " '" + name +
                                    "' (known: " + known(names) + ")");
    }
    return it->second;
}

}  // namespace detail

inline const std::map<std::string, DiffusionG>& g_table() {
    static const std::map<std::string, DiffusionG> table = [] {
        std::map<std::string, DiffusionG> t;
        t["zero"] = DiffusionG{"zero",
                               [](double) { return 0.0; },
                               [](double) { return 0.0; },
                               [](double) { return 0.0; },
                               [](double) { return 0.0; },
                               0.0, 0.0, 0.0, 0.0, true};
        // Plain identity (the linear flow y e^z); not C^3_b, so it carries no
        // global bounds and is excluded from the bound sweeps.
        t["id"] = DiffusionG{"id",
                             [](double u) { return u; },
                             [](double) { return 1.0; },
                             [](double) { return 0.0; },
                             [](double) { return 0.0; },
                             std::numeric_limits<double>::infinity(), 1.0, 0.0, 0.0, false};
        // Smooth clamp K tanh(u/K): matches the identity to O(u^3/K^2) near 0
        // and is genuinely C^3_b.
        {
            const double K = 3.0;
            auto tanh_k = [K](double u) { return std::tanh(u / K); };
            auto sech2_k = [K, tanh_k](double u) {
                const double th = tanh_k(u);
                return 1.0 - th * th;
            };
            DiffusionG d;
            d.name = "id_clamped";
            d.g = [K, tanh_k](double u) { return K * tanh_k(u); };
            d.dg = [sech2_k](double u) { return sech2_k(u); };
            d.d2g = [K, tanh_k, sech2_k](double u) {
                return -2.0 / K * sech2_k(u) * tanh_k(u);
            };
            d.d3g = [K, tanh_k, sech2_k](double u) {
                const double s2 = sech2_k(u), th = tanh_k(u);
                return -2.0 / (K * K) * s2 * (s2 - 2.0 * th * th);
            };
            d.bound_g = K;
            d.bound_dg = 1.0;
            // max |s^2 th| = 2/(3 sqrt 3), max |s^2 (s^2 - 2 th^2)| = 1
            d.bound_d2g = (2.0 / K) * 2.0 / (3.0 * std::sqrt(3.0));
            d.bound_d3g = 2.0 / (K * K);
            d.bounds_global = true;
            t["id_clamped"] = d;
        }
        t["sin"] = DiffusionG{"sin",
                              [](double u) { return std::sin(u); },
                              [](double u) { return std::cos(u); },
                              [](double u) { return -std::sin(u); },
                              [](double u) { return -std::cos(u); },
                              1.0, 1.0, 1.0, 1.0, true};
        t["cos"] = DiffusionG{"cos",
                              [](double u) { return std::cos(u); },
                              [](double u) { return -std::sin(u); },
                              [](double u) { return -std::cos(u); },
                              [](double u) { return std::sin(u); },
                              1.0, 1.0, 1.0, 1.0, true};
        return t;
    }();
    return table;
}

inline const std::map<std::string, ScalarCoefficient>& b_table() {
    static const std::map<std::string, ScalarCoefficient> table = {
        {"zero", {"zero", [](double) { return 0.0; }, 0.0}},
        {"0.5x", {"0.5x", [](double x) { return 0.5 * x; }, 0.5}},
    };
    return table;
}

inline const std::map<std::string, ScalarCoefficient>& sigma_table() {
    static const std::map<std::string, ScalarCoefficient> table = {
        {"zero", {"zero", [](double) { return 0.0; }, 0.0}},
        {"one", {"one", [](double) { return 1.0; }, 0.0}},
        {"0.3x", {"0.3x", [](double x) { return 0.3 * x; }, 0.3}},
    };
    return table;
}

inline const std::map<std::string, Driver>& f_table() {
    static const std::map<std::string, Driver> table = {
        {"zero", {"zero", [](double, double, double, double) { return 0.0; }, 0, 0, 0, 0}},
        {"cos_y_plus_half_z",
         {"cos_y_plus_half_z",
          [](double, double, double y, double z) { return std::cos(y) + 0.5 * z; }, 0.0, 1.0,
          0.5, 1.0}},
    };
    return table;
}

inline const std::map<std::string, TerminalMap>& phi_table() {
    static const std::map<std::string, TerminalMap> table = {
        {"cos", {"cos", [](double x) { return std::cos(x); }, 1.0}},
        {"one", {"one", [](double) { return 1.0; }, 1.0}},
    };
    return table;
}

inline const DiffusionG& g(const std::string& name) {
    return detail::lookup(g_table(), name, "diffusion coefficient g");
}
inline const ScalarCoefficient& b(const std::string& name) {
    return detail::lookup(b_table(), name, "drift b");
}
inline const ScalarCoefficient& sigma(const std::string& name) {
    return detail::lookup(sigma_table(), name, "diffusion sigma");
}
inline const Driver& f(const std::string& name) {
    return detail::lookup(f_table(), name, "driver f");
}
inline const TerminalMap& phi(const std::string& name) {
    return detail::lookup(phi_table(), name, "terminal map phi");
}

}  // namespace registry

/// Wrap scalar (b, sigma) registry entries as 1-d SdeCoefficients.
inline SdeCoefficients make_scalar_sde(const ScalarCoefficient& b_coeff,
                                       const ScalarCoefficient& sigma_coeff) {
    SdeCoefficients c;
    c.state_dim = 1;
    c.noise_dim = 1;
    c.drift = [fn = b_coeff.fn](std::span<const double> x, std::span<double> out) {
        out[0] = fn(x[0]);
    };
    c.diffusion = [fn = sigma_coeff.fn](std::span<const double> x, std::span<double> out) {
        out[0] = fn(x[0]);
    };
    c.drift_lipschitz = b_coeff.lipschitz;
    c.diffusion_lipschitz = sigma_coeff.lipschitz;
    return c;
}

}  // namespace fracsde
