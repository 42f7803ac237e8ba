#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fracsde/bdsde.hpp"
#include "fracsde/experiment.hpp"
#include "fracsde/fbm.hpp"
#include "fracsde/parallel.hpp"
#include "fracsde/registry.hpp"

using namespace fracsde;
using Catch::Approx;

namespace {

struct Setup {
    TimeGrid grid;
    SamplePath b_path;
    std::vector<SamplePath> w;
    std::vector<DiffusionPath> x;
    BsdeSolution sol;
    std::optional<TransformedDriver> driver;
};

Setup solve_case(const std::string& g_name, const std::string& f_name, std::size_t n_steps,
                 std::size_t n_paths, std::uint64_t seed,
                 const std::string& sigma_name = "one") {
    Setup s{TimeGrid(1.0, n_steps), {}, {}, {}, {}, {}};
    const DiffusionG& g = registry::g(g_name);
    const Driver& f = registry::f(f_name);
    s.b_path = sample_fbm(s.grid, HurstParam(0.75), seed);
    const SdeCoefficients coeffs =
        make_scalar_sde(registry::b("zero"), registry::sigma(sigma_name));
    s.w.resize(n_paths);
    s.x.resize(n_paths);
    const double x0 = 0.0;
    parallel_for(n_paths, 0, [&](std::size_t p) {
        s.w[p] = sample_bm(s.grid, 1, seed, p);
        s.x[p] = solve_forward_sde(coeffs, 1.0, {&x0, 1}, s.w[p]);
    });
    s.driver.emplace(f, g, s.b_path);
    BsdeOptions opt;
    opt.basis_degree = 3;
    s.sol = solve_bsde(s.driver->fn(), registry::phi("cos").fn, 1.0, 0.0, s.w, s.x, opt);
    return s;
}

}  // namespace

TEST_CASE("lift is the identity for vanishing g") {
    auto s = solve_case("zero", "zero", 64, 256, 21);
    const BdsdeSolution bd = doss_sussman_lift(s.sol, s.driver->table(), s.b_path);
    for (std::size_t j = 0; j <= s.sol.t_index; j += 16)
        for (std::size_t p = 0; p < s.sol.n_paths; p += 64) {
            CHECK(bd.u_at(j, p) == Approx(s.sol.y_at(j, p)).margin(1e-12));
            CHECK(bd.v_at(j, p) == Approx(s.sol.z_at(j, p)).margin(1e-12));
        }
}

TEST_CASE("lift through the exponential flow and its inverse") {
    auto s = solve_case("id", "zero", 64, 256, 22);
    const BdsdeSolution bd = doss_sussman_lift(s.sol, s.driver->table(), s.b_path);
    for (std::size_t j = 0; j <= s.sol.t_index; j += 16) {
        const double eb = std::exp(s.b_path.value(j));
        for (std::size_t p = 0; p < s.sol.n_paths; p += 64) {
            CHECK(bd.u_at(j, p) == Approx(s.sol.y_at(j, p) * eb).margin(1e-8));
            CHECK(bd.v_at(j, p) == Approx(s.sol.z_at(j, p) * eb).margin(1e-8));
        }
    }
    const BsdeSolution back = inverse_transform(bd, s.driver->table(), s.b_path);
    double worst = 0.0;
    for (std::size_t j = 0; j <= s.sol.t_index; ++j)
        for (std::size_t p = 0; p < s.sol.n_paths; ++p) {
            worst = std::max(worst, std::abs(back.y_at(j, p) - s.sol.y_at(j, p)));
            worst = std::max(worst, std::abs(back.z_at(j, p) - s.sol.z_at(j, p)));
        }
    CHECK(worst < 1e-8);
}

TEST_CASE("round trip for a nonlinear coefficient") {
    auto s = solve_case("sin", "cos_y_plus_half_z", 64, 256, 23);
    const BdsdeSolution bd = doss_sussman_lift(s.sol, s.driver->table(), s.b_path);
    const BsdeSolution back = inverse_transform(bd, s.driver->table(), s.b_path);
    double worst = 0.0;
    for (std::size_t j = 0; j <= s.sol.t_index; ++j)
        for (std::size_t p = 0; p < s.sol.n_paths; ++p) {
            worst = std::max(worst, std::abs(back.y_at(j, p) - s.sol.y_at(j, p)));
            worst = std::max(worst, std::abs(back.z_at(j, p) - s.sol.z_at(j, p)));
        }
    CHECK(worst < 1e-8);
    // growth of the lifted trajectory under the flow estimate
    const double C = registry::g("sin").lemma_constant();
    for (std::size_t j = 0; j <= s.sol.t_index; j += 8)
        for (std::size_t p = 0; p < s.sol.n_paths; p += 32)
            REQUIRE(std::abs(bd.u_at(j, p)) <=
                    std::abs(s.sol.y_at(j, p)) + C * std::abs(s.b_path.value(j)) + 1e-9);
}

TEST_CASE("degenerate equation has vanishing residual") {
    // f = 0, g = 0, sigma = 0: U is frozen at Phi(x)
    auto s = solve_case("zero", "zero", 64, 256, 24, "zero");
    const BdsdeSolution bd = doss_sussman_lift(s.sol, s.driver->table(), s.b_path);
    const double res = bdsde_residual(bd, 0, registry::f("zero"), registry::g("zero"),
                                      registry::phi("cos").fn, s.x[0], s.w[0], s.b_path, 16);
    CHECK(res < 1e-10);
}

TEST_CASE("linear equation residual shrinks under joint refinement") {
    const ExperimentConfig cfg = [] {
        ExperimentConfig c;
        c.kind = "bdsde_residual";
        c.seed = 77;
        c.paths = 2048;
        c.eps = {1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0};
        c.eps_ratio = 16;
        c.basis_degree = 5;
        c.coefficients["g"] = "id";
        c.coefficients["f"] = "zero";
        c.coefficients["phi"] = "cos";
        return c;
    }();
    const ConvergenceReport rep = run_experiment(cfg);
    REQUIRE(rep.levels.size() == 3);
    CHECK(rep.levels[1].median < rep.levels[0].median);
    CHECK(rep.levels[2].median < rep.levels[1].median);
    CHECK(rep.levels[2].median < 0.12);  // ~ eps^{1/2} systematic defect
    // linear case: U_t = Y_t e^{B_t} against the lifted value
    const auto& extras = rep.extra.at("levels");
    const double y_value = extras.back().at("y_value").get<double>();
    const double u_value = extras.back().at("u_value").get<double>();
    const double b_at_t = extras.back().at("b_at_t").get<double>();
    CHECK(u_value == Approx(y_value * std::exp(b_at_t)).margin(1e-8));
    // refinement domination on most coupled paths
    for (std::size_t l = 1; l < extras.size(); ++l)
        CHECK(extras[l].at("refinement_domination").get<double>() >= 0.85);
}

TEST_CASE("regularized and Young integrals of g(U) dB agree in the linear case") {
    auto run_gap = [&](std::size_t n_steps) {
        auto s = solve_case("id", "zero", n_steps, 256, 25);
        const BdsdeSolution bd = doss_sussman_lift(s.sol, s.driver->table(), s.b_path);
        SamplePath u_path(s.grid, 1);
        for (std::size_t k = 0; k <= s.grid.n_steps; ++k) u_path.at(k) = bd.u_at(k, 0);
        const SamplePath rv = rv_backward_integral(u_path, s.b_path, 16);
        double young = 0.0;
        for (std::size_t i = 0; i < s.grid.n_steps; ++i)
            young += u_path.value(i) * (s.b_path.value(i + 1) - s.b_path.value(i));
        return std::abs(rv.value(s.grid.n_steps) - young);
    };
    const double coarse = run_gap(1 << 8);
    const double fine = run_gap(1 << 11);
    INFO("coarse " << coarse << " fine " << fine);
    CHECK(fine < coarse);
}

TEST_CASE("lifted path keeps a measured Hoelder exponent near 1/2 or better") {
    auto exponent = [&](std::size_t n) {
        auto s = solve_case("id", "zero", n, 256, 26);
        const BdsdeSolution bd = doss_sussman_lift(s.sol, s.driver->table(), s.b_path);
        double sup = 0.0;
        for (std::size_t k = 0; k < s.grid.n_steps; ++k)
            sup = std::max(sup, std::abs(bd.u_at(k + 1, 0) - bd.u_at(k, 0)));
        return sup;
    };
    const double sup_coarse = exponent(1 << 8);
    const double sup_fine = exponent(1 << 12);
    const double measured = std::log2(sup_coarse / sup_fine) / 4.0;  // 4 dyadic halvings
    INFO("measured exponent " << measured);
    CHECK(measured > 0.35);
}

TEST_CASE("nonlinear residual: coupled refinement dominates pathwise") {
    const ExperimentConfig cfg = [] {
        ExperimentConfig c;
        c.kind = "bdsde_residual";
        c.seed = 77;
        c.paths = 4096;
        c.eps = {1.0 / 32.0, 1.0 / 64.0};
        c.eps_ratio = 16;
        c.basis_degree = 5;
        c.coefficients["g"] = "sin";
        c.coefficients["f"] = "cos_y_plus_half_z";
        return c;
    }();
    const ConvergenceReport rep = run_experiment(cfg);
    REQUIRE(rep.levels.size() == 2);
    CHECK(rep.levels[1].median < rep.levels[0].median);
    CHECK(rep.extra.at("levels")[1].at("refinement_domination").get<double>() >= 0.9);
}
