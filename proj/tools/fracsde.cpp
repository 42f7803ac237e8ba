// Command line front end: every subcommand builds an ExperimentConfig (from a
// JSON file, flags, or both; flags win) and hands it to run_experiment.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fracsde/experiment.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out;
    std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
    cmd->add_option("--seed", flags.seed, "master seed");
    cmd->add_option("--threads", flags.threads,
                    "worker threads (0 = FRACSDE_THREADS or hardware)");
    cmd->add_option("--out", flags.out, "output file path");
    cmd->add_option("--format", flags.format, "output format: csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
}

fracsde::ExperimentConfig base_config(const CommonFlags& flags, const std::string& kind) {
    fracsde::ExperimentConfig cfg;
    if (!flags.config_path.empty()) {
        cfg = fracsde::ExperimentConfig::from_file(flags.config_path);
    } else {
        cfg.kind = kind;
    }
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.threads) cfg.threads = *flags.threads;
    if (flags.out) cfg.out = *flags.out;
    if (flags.format) cfg.format = *flags.format;
    return cfg;
}

int finish(const fracsde::ConvergenceReport& rep, bool print_json_extra = false) {
    std::printf("kind=%s hash=%s seed=%llu threads=%u\n", rep.kind.c_str(),
                rep.config_hash.c_str(), static_cast<unsigned long long>(rep.seed),
                rep.threads);
    for (const auto& l : rep.levels)
        std::printf("  eps=%g delta=%g median=%g p90=%g\n", l.eps, l.delta, l.median, l.p90);
    if (rep.slope) std::printf("  slope=%g (lsq residual %g)\n", *rep.slope, rep.slope_residual);
    if (print_json_extra || !rep.extra.empty())
        std::printf("%s\n", rep.extra.dump(2).c_str());
    if (!rep.failures.empty()) {
        std::printf("FAILED checks:\n");
        for (const auto& f : rep.failures) std::printf("  - %s\n", f.c_str());
        return 1;
    }
    return 0;
}

std::vector<double> parse_eps_list(const std::string& text) {
    std::vector<double> eps;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        eps.push_back(std::stod(text.substr(pos, next - pos)));
        pos = next + 1;
    }
    return eps;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for doubly driven backward SDEs "
                 "(Brownian + fractional Brownian, H > 1/2)"};
    app.require_subcommand(1);

    // fbm -------------------------------------------------------------------
    CommonFlags fbm_flags;
    double fbm_hurst = 0.75, fbm_horizon = 1.0;
    std::size_t fbm_grid_n = 1024, fbm_paths = 1;
    std::string fbm_method = "circulant";
    auto* fbm = app.add_subcommand("fbm", "sample fractional Brownian paths (CSV dump)");
    add_common(fbm, fbm_flags);
    fbm->add_option("--hurst", fbm_hurst, "Hurst parameter in (1/2,1)");
    fbm->add_option("--grid-n", fbm_grid_n, "number of grid steps");
    fbm->add_option("--horizon", fbm_horizon, "time horizon T");
    fbm->add_option("--paths", fbm_paths, "number of paths");
    fbm->add_option("--method", fbm_method, "sampler: circulant or cholesky")
        ->check(CLI::IsMember({"circulant", "cholesky"}));

    // bracket ----------------------------------------------------------------
    CommonFlags bracket_flags;
    std::string bracket_eps, bracket_case = "fbm";
    double bracket_hurst = 0.75;
    std::size_t bracket_paths = 100;
    auto* bracket = app.add_subcommand("bracket", "regularized bracket across an eps schedule");
    add_common(bracket, bracket_flags);
    bracket->add_option("--eps-schedule", bracket_eps, "comma separated eps values");
    bracket->add_option("--paths", bracket_paths, "paths per level");
    bracket->add_option("--hurst", bracket_hurst, "Hurst parameter");
    bracket->add_option("--case", bracket_case, "fbm | bm | mixed");

    // ito-check ---------------------------------------------------------------
    CommonFlags ito_flags;
    std::string ito_eps, ito_case = "square-fbm";
    double ito_hurst = 0.75;
    std::size_t ito_paths = 100;
    auto* ito = app.add_subcommand("ito-check", "change-of-variable residuals across eps");
    add_common(ito, ito_flags);
    ito->add_option("--eps-schedule", ito_eps, "comma separated eps values");
    ito->add_option("--paths", ito_paths, "paths per level");
    ito->add_option("--hurst", ito_hurst, "Hurst parameter");
    ito->add_option("--case", ito_case, "square-fbm | square-bm | mixed-xey");

    // doss --------------------------------------------------------------------
    CommonFlags doss_flags;
    std::string doss_g = "sin";
    double doss_y = 1.0, doss_z = 1.0;
    bool doss_jet = false;
    auto* doss = app.add_subcommand("doss", "flow jet query / bound sweep");
    add_common(doss, doss_flags);
    doss->add_option("--g", doss_g, "named diffusion coefficient");
    doss->add_option("--y", doss_y, "initial point");
    doss->add_option("--z", doss_z, "flow parameter");
    doss->add_flag("--jet", doss_jet, "print the flow jet as JSON (default: bound sweep)");

    // bsde / bdsde / pde / convergence -----------------------------------------
    CommonFlags bsde_flags;
    std::size_t bsde_paths = 0, bsde_degree = 0;
    auto* bsde = app.add_subcommand("bsde", "pathwise quadratic-growth BSDE solve");
    add_common(bsde, bsde_flags);
    bsde->add_option("--paths", bsde_paths, "Monte Carlo paths");
    bsde->add_option("--basis-degree", bsde_degree, "regression basis degree");

    CommonFlags bdsde_flags;
    std::string bdsde_eps;
    std::size_t bdsde_paths = 0;
    auto* bdsde = app.add_subcommand("bdsde", "doubly driven equation residual across levels");
    add_common(bdsde, bdsde_flags);
    bdsde->add_option("--eps-schedule", bdsde_eps, "comma separated eps values");
    bdsde->add_option("--paths", bdsde_paths, "Monte Carlo paths");

    CommonFlags pde_flags;
    std::size_t pde_nx = 0, pde_grid_n = 0;
    std::string pde_probes;
    auto* pde = app.add_subcommand("pde", "random-coefficient PDE / driven-field residual");
    add_common(pde, pde_flags);
    pde->add_option("--nx", pde_nx, "spatial intervals (overrides config, all levels)");
    pde->add_option("--grid-n", pde_grid_n, "time steps for a single-level run");
    pde->add_option("--probes", pde_probes, "probe list t:x[,t:x...]");

    CommonFlags conv_flags;
    auto* conv = app.add_subcommand("convergence", "run any experiment config as-is");
    add_common(conv, conv_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (fbm->parsed()) {
            auto cfg = base_config(fbm_flags, "fbm_paths");
            if (fbm->count("--hurst")) cfg.hurst = fbm_hurst;
            if (fbm->count("--grid-n")) cfg.grid_n = fbm_grid_n;
            if (fbm->count("--horizon")) cfg.horizon = fbm_horizon;
            if (fbm->count("--paths")) cfg.paths = fbm_paths;
            if (fbm->count("--method")) cfg.method = fbm_method;
            return finish(fracsde::run_experiment(cfg));
        }
        if (bracket->parsed()) {
            auto cfg = base_config(bracket_flags, "bracket");
            if (!bracket_eps.empty()) cfg.eps = parse_eps_list(bracket_eps);
            if (bracket->count("--paths")) cfg.paths = bracket_paths;
            if (bracket->count("--hurst")) cfg.hurst = bracket_hurst;
            if (bracket->count("--case")) cfg.case_name = bracket_case;
            return finish(fracsde::run_experiment(cfg));
        }
        if (ito->parsed()) {
            auto cfg = base_config(ito_flags, ito_case == "mixed-xey" ? "mixed_ito" : "rv_ito");
            if (!ito_eps.empty()) cfg.eps = parse_eps_list(ito_eps);
            if (ito->count("--paths")) cfg.paths = ito_paths;
            if (ito->count("--hurst")) cfg.hurst = ito_hurst;
            if (ito_case != "mixed-xey") cfg.case_name = ito_case;
            return finish(fracsde::run_experiment(cfg));
        }
        if (doss->parsed()) {
            auto cfg = base_config(doss_flags, doss_jet ? "doss_jet" : "doss_bounds");
            cfg.coefficients["g"] = doss_g;
            cfg.doss.y = doss_y;
            cfg.doss.z = doss_z;
            auto rep = fracsde::run_experiment(cfg);
            if (doss_jet) {
                std::printf("%s\n", rep.extra.dump(2).c_str());
                return rep.passed() ? 0 : 1;
            }
            return finish(rep);
        }
        if (bsde->parsed()) {
            auto cfg = base_config(bsde_flags, "bsde");
            if (bsde_paths) cfg.paths = bsde_paths;
            if (bsde_degree) cfg.basis_degree = bsde_degree;
            return finish(fracsde::run_experiment(cfg));
        }
        if (bdsde->parsed()) {
            auto cfg = base_config(bdsde_flags, "bdsde_residual");
            if (!bdsde_eps.empty()) cfg.eps = parse_eps_list(bdsde_eps);
            if (bdsde_paths) cfg.paths = bdsde_paths;
            return finish(fracsde::run_experiment(cfg));
        }
        if (pde->parsed()) {
            auto cfg = base_config(pde_flags, "pde");
            if (pde_grid_n) {
                cfg.eps = {cfg.horizon / static_cast<double>(pde_grid_n) *
                           static_cast<double>(cfg.eps_ratio)};
            }
            if (pde_nx) cfg.pde.nx.assign(cfg.eps.size(), pde_nx);
            if (!pde_probes.empty()) {
                cfg.pde.probes.clear();
                std::size_t pos = 0;
                const std::string& text = pde_probes;
                while (pos < text.size()) {
                    std::size_t next = text.find(',', pos);
                    if (next == std::string::npos) next = text.size();
                    const std::string pair = text.substr(pos, next - pos);
                    const std::size_t colon = pair.find(':');
                    if (colon == std::string::npos)
                        throw std::invalid_argument("pde: probes must be t:x pairs");
                    cfg.pde.probes.push_back(
                        {std::stod(pair.substr(0, colon)), std::stod(pair.substr(colon + 1))});
                    pos = next + 1;
                }
            }
            return finish(fracsde::run_experiment(cfg));
        }
        if (conv->parsed()) {
            if (conv_flags.config_path.empty())
                throw std::invalid_argument("convergence: --config is required");
            auto cfg = base_config(conv_flags, "");
            return finish(fracsde::run_experiment(cfg));
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
