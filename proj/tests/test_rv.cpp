#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fracsde/fbm.hpp"
#include "fracsde/parallel.hpp"
#include "fracsde/rv_calculus.hpp"

using namespace fracsde;
using Catch::Approx;

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

SamplePath constant_path(const TimeGrid& grid, double c) {
    SamplePath p(grid, 1);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) p.at(k) = c;
    return p;
}

}  // namespace

TEST_CASE("eps schedule validation") {
    CHECK_NOTHROW(EpsSchedule({16, 8, 4}));
    CHECK_THROWS_AS(EpsSchedule({8, 8}), std::invalid_argument);
    CHECK_THROWS_AS(EpsSchedule({8, 16}), std::invalid_argument);
    CHECK_THROWS_AS(EpsSchedule({4, 0}), std::invalid_argument);
    const TimeGrid grid(1.0, 64);
    const EpsSchedule sched = EpsSchedule::from_eps(grid, {0.25, 0.125});
    CHECK(sched.steps == std::vector<std::size_t>{16, 8});
    CHECK_THROWS_AS(EpsSchedule::from_eps(grid, {0.013}), std::invalid_argument);
}

TEST_CASE("integral against a constant integrator vanishes") {
    const TimeGrid grid(1.0, 128);
    const SamplePath x = sample_fbm(grid, HurstParam(0.75), 4);
    const SamplePath y = constant_path(grid, 3.7);
    const SamplePath integral = rv_backward_integral(x, y, 8);
    const SamplePath bracket = rv_bracket(x, y, 8);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) {
        CHECK(integral.value(k) == 0.0);
        CHECK(bracket.value(k) == 0.0);
    }
}

TEST_CASE("unit integrand telescopes to the windowed mean") {
    const TimeGrid grid(1.0, 256);
    const std::size_t m = 16;
    const SamplePath y = sample_fbm(grid, HurstParam(0.75), 5);
    const SamplePath one = constant_path(grid, 1.0);
    const SamplePath integral = rv_backward_integral(one, y, m);
    for (std::size_t k : {m, std::size_t(100), std::size_t(256)}) {
        double mean = 0.0;  // left-endpoint mean of y over [t_k - eps, t_k)
        for (std::size_t i = k - m; i < k; ++i) mean += y.value(i);
        mean /= static_cast<double>(m);
        CHECK(integral.value(k) == Approx(mean - y.value(0)).margin(1e-13));
    }
}

TEST_CASE("bilinearity and symmetry are exact") {
    const TimeGrid grid(1.0, 128);
    const SamplePath x = sample_fbm(grid, HurstParam(0.8), 6);
    const SamplePath y = sample_bm(grid, 1, 6);
    const SamplePath w = sample_fbm(grid, HurstParam(0.8), 6, FbmMethod::circulant, 1);
    const std::size_t m = 4;

    SamplePath ax(grid, 1);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) ax.at(k) = 2.0 * x.value(k) - 0.5 * w.value(k);
    const SamplePath lhs = rv_backward_integral(ax, y, m);
    const SamplePath ix = rv_backward_integral(x, y, m);
    const SamplePath iw = rv_backward_integral(w, y, m);
    for (std::size_t k = 0; k <= grid.n_steps; ++k)
        CHECK(lhs.value(k) == Approx(2.0 * ix.value(k) - 0.5 * iw.value(k)).margin(1e-12));

    const SamplePath bxy = rv_bracket(x, y, m);
    const SamplePath byx = rv_bracket(y, x, m);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) CHECK(bxy.value(k) == byx.value(k));
}

TEST_CASE("discrete polarization identity binds I, the window mean and C") {
    // X = Y: X_i (X_i - X_{i-m}) = (X_i^2 - X_{i-m}^2)/2 + (X_i - X_{i-m})^2/2,
    // so I(eps,t,X,dX) - C/2 telescopes to windowed means of X^2/2 exactly.
    const TimeGrid grid(1.0, 512);
    const std::size_t m = 8;
    const SamplePath x = sample_fbm(grid, HurstParam(0.75), 7);
    const SamplePath integral = rv_backward_integral(x, x, m);
    const SamplePath bracket = rv_bracket(x, x, m);
    for (std::size_t k : {std::size_t(64), std::size_t(511)}) {
        double mean_sq = 0.0;
        for (std::size_t i = (k >= m ? k - m : 0); i < k; ++i)
            mean_sq += x.value(i) * x.value(i);
        mean_sq /= static_cast<double>(m);
        const double expected = 0.5 * mean_sq + 0.5 * bracket.value(k);
        CHECK(integral.value(k) == Approx(expected).margin(1e-12));
    }
}

TEST_CASE("brownian bracket recovers t, fbm bracket vanishes") {
    const std::size_t n_paths = 60;
    {
        const TimeGrid grid(1.0, 1 << 12);
        std::vector<double> err(n_paths);
        parallel_for(n_paths, 0, [&](std::size_t p) {
            const SamplePath w = sample_bm(grid, 1, 17, p);
            const SamplePath c = rv_bracket(w, w, 16);  // eps = 2^-8
            err[p] = std::abs(c.value(grid.n_steps) - 1.0);
        });
        CHECK(median(err) < 0.12);
    }
    {
        std::vector<double> sup_coarse(n_paths), sup_fine(n_paths);
        const TimeGrid coarse(1.0, 1 << 9), fine(1.0, 1 << 13);
        parallel_for(n_paths, 0, [&](std::size_t p) {
            const SamplePath bc = FbmSampler(coarse, HurstParam(0.75)).path(23, p);
            const SamplePath bf = FbmSampler(fine, HurstParam(0.75)).path(29, p);
            sup_coarse[p] = rv_bracket(bc, bc, 32).value(coarse.n_steps);   // eps = 2^-4
            sup_fine[p] = rv_bracket(bf, bf, 32).value(fine.n_steps);       // eps = 2^-8
        });
        const double ratio = median(sup_fine) / median(sup_coarse);
        // eps fell by 2^4 and 2H-1 = 1/2, so the bracket should drop ~4x
        CHECK(ratio < 0.45);
        CHECK(ratio > 0.1);
    }
}

TEST_CASE("mixed bracket of brownian against fbm vanishes with eps") {
    const std::size_t n_paths = 48;
    std::vector<double> sup_coarse(n_paths), sup_fine(n_paths);
    const TimeGrid coarse(1.0, 1 << 9), fine(1.0, 1 << 13);
    parallel_for(n_paths, 0, [&](std::size_t p) {
        auto stat = [&](const TimeGrid& grid, std::uint64_t seed) {
            const SamplePath w = sample_bm(grid, 1, seed, p);
            const SamplePath b = sample_fbm(grid, HurstParam(0.75), seed, FbmMethod::circulant, p);
            const SamplePath c = rv_bracket(w, b, 32);
            double sup = 0.0;
            for (std::size_t k = 0; k <= grid.n_steps; ++k)
                sup = std::max(sup, std::abs(c.value(k)));
            return sup;
        };
        sup_coarse[p] = stat(coarse, 41);
        sup_fine[p] = stat(fine, 43);
    });
    CHECK(median(sup_fine) < 0.6 * median(sup_coarse));
}

TEST_CASE("backward integral of fbm against itself approaches B^2/2") {
    const std::size_t n_paths = 64;
    auto level_median = [&](std::size_t n, std::uint64_t seed) {
        const TimeGrid grid(1.0, n);
        std::vector<double> err(n_paths);
        parallel_for(n_paths, 0, [&](std::size_t p) {
            const SamplePath b = FbmSampler(grid, HurstParam(0.75)).path(seed, p);
            const SamplePath integral = rv_backward_integral(b, b, 16);
            const double bt = b.value(grid.n_steps);
            err[p] = std::abs(integral.value(grid.n_steps) - 0.5 * bt * bt);
        });
        return median(err);
    };
    const double coarse = level_median(1 << 8, 51);   // eps = 2^-4
    const double fine = level_median(1 << 12, 53);    // eps = 2^-8
    CHECK(fine < coarse);
    CHECK(fine < 0.06);
}

TEST_CASE("young riemann-stieltjes sums coincide for very regular paths") {
    // both paths H = 0.9: alpha + beta > 1, so the backward integral and the
    // left-point Young sum converge to each other as the grid refines
    auto gap = [&](std::size_t n) {
        const TimeGrid grid(1.0, n);
        const SamplePath x = sample_fbm(grid, HurstParam(0.9), 71, FbmMethod::circulant, 0);
        const SamplePath y = sample_fbm(grid, HurstParam(0.9), 71, FbmMethod::circulant, 1);
        const SamplePath rv = rv_backward_integral(x, y, 4);
        double young = 0.0;
        for (std::size_t i = 0; i < n; ++i) young += x.value(i) * (y.value(i + 1) - y.value(i));
        return std::abs(rv.value(n) - young);
    };
    const double coarse = gap(1 << 8);
    const double fine = gap(1 << 13);
    CHECK(fine < coarse);
}

TEST_CASE("one-dimensional change-of-variable residuals") {
    const TimeGrid grid(1.0, 1 << 12);
    const ScalarField1 linear{[](double v) { return 2.0 * v + 1.0; },
                              [](double) { return 2.0; }, [](double) { return 0.0; }};
    const ScalarField1 half_square{[](double v) { return 0.5 * v * v; },
                                   [](double v) { return v; }, [](double) { return 1.0; }};
    const SamplePath b = sample_fbm(grid, HurstParam(0.75), 81);
    const SamplePath w = sample_bm(grid, 1, 81);

    // linear f: the residual is the windowed-mean defect of the regularized
    // integral, which shrinks with eps and vanishes in the limit
    const double lin_coarse = ito_residual_1d(linear, b, 256);
    const double lin_fine = ito_residual_1d(linear, b, 4);
    CHECK(lin_fine < lin_coarse);
    CHECK(lin_fine < 0.05);

    // x^2/2 on a Brownian path: without the bracket term the defect is ~t/2
    const SamplePath integral = rv_backward_integral(w, w, 16);
    const double wt = w.value(grid.n_steps);
    const double no_bracket =
        std::abs(0.5 * wt * wt - integral.value(grid.n_steps));
    const double with_bracket = ito_residual_1d(half_square, w, 16);
    CHECK(no_bracket > 0.3);
    CHECK(with_bracket < 0.45 * no_bracket);
    CHECK(ito_residual_1d(half_square, w, 4) < with_bracket);  // shrinks with eps

    // same f on the fBm path: the bracket contribution is already negligible
    CHECK(ito_residual_1d(half_square, b, 16) < 0.1);
}

TEST_CASE("scalar field probe consistency") {
    const ScalarField2 field{
        [](double x, double y) { return x * std::exp(y); },
        [](double, double y) { return std::exp(y); },
        [](double x, double y) { return x * std::exp(y); },
        [](double, double) { return 0.0; },
        [](double, double y) { return std::exp(y); },
        [](double x, double y) { return x * std::exp(y); }};
    CHECK(field.probe_consistency() < 1e-5);
}

TEST_CASE("mixed change-of-variable residual: degenerate and generic cases") {
    const TimeGrid grid(1.0, 1 << 10);
    const SamplePath w = sample_bm(grid, 1, 91);
    const SamplePath b = sample_fbm(grid, HurstParam(0.75), 91);
    SamplePath zero(grid, 1), one(grid, 1);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) one.at(k) = 1.0;

    // F(x,y) = x reduces both sides to the alpha decomposition identically
    const ScalarField2 coord_x{
        [](double x, double) { return x; },   [](double, double) { return 1.0; },
        [](double, double) { return 0.0; },   [](double, double) { return 0.0; },
        [](double, double) { return 0.0; },   [](double, double) { return 0.0; }};
    CHECK(mixed_ito_residual(coord_x, 0.3, zero, one, w, b, 16) < 1e-12);

    // F(x,y) = y: residual is the windowed-mean defect of B, small with eps
    const ScalarField2 coord_y{
        [](double, double y) { return y; },  [](double, double) { return 0.0; },
        [](double, double) { return 1.0; },  [](double, double) { return 0.0; },
        [](double, double) { return 0.0; },  [](double, double) { return 0.0; }};
    CHECK(mixed_ito_residual(coord_y, 0.0, zero, one, w, b, 8) < 0.05);

    // F(x,y) = x e^y against a refinement oracle run
    const ScalarField2 xey{
        [](double x, double y) { return x * std::exp(y); },
        [](double, double y) { return std::exp(y); },
        [](double x, double y) { return x * std::exp(y); },
        [](double, double) { return 0.0; },
        [](double, double y) { return std::exp(y); },
        [](double x, double y) { return x * std::exp(y); }};
    std::vector<double> res(2);
    const std::size_t n_paths = 24;
    std::vector<double> coarse(n_paths), fine(n_paths);
    parallel_for(n_paths, 0, [&](std::size_t p) {
        auto run = [&](std::size_t n, std::size_t m) {
            const TimeGrid g(1.0, n);
            SamplePath z(g, 1), o(g, 1);
            for (std::size_t k = 0; k <= g.n_steps; ++k) o.at(k) = 1.0;
            const SamplePath wp = sample_bm(g, 1, 93, p);
            const SamplePath bp = sample_fbm(g, HurstParam(0.75), 93, FbmMethod::circulant, p);
            return mixed_ito_residual(xey, 1.0, z, o, wp, bp, m);
        };
        coarse[p] = run(1 << 8, 16);
        fine[p] = run(1 << 12, 16);
    });
    CHECK(median(fine) < median(coarse));
}
