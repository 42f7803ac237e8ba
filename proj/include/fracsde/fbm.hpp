#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>
#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "fracsde/rng.hpp"
#include "fracsde/time_grid.hpp"

namespace fracsde {

/// R_H(t,s) = 1/2 (t^{2H} + s^{2H} - |t-s|^{2H}).
inline double fbm_covariance(double t, double s, HurstParam H) {
    if (t < 0.0 || s < 0.0) throw std::domain_error("fbm_covariance: t,s must be >= 0");
    const double twoH = 2.0 * H.value;
    return 0.5 * (std::pow(t, twoH) + std::pow(s, twoH) - std::pow(std::abs(t - s), twoH));
}

/// C_H = sqrt(H (2H-1) / B(2-2H, H-1/2)): the normalization under which the
/// Volterra representation reproduces R_H, i.e.
/// int_0^{min(t,s)} K_H(t,u) K_H(s,u) du = R_H(t,s).
inline double fbm_kernel_constant(HurstParam H) {
    const double h = H.value;
    return std::sqrt(h * (2.0 * h - 1.0) / boost::math::beta(2.0 - 2.0 * h, h - 0.5));
}

/// Volterra kernel K_H(t,s) = C_H s^{1/2-H} \int_s^t u^{H-1/2} (u-s)^{H-3/2} du.
///
/// The substitution u = s + v^2 turns the integral into
///   2 \int_0^{sqrt(t-s)} (s+v^2)^{H-1/2} v^{2H-2} dv,
/// whose leading v^{2H-2} part against the constant s^{H-1/2} integrates in
/// closed form; the remainder is C^1 at v = 0 and goes to adaptive quadrature.
inline double fbm_kernel(double t, double s, HurstParam H) {
    if (!(s > 0.0) || s > t) throw std::domain_error("fbm_kernel: need 0 < s <= t");
    if (s == t) return 0.0;
    const double h = H.value;
    const double vmax = std::sqrt(t - s);
    const double s_pow = std::pow(s, h - 0.5);
    const double lead = 2.0 * s_pow * std::pow(vmax, 2.0 * h - 1.0) / (2.0 * h - 1.0);
    const auto remainder = [&](double v) {
        return 2.0 * (std::pow(s + v * v, h - 0.5) - s_pow) * std::pow(v, 2.0 * h - 2.0);
    };
    double err = 0.0;
    const double rest = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
        remainder, 0.0, vmax, 12, 1e-10, &err);
    return fbm_kernel_constant(H) * std::pow(s, 0.5 - h) * (lead + rest);
}

/// Autocovariance of fractional Gaussian noise increments on step dt:
/// gamma(k) = dt^{2H}/2 (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}).
inline double fgn_autocovariance(std::size_t lag, HurstParam H, double dt) {
    const double twoH = 2.0 * H.value;
    const double k = static_cast<double>(lag);
    return 0.5 * std::pow(dt, twoH) *
           (std::pow(k + 1.0, twoH) - 2.0 * std::pow(k, twoH) +
            std::pow(std::abs(k - 1.0), twoH));
}

enum class FbmMethod { cholesky, circulant };

namespace detail {

// fftw planning is not thread safe; execution of a private plan is.
inline std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

/// One forward complex DFT of fixed size (unnormalized, FFTW sign convention).
class Dft {
public:
    explicit Dft(std::size_t n) : n_(n), buf_(n) {
        std::lock_guard lock(fftw_plan_mutex());
        plan_ = fftw_plan_dft_1d(static_cast<int>(n),
                                 reinterpret_cast<fftw_complex*>(buf_.data()),
                                 reinterpret_cast<fftw_complex*>(buf_.data()),
                                 FFTW_FORWARD, FFTW_ESTIMATE);
        if (!plan_) throw std::runtime_error("fftw plan creation failed");
    }
    ~Dft() {
        std::lock_guard lock(fftw_plan_mutex());
        fftw_destroy_plan(plan_);
    }
    Dft(const Dft&) = delete;
    Dft& operator=(const Dft&) = delete;

    void forward_inplace(std::vector<std::complex<double>>& data) const {
        fftw_execute_dft(plan_, reinterpret_cast<fftw_complex*>(data.data()),
                         reinterpret_cast<fftw_complex*>(data.data()));
    }

    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    mutable std::vector<std::complex<double>> buf_;
    fftw_plan plan_;
};

}  // namespace detail

/// Exact-in-law fBm path generator on a uniform grid.
///
/// circulant: Davies-Harte embedding of the fGn covariance, O(n log n) per
/// path. cholesky: dense factor of the fGn covariance, kept as an exactness
/// oracle and limited to n <= 2048. Both draw from the "fbm" seed stream; a
/// fixed (seed, path_index, method, grid, H) reproduces the path bit for bit.
class FbmSampler {
public:
    FbmSampler(TimeGrid grid, HurstParam H, FbmMethod method = FbmMethod::circulant)
        : grid_(grid), hurst_(H), method_(method) {
        const std::size_t n = grid_.n_steps;
        if (method_ == FbmMethod::circulant) {
            const std::size_t m = 2 * n;
            std::vector<std::complex<double>> c(m);
            for (std::size_t k = 0; k <= n; ++k) c[k] = fgn_autocovariance(k, hurst_, grid_.dt());
            for (std::size_t k = 1; k < n; ++k) c[m - k] = c[k];
            dft_ = std::make_unique<detail::Dft>(m);
            dft_->forward_inplace(c);
            lambda_.resize(m);
            double lmax = 0.0;
            for (std::size_t j = 0; j < m; ++j) lmax = std::max(lmax, c[j].real());
            for (std::size_t j = 0; j < m; ++j) {
                const double lj = c[j].real();
                if (lj < -1e-8 * lmax)
                    throw std::runtime_error(
                        "circulant embedding produced a significantly negative eigenvalue");
                lambda_[j] = std::sqrt(std::max(lj, 0.0) / static_cast<double>(m));
            }
        } else {
            if (n > 2048)
                throw std::invalid_argument("cholesky fBm sampler is limited to n_steps <= 2048");
            Eigen::MatrixXd gamma(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    gamma(i, j) = fgn_autocovariance(i >= j ? i - j : j - i, hurst_, grid_.dt());
            Eigen::LLT<Eigen::MatrixXd> llt(gamma);
            if (llt.info() != Eigen::Success)
                throw std::runtime_error("fGn covariance is not numerically SPD");
            chol_ = llt.matrixL();
        }
    }

    const TimeGrid& grid() const { return grid_; }

    SamplePath path(std::uint64_t seed, std::uint64_t path_index = 0) const {
        const std::size_t n = grid_.n_steps;
        std::vector<double> fgn(n);
        auto gen = make_stream(seed, SeedStream::fbm, path_index);
        if (method_ == FbmMethod::circulant) {
            const std::size_t m = 2 * n;
            std::vector<std::complex<double>> v(m);
            v[0] = gen.next_normal();
            v[n] = gen.next_normal();
            constexpr double inv_sqrt2 = 0.7071067811865475244;
            for (std::size_t j = 1; j < n; ++j) {
                const double a = gen.next_normal();
                const double b = gen.next_normal();
                v[j] = std::complex<double>(a * inv_sqrt2, b * inv_sqrt2);
                v[m - j] = std::conj(v[j]);
            }
            for (std::size_t j = 0; j < m; ++j) v[j] *= lambda_[j];
            dft_->forward_inplace(v);
            for (std::size_t k = 0; k < n; ++k) fgn[k] = v[k].real();
        } else {
            Eigen::VectorXd z(n);
            for (std::size_t k = 0; k < n; ++k) z(k) = gen.next_normal();
            Eigen::VectorXd x = chol_.triangularView<Eigen::Lower>() * z;
            for (std::size_t k = 0; k < n; ++k) fgn[k] = x(k);
        }
        SamplePath out(grid_, 1, "fbm");
        double acc = 0.0;
        out.at(0) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += fgn[k];
            out.at(k + 1) = acc;
        }
        return out;
    }

private:
    TimeGrid grid_;
    HurstParam hurst_;
    FbmMethod method_;
    std::vector<double> lambda_;          // circulant: sqrt(eigenvalue / m)
    Eigen::MatrixXd chol_;                // cholesky: lower factor of fGn covariance
    std::unique_ptr<detail::Dft> dft_;
};

inline SamplePath sample_fbm(TimeGrid grid, HurstParam H, std::uint64_t seed,
                             FbmMethod method = FbmMethod::circulant,
                             std::uint64_t path_index = 0) {
    return FbmSampler(grid, H, method).path(seed, path_index);
}

/// d-dimensional Brownian path: i.i.d. N(0, dt) increments per coordinate,
/// drawn from the "bm" stream (independent of the fbm stream by construction).
inline SamplePath sample_bm(TimeGrid grid, std::size_t dim, std::uint64_t seed,
                            std::uint64_t path_index = 0) {
    if (dim == 0) throw std::invalid_argument("sample_bm: dim must be >= 1");
    SamplePath out(grid, dim, "bm");
    auto gen = make_stream(seed, SeedStream::bm, path_index);
    const double sdt = std::sqrt(grid.dt());
    for (std::size_t k = 0; k < grid.n_steps; ++k)
        for (std::size_t j = 0; j < dim; ++j)
            out.at(k + 1, j) = out.at(k, j) + sdt * gen.next_normal();
    return out;
}

}  // namespace fracsde
