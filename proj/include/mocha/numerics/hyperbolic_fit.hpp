#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mocha/error.hpp"

namespace mocha {

/// sigma(x) = a / (x + 1)^b + c, fitted to per-channel deviations indexed from x = 0.
struct HyperbolicFit {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double residual = 0.0; ///< root-mean-square error over the fitted samples
    int iterations = 0;

    double operator()(double x) const { return a / std::pow(x + 1.0, b) + c; }
};

struct HyperbolicFitOptions {
    int max_iterations = 200;
    double step_tolerance = 1e-10;
    double initial_damping = 1e-3;
};

namespace detail {

inline double hyperbolic_cost(std::span<const double> y, const std::array<double, 3>& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = p[0] / std::pow(static_cast<double>(i) + 1.0, p[1]) + p[2] - y[i];
        s += r * r;
    }
    return s;
}

} // namespace detail

/// Least-squares fit of the hyperbolic deviation law by damped Gauss-Newton
/// (Levenberg-Marquardt scaling). Starts from a = sigmas[0], b = 0.5, c = 0.
inline HyperbolicFit fit_hyperbolic(std::span<const double> sigmas, const HyperbolicFitOptions& opts = {}) {
    const std::size_t n = sigmas.size();
    require(n >= 4, ErrorKind::DimensionMismatch, "hyperbolic fit needs at least 4 samples");
    for (double s : sigmas)
        require(std::isfinite(s) && s > 0.0, ErrorKind::DegenerateData, "hyperbolic fit needs positive samples");
    const auto [lo, hi] = std::minmax_element(sigmas.begin(), sigmas.end());
    if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi)))
        fail(ErrorKind::FlatInput, "constant samples leave the decay exponent undetermined");

    std::array<double, 3> p{sigmas[0], 0.5, 0.0};
    double cost = detail::hyperbolic_cost(sigmas, p);
    double damping = opts.initial_damping;

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
        Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            const double x1 = static_cast<double>(i) + 1.0;
            const double pw = std::pow(x1, -p[1]);
            const double r = p[0] * pw + p[2] - sigmas[i];
            const Eigen::Vector3d j(pw, -p[0] * std::log(x1) * pw, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }

        // Raise the damping until the step lowers the cost.
        bool accepted = false;
        Eigen::Vector3d step;
        for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
            Eigen::Matrix3d lhs = jtj;
            for (int k = 0; k < 3; ++k) lhs(k, k) += damping * std::max(jtj(k, k), 1e-12);
            step = lhs.ldlt().solve(-jtr);
            const std::array<double, 3> trial{p[0] + step[0], p[1] + step[1], p[2] + step[2]};
            const double trial_cost = detail::hyperbolic_cost(sigmas, trial);
            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                p = trial;
                cost = trial_cost;
                damping = std::max(damping / 3.0, 1e-15);
                accepted = true;
            } else {
                damping *= 4.0;
            }
        }

        const double scale = 1.0 + std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (!accepted || step.norm() <= opts.step_tolerance * scale) {
            HyperbolicFit fit{p[0], p[1], p[2], std::sqrt(cost / static_cast<double>(n)), iter};
            if (!(fit.a > 0.0 && fit.b > 0.0))
                fail(ErrorKind::NoConvergence, "fit left the decaying region (a > 0, b > 0)");
            for (std::size_t i = 0; i < n; ++i)
                if (fit(static_cast<double>(i)) <= 0.0)
                    fail(ErrorKind::NoConvergence, "fitted deviation is not positive at channel " + std::to_string(i));
            return fit;
        }
    }
    fail(ErrorKind::NoConvergence, "no convergence within " + std::to_string(opts.max_iterations) + " iterations");
}

} // namespace mocha
