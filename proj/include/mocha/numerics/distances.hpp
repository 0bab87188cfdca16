#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/tensor.hpp"

namespace mocha {

/// Euclidean distance between every pair of rows of an n x d matrix.
inline Tensor pairwise_distances(const Tensor& x) {
    require(x.rank() == 2 && x.rows() >= 2, ErrorKind::DimensionMismatch,
            "pairwise_distances needs an n x d matrix with n >= 2, got " + shape_string(x.shape()));
    const std::size_t n = x.rows();
    Tensor d({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = std::sqrt(squared_distance(x.row(i), x.row(j)));
    return d;
}

inline void require_temperature(double tau) {
    require(tau > 0.0 && std::isfinite(tau), ErrorKind::BadTemperature,
            "temperature must be positive, got " + std::to_string(tau));
}

namespace detail {

/// log softmax of -d/tau over the off-diagonal entries of each row. The
/// diagonal logit is -inf, so it contributes nothing to the normaliser; the
/// returned diagonal is 0 (callers never read it).
inline Tensor masked_log_softmax_values(const Tensor& d, double tau) {
    require(d.rank() == 2 && d.rows() == d.cols() && d.rows() >= 2, ErrorKind::DimensionMismatch,
            "masked softmax needs a square matrix with n >= 2, got " + shape_string(d.shape()));
    require_temperature(tau);
    const std::size_t n = d.rows();
    Tensor out({n, n});
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            logits[j] = i == j ? -std::numeric_limits<double>::infinity() : -d(i, j) / tau;
            mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(logits[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) out(i, j) = i == j ? 0.0 : logits[j] - lse;
    }
    return out;
}

} // namespace detail

/// Row-wise softmax of -d/tau with the diagonal excluded; output diagonal is 0.
inline Tensor masked_softmax(const Tensor& d, double tau) {
    Tensor p = detail::masked_log_softmax_values(d, tau);
    const std::size_t n = p.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p(i, j) = i == j ? 0.0 : std::exp(p(i, j));
    return p;
}

namespace ad {

/// Differentiable pairwise distances; the gradient through a zero distance is 0.
inline Var pairwise_distances(const Var& x) {
    Tensor d = mocha::pairwise_distances(x.value());
    Tensor dist = d;
    return x.tape().record(std::move(d), {x}, [x, dist = std::move(dist)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = x.value();
        detail::accumulate(t, x, [&](Tensor& gx) {
            const std::size_t n = xv.rows(), dim = xv.cols();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    if (i == j || dist(i, j) == 0.0) continue;
                    const double k = (g(i, j) + g(j, i)) / dist(i, j);
                    for (std::size_t c = 0; c < dim; ++c) gx(i, c) += k * (xv(i, c) - xv(j, c));
                }
        });
    }, "pairwise_distances");
}

/// Differentiable log of masked_softmax (diagonal entries are 0 and carry no gradient).
inline Var masked_log_softmax(const Var& d, double tau) {
    Tensor logp = mocha::detail::masked_log_softmax_values(d.value(), tau);
    Tensor saved = logp;
    return d.tape().record(std::move(logp), {d}, [d, tau, saved = std::move(saved)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, d, [&](Tensor& gd) {
            const std::size_t n = saved.rows();
            for (std::size_t i = 0; i < n; ++i) {
                double gsum = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i) gsum += g(i, j);
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double dlogit = g(i, j) - std::exp(saved(i, j)) * gsum;
                    gd(i, j) += -dlogit / tau;
                }
            }
        });
    }, "masked_log_softmax");
}

} // namespace ad

} // namespace mocha
