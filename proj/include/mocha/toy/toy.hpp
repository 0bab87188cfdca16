#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/objectives/losses.hpp"

namespace mocha {

struct ToyConfig {
    std::size_t n_points = 10;
    std::size_t reference_dim = 3;
    std::size_t optimized_dim = 2;
    double tau = 0.5;
    double step = 0.05;
    std::size_t iterations = 500;
    std::vector<std::size_t> k_list{1, 3, 5};
    std::uint64_t seed = 0;

    void validate() const {
        require(n_points >= 3, ErrorKind::InvalidConfig, "toy needs at least 3 points");
        require(reference_dim >= 1 && optimized_dim >= 1, ErrorKind::InvalidConfig, "toy dimensions must be >= 1");
        require(step > 0.0 && std::isfinite(step), ErrorKind::InvalidConfig, "toy step size must be positive");
        require_temperature(tau);
        for (auto k : k_list)
            require(k >= 1 && k < n_points, ErrorKind::BadK, "k must lie in [1, n-1], got " + std::to_string(k));
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ToyConfig, n_points, reference_dim, optimized_dim, tau, step,
                                                iterations, k_list, seed)

/// Indices of the k nearest rows to row i (excluding i), ties to the lower index.
inline std::vector<std::size_t> knn_indices(const Tensor& x, std::size_t i, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < x.rows(); ++j)
        if (j != i) d.emplace_back(squared_distance(x.row(i), x.row(j)), j);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> out;
    for (std::size_t m = 0; m < k; ++m) out.push_back(d[m].second);
    std::sort(out.begin(), out.end());
    return out;
}

/// Percentage of k-nearest-neighbour sets shared between two embeddings of the same points.
inline double knn_match_rate(const Tensor& a, const Tensor& b, std::size_t k) {
    require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(), ErrorKind::DimensionMismatch,
            "match rate needs two embeddings of the same point set");
    const std::size_t n = a.rows();
    require(k >= 1 && k + 1 <= n, ErrorKind::BadK, "k must lie in [1, n-1], got " + std::to_string(k));
    std::size_t shared = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto na = knn_indices(a, i, k), nb = knn_indices(b, i, k);
        std::vector<std::size_t> common;
        std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
        shared += common.size();
    }
    return 100.0 * static_cast<double>(shared) / static_cast<double>(n * k);
}

struct ToyRun {
    Tensor reference;                       ///< n x reference_dim
    std::vector<Tensor> trajectory;         ///< iterations+1 snapshots of the n x optimized_dim points
    std::vector<double> loss;               ///< embedding loss at every snapshot
    std::vector<std::vector<double>> match; ///< match[k_index][snapshot]
};

/// Plain gradient descent on embedding_loss(points, reference, tau). Snapshot 0
/// is the initial state; snapshot t follows the t-th update.
inline ToyRun optimize_toy(const ToyConfig& cfg, const Tensor& reference, Tensor points) {
    cfg.validate();
    require(reference.rank() == 2 && points.rank() == 2 && reference.rows() == points.rows(),
            ErrorKind::DimensionMismatch, "reference and optimized points must have the same count");
    ToyRun run;
    run.reference = reference;
    run.match.resize(cfg.k_list.size());

    auto record = [&](const Tensor& p, double loss) {
        run.trajectory.push_back(p);
        run.loss.push_back(loss);
        for (std::size_t m = 0; m < cfg.k_list.size(); ++m)
            run.match[m].push_back(knn_match_rate(p, reference, cfg.k_list[m]));
    };

    for (std::size_t it = 0;; ++it) {
        ad::Tape tape;
        const ad::Var x = tape.leaf(points);
        const ad::Var loss = embedding_loss(x, reference, cfg.tau);
        const double value = loss.value().item();
        if (!std::isfinite(value)) fail(ErrorKind::NonFiniteLoss, "toy loss is not finite at iteration " + std::to_string(it));
        record(points, value);
        if (it == cfg.iterations) break;
        tape.backward(loss);
        const Tensor& g = x.grad();
        std::vector<double> next = points.values();
        for (std::size_t k = 0; k < next.size(); ++k) next[k] -= cfg.step * g[k];
        points = Tensor(points.shape(), std::move(next));
    }
    return run;
}

/// Reference points uniform in the unit cube, start points uniform in the unit square.
inline ToyRun run_toy(const ToyConfig& cfg) {
    cfg.validate();
    Rng ref_rng(derive_seed(cfg.seed, 0x70E1));
    Rng init_rng(derive_seed(cfg.seed, 0x70E2));
    const Tensor reference = Tensor::uniform({cfg.n_points, cfg.reference_dim}, ref_rng);
    Tensor start = Tensor::uniform({cfg.n_points, cfg.optimized_dim}, init_rng);
    return optimize_toy(cfg, reference, std::move(start));
}

} // namespace mocha
