#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/pipeline/prototypes.hpp"

namespace mocha {

inline constexpr std::size_t kEpisodesPerEvaluation = 60;

/// One k-shot trial over a labelled pool. Indices refer to pool rows.
struct Episode {
    std::uint64_t seed = 0;
    std::size_t k_shot = 1;
    std::vector<std::size_t> support;
    std::vector<std::size_t> query;
};

/// Per class: shuffle the class's pool rows with a class-specific stream, take
/// the first k as support and the next `queries_per_class` as queries (0 means
/// all remaining rows). Support and query never overlap.
inline Episode sample_episode(std::span<const int> labels, std::size_t k_shot, std::size_t queries_per_class,
                              std::uint64_t seed) {
    require(k_shot >= 1, ErrorKind::InvalidConfig, "k_shot must be >= 1");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    require(!by_class.empty(), ErrorKind::EmptySupport, "episode pool is empty");

    Episode ep;
    ep.seed = seed;
    ep.k_shot = k_shot;
    for (auto& [cls, rows] : by_class) {
        require(rows.size() > k_shot, ErrorKind::EmptySupport,
                "class " + std::to_string(cls) + " has " + std::to_string(rows.size()) + " samples, need more than " +
                    std::to_string(k_shot));
        Rng rng(derive_seed(seed, 0xE915, static_cast<std::uint64_t>(cls)));
        rng.shuffle(rows.begin(), rows.end());
        ep.support.insert(ep.support.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k_shot));
        const std::size_t available = rows.size() - k_shot;
        const std::size_t q = queries_per_class == 0 ? available : std::min(available, queries_per_class);
        ep.query.insert(ep.query.end(), rows.begin() + static_cast<std::ptrdiff_t>(k_shot),
                        rows.begin() + static_cast<std::ptrdiff_t>(k_shot + q));
    }
    return ep;
}

/// Episodes with seeds 0..count-1.
inline std::vector<Episode> sample_episodes(std::span<const int> labels, std::size_t k_shot,
                                            std::size_t queries_per_class, std::size_t count = kEpisodesPerEvaluation) {
    std::vector<Episode> out;
    for (std::size_t s = 0; s < count; ++s) out.push_back(sample_episode(labels, k_shot, queries_per_class, s));
    return out;
}

/// Query accuracy (percent) of a nearest-class-mean learner built on the
/// episode's support rows of `features`.
inline double episode_accuracy(const Episode& ep, const Tensor& features, std::span<const int> labels) {
    require(features.rank() == 2 && features.rows() == labels.size(), ErrorKind::DimensionMismatch,
            "one feature row per label expected");
    require(!ep.query.empty(), ErrorKind::EmptySupport, "episode has no queries");
    PrototypeStore store;
    for (auto i : ep.support) store.add(labels[i], features.row(i));
    std::size_t correct = 0;
    for (auto i : ep.query)
        if (store.classify(features.row(i)) == labels[i]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

/// Oracle-box evaluation: per-episode accuracy, in episode order. Episodes are
/// spread over `threads` workers; each writes only its own result slots.
inline std::vector<double> evaluate_oracle(std::span<const Episode> episodes, const Tensor& features,
                                           std::span<const int> labels, unsigned threads = 1) {
    require(!episodes.empty(), ErrorKind::InvalidConfig, "evaluation needs at least one episode");
    std::vector<double> acc(episodes.size());
    const unsigned workers = std::clamp<unsigned>(threads, 1u, static_cast<unsigned>(episodes.size()));
    if (workers == 1) {
        for (std::size_t e = 0; e < episodes.size(); ++e) acc[e] = episode_accuracy(episodes[e], features, labels);
        return acc;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t e = w; e < episodes.size(); e += workers)
                        acc[e] = episode_accuracy(episodes[e], features, labels);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
    return acc;
}

} // namespace mocha
