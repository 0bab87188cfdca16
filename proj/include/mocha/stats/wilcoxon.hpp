#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mocha/error.hpp"

namespace mocha {

enum class Alternative { TwoSided, Greater, Less };

inline Alternative alternative_from_string(const std::string& s) {
    if (s == "two-sided") return Alternative::TwoSided;
    if (s == "greater") return Alternative::Greater;
    if (s == "less") return Alternative::Less;
    fail(ErrorKind::InvalidConfig, "alternative must be two-sided, greater or less, got \"" + s + "\"");
}

struct WilcoxonResult {
    double statistic = 0.0; ///< min(W+, W-) for two-sided, W+ otherwise
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = 1.0;
    std::size_t n = 0; ///< nonzero differences used
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactLimit = 20;
inline constexpr std::size_t kWilcoxonMinPairs = 5;

/// Average ranks (1-based) of `values`; entries closer than `tie_tol` share a rank.
inline std::vector<double> average_ranks(std::span<const double> values, double tie_tol = 1e-9) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i + 1;
        while (j < order.size() && values[order[j]] - values[order[i]] <= tie_tol) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t m = i; m < j; ++m) ranks[order[m]] = r;
        i = j;
    }
    return ranks;
}

namespace detail {

/// Counts of 2*W+ over all 2^n sign assignments of the given (doubled) ranks.
inline std::vector<double> doubled_rank_sum_counts(std::span<const long> doubled) {
    long total = 0;
    for (long r : doubled) total += r;
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : doubled) {
        for (long s = reach; s >= 0; --s)
            if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
        reach += r;
    }
    return counts;
}

inline double standard_normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

} // namespace detail

/// Paired signed-rank test on a - b. Zero differences are dropped and tied
/// magnitudes share their average rank. Up to 20 nonzero pairs the exact
/// null distribution is used; above that, the normal approximation with tie
/// correction and a 0.5 continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           Alternative alt = Alternative::TwoSided) {
    require(a.size() == b.size(), ErrorKind::DimensionMismatch, "paired samples must have equal length");
    constexpr double zero_tol = 1e-9;
    std::vector<double> diff, mag;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (std::abs(d) <= zero_tol) continue;
        diff.push_back(d);
        mag.push_back(std::abs(d));
    }
    if (diff.empty()) fail(ErrorKind::AllZeroDifferences, "all paired differences are zero");
    const std::size_t n = diff.size();
    require(n >= kWilcoxonMinPairs, ErrorKind::TooFewPairs,
            "signed-rank test needs at least 5 nonzero differences, got " + std::to_string(n));

    const auto ranks = average_ranks(mag);
    WilcoxonResult res;
    res.n = n;
    for (std::size_t i = 0; i < n; ++i) (diff[i] > 0 ? res.w_plus : res.w_minus) += ranks[i];
    res.statistic = alt == Alternative::TwoSided ? std::min(res.w_plus, res.w_minus) : res.w_plus;

    if (n <= kWilcoxonExactLimit) {
        res.exact = true;
        std::vector<long> doubled;
        for (double r : ranks) doubled.push_back(std::lround(2.0 * r));
        const auto counts = detail::doubled_rank_sum_counts(doubled);
        const double all = std::ldexp(1.0, static_cast<int>(n));
        auto cdf = [&](long upto) {
            double c = 0.0;
            for (long s = 0; s <= upto && s < static_cast<long>(counts.size()); ++s) c += counts[static_cast<std::size_t>(s)];
            return c / all;
        };
        const long total = static_cast<long>(counts.size()) - 1;
        const long obs = std::lround(2.0 * res.w_plus);
        switch (alt) {
        case Alternative::TwoSided:
            res.p_value = std::min(1.0, 2.0 * cdf(std::min(obs, total - obs)));
            break;
        case Alternative::Greater:
            res.p_value = 1.0 - cdf(obs - 1);
            break;
        case Alternative::Less:
            res.p_value = cdf(obs);
            break;
        }
        return res;
    }

    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    {
        auto sorted = ranks;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i);
            var -= (t * t * t - t) / 48.0;
            i = j;
        }
    }
    const double sd = std::sqrt(var);
    switch (alt) {
    case Alternative::TwoSided:
        res.p_value = std::min(1.0, 2.0 * detail::standard_normal_sf((std::abs(res.w_plus - mean) - 0.5) / sd));
        break;
    case Alternative::Greater:
        res.p_value = detail::standard_normal_sf((res.w_plus - mean - 0.5) / sd);
        break;
    case Alternative::Less:
        res.p_value = 1.0 - detail::standard_normal_sf((res.w_plus - mean + 0.5) / sd);
        break;
    }
    return res;
}

} // namespace mocha
