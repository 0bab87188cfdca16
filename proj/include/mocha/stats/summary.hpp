#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/stats/wilcoxon.hpp"

namespace mocha {

struct EpisodeResult {
    std::size_t episode = 0;
    std::string variant;
    std::size_t k_shot = 1;
    double accuracy = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; ///< sample deviation (n - 1 denominator); 0 for a single value
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
    MeanStd out;
    out.count = xs.size();
    if (xs.empty()) return out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return out;
}

struct VariantSummary {
    std::string variant;
    std::size_t k_shot = 1;
    MeanStd accuracy;
};

struct PairwiseTest {
    std::size_t k_shot = 1;
    std::string variant_a;
    std::string variant_b;
    std::optional<WilcoxonResult> result; ///< empty when the test could not be run
    std::string error;                    ///< why it could not be run
};

struct EpisodeSummary {
    std::vector<VariantSummary> variants;
    std::vector<PairwiseTest> tests;
};

/// Mean and deviation per (variant, k) and a signed-rank test for every
/// variant pair at each k, paired by episode index. Variants keep their
/// order of first appearance.
inline EpisodeSummary summarize_episodes(std::span<const EpisodeResult> results,
                                         Alternative alt = Alternative::TwoSided) {
    std::vector<std::string> names;
    std::map<std::size_t, std::map<std::string, std::map<std::size_t, double>>> table;
    for (const auto& r : results) {
        if (std::find(names.begin(), names.end(), r.variant) == names.end()) names.push_back(r.variant);
        auto [it, fresh] = table[r.k_shot][r.variant].emplace(r.episode, r.accuracy);
        require(fresh, ErrorKind::InvalidConfig,
                "duplicate result for episode " + std::to_string(r.episode) + " of " + r.variant);
    }

    EpisodeSummary out;
    for (const auto& [k, by_variant] : table) {
        for (const auto& name : names) {
            const auto it = by_variant.find(name);
            if (it == by_variant.end()) continue;
            std::vector<double> acc;
            for (const auto& [_, a] : it->second) acc.push_back(a);
            out.variants.push_back({name, k, mean_std(acc)});
        }
        for (std::size_t i = 0; i < names.size(); ++i)
            for (std::size_t j = i + 1; j < names.size(); ++j) {
                PairwiseTest t{k, names[i], names[j], std::nullopt, {}};
                const auto ia = by_variant.find(names[i]), ib = by_variant.find(names[j]);
                if (ia == by_variant.end() || ib == by_variant.end()) continue;
                std::vector<double> a, b;
                for (const auto& [ep, acc] : ia->second) {
                    const auto m = ib->second.find(ep);
                    if (m == ib->second.end()) continue;
                    a.push_back(acc);
                    b.push_back(m->second);
                }
                try {
                    t.result = wilcoxon_signed_rank(a, b, alt);
                } catch (const Error& e) {
                    t.error = to_string(e.kind());
                }
                out.tests.push_back(std::move(t));
            }
    }
    return out;
}

namespace detail {

inline std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

} // namespace detail

inline constexpr const char* kMissingCell = "—";

inline std::string summary_csv(const EpisodeSummary& s) {
    std::string out = "variant,k_shot,episodes,mean,std\n";
    for (const auto& v : s.variants)
        out += v.variant + "," + std::to_string(v.k_shot) + "," + std::to_string(v.accuracy.count) + "," +
               detail::fmt(v.accuracy.mean, "%.17g") + "," + detail::fmt(v.accuracy.std, "%.17g") + "\n";
    return out;
}

inline std::string pvalue_csv(const EpisodeSummary& s) {
    std::string out = "k_shot,variant_a,variant_b,n,statistic,p_value\n";
    for (const auto& t : s.tests) {
        out += std::to_string(t.k_shot) + "," + t.variant_a + "," + t.variant_b + ",";
        if (t.result)
            out += std::to_string(t.result->n) + "," + detail::fmt(t.result->statistic, "%.17g") + "," +
                   detail::fmt(t.result->p_value, "%.17g") + "\n";
        else
            out += std::string(kMissingCell) + "," + kMissingCell + "," + kMissingCell + "\n";
    }
    return out;
}

/// Human-readable table: accuracy as mean ± std, then the p-value grid.
inline std::string summary_text(const EpisodeSummary& s) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %6s %18s\n", "variant", "k", "accuracy");
    out += line;
    for (const auto& v : s.variants) {
        std::snprintf(line, sizeof line, "%-20s %6zu %9.2f ± %6.2f\n", v.variant.c_str(), v.k_shot, v.accuracy.mean,
                      v.accuracy.std);
        out += line;
    }
    if (!s.tests.empty()) {
        out += "\n";
        std::snprintf(line, sizeof line, "%-6s %-20s %-20s %12s\n", "k", "a", "b", "p-value");
        out += line;
        for (const auto& t : s.tests) {
            const std::string p = t.result ? detail::fmt(t.result->p_value, "%.3g") : std::string(kMissingCell);
            std::snprintf(line, sizeof line, "%-6zu %-20s %-20s %12s\n", t.k_shot, t.variant_a.c_str(),
                          t.variant_b.c_str(), p.c_str());
            out += line;
        }
    }
    return out;
}

} // namespace mocha
