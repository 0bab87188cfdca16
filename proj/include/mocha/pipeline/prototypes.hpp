#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/student/model.hpp"
#include "mocha/student/render.hpp"
#include "mocha/teacher/world.hpp"

namespace mocha {

/// Nearest-class-mean classifier. Support features are only ever appended;
/// each prototype is recomputed as the plain mean of its support set.
class PrototypeStore {
public:
    void add(int class_id, std::span<const double> feature) {
        auto& e = entries_[class_id];
        if (!e.support.empty())
            require(feature.size() == e.mean.size(), ErrorKind::DimensionMismatch, "support feature length mismatch");
        if (!entries_.empty() && dim_ != 0)
            require(feature.size() == dim_, ErrorKind::DimensionMismatch, "support feature length mismatch");
        dim_ = feature.size();
        e.support.emplace_back(feature.begin(), feature.end());
        e.mean.assign(dim_, 0.0);
        for (const auto& s : e.support)
            for (std::size_t k = 0; k < dim_; ++k) e.mean[k] += s[k];
        for (double& v : e.mean) v /= static_cast<double>(e.support.size());
    }

    bool empty() const noexcept { return entries_.empty(); }
    std::size_t class_count() const noexcept { return entries_.size(); }
    std::size_t dim() const noexcept { return dim_; }

    std::vector<int> classes() const {
        std::vector<int> out;
        for (const auto& [c, _] : entries_) out.push_back(c);
        return out;
    }

    const std::vector<double>& prototype(int class_id) const { return entry(class_id).mean; }
    std::size_t support_count(int class_id) const { return entry(class_id).support.size(); }

    /// Nearest prototype by Euclidean distance; ties go to the lowest class id.
    int classify(std::span<const double> feature) const {
        require(!entries_.empty(), ErrorKind::EmptyStore, "prototype store is empty");
        require(feature.size() == dim_, ErrorKind::DimensionMismatch, "query feature length mismatch");
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [c, e] : entries_) {
            const double d = squared_distance(feature, e.mean);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        return best;
    }

private:
    struct Entry {
        std::vector<std::vector<double>> support;
        std::vector<double> mean;
    };

    const Entry& entry(int class_id) const {
        const auto it = entries_.find(class_id);
        if (it == entries_.end()) fail(ErrorKind::UnknownClass, "no prototype for class " + std::to_string(class_id));
        return it->second;
    }

    std::map<int, Entry> entries_;
    std::size_t dim_ = 0;
};

namespace detail {

inline std::vector<BBox> boxes_of(const SceneSample& s) {
    std::vector<BBox> out;
    for (const auto& r : s.regions) out.push_back(r.box);
    return out;
}

} // namespace detail

/// Few-shot training with a frozen student: every support region is pooled,
/// translated and appended to the store under its label.
inline PrototypeStore fsl_train(const StudentModel& model, const SceneRenderer& renderer,
                                std::span<const SceneSample> support) {
    PrototypeStore store;
    for (const auto& scene : support) {
        if (scene.regions.empty()) continue;
        const Tensor f = model.embed(renderer.render(scene), detail::boxes_of(scene));
        for (std::size_t r = 0; r < scene.regions.size(); ++r) store.add(scene.regions[r].class_id, f.row(r));
    }
    require(!store.empty(), ErrorKind::EmptySupport, "support set has no regions");
    return store;
}

/// Relabels the given boxes of one scene with personal classes; boxes are unchanged.
inline std::vector<int> fsl_infer(const PrototypeStore& store, const StudentModel& model, const SceneRenderer& renderer,
                                  const SceneSample& scene, std::span<const BBox> boxes) {
    require(!store.empty(), ErrorKind::EmptyStore, "prototype store is empty");
    if (boxes.empty()) return {};
    const Tensor f = model.embed(renderer.render(scene), boxes);
    std::vector<int> out;
    for (std::size_t r = 0; r < boxes.size(); ++r) out.push_back(store.classify(f.row(r)));
    return out;
}

} // namespace mocha
