#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/log.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/teacher/world.hpp"

namespace mocha {

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double n = 0.0;
    while (n < 1e-12) {
        for (double& x : v) x = rng.normal();
        n = norm2(v);
    }
    for (double& x : v) x /= n;
    return v;
}

/// Unit vectors with pairwise distance >= margin, by rejection.
inline std::vector<std::vector<double>> separated_anchors(Rng& rng, std::size_t count, std::size_t dim, double margin) {
    std::vector<std::vector<double>> anchors;
    for (int attempt = 0; anchors.size() < count; ++attempt) {
        require(attempt < 100000, ErrorKind::InvalidConfig, "cannot place anchors with the requested margin");
        auto cand = random_unit(rng, dim);
        bool ok = true;
        for (const auto& a : anchors) ok = ok && std::sqrt(squared_distance(a, cand)) >= margin;
        if (ok) anchors.push_back(std::move(cand));
    }
    return anchors;
}

} // namespace detail

/// Per-region latent attributes shared by the rendered appearance and the
/// teacher's visual stream.
inline std::vector<double> region_attributes(const WorldSpec& spec, std::uint64_t key) {
    Rng rng(derive_seed(spec.seed, 0xA77B, key));
    std::vector<double> v(static_cast<std::size_t>(spec.attribute_dim));
    for (double& x : v) x = rng.normal();
    return v;
}

struct TeacherOutput {
    std::vector<double> z_v; ///< visual class-token proxy, length d_z
    std::vector<double> h;   ///< fused vision-language proxy, length d_h
};

/// Stand-in for the frozen vision-language teacher. Coarse classes get
/// margin-separated anchors on the unit sphere of each stream; personal
/// classes sit at their coarse parent's anchor plus a fixed instance offset.
class TeacherEmulator {
public:
    explicit TeacherEmulator(const WorldSpec& spec) : spec_(spec) {
        spec.validate();
        Rng rng(derive_seed(spec.seed, 0x7EAC));
        const auto dz = static_cast<std::size_t>(spec.d_z), dh = static_cast<std::size_t>(spec.d_h);
        const auto coarse = static_cast<std::size_t>(spec.coarse_classes);
        auto vis = detail::separated_anchors(rng, coarse, dz, spec.anchor_margin);
        auto txt = detail::separated_anchors(rng, coarse, dh, spec.anchor_margin);
        for (std::size_t c = 0; c < coarse; ++c) anchors_[static_cast<int>(c)] = {vis[c], txt[c]};
        for (int p = 0; p < spec.personal_classes; ++p) {
            const Anchor& parent = anchors_.at(spec.parent_of_personal(p));
            Anchor child = parent;
            const auto dv = detail::random_unit(rng, dz);
            const auto dt = detail::random_unit(rng, dh);
            for (std::size_t k = 0; k < dz; ++k) child.visual[k] += spec.teacher_instance_offset * dv[k];
            for (std::size_t k = 0; k < dh; ++k) child.text[k] += spec.teacher_instance_offset * dt[k];
            anchors_[spec.personal_class_id(p)] = std::move(child);
        }
        const auto m = static_cast<std::size_t>(spec.attribute_dim);
        attribute_mix_ = Tensor({dz, m});
        if (m > 0) attribute_mix_ = Tensor::randn({dz, m}, rng, 1.0 / std::sqrt(static_cast<double>(dz)));
    }

    const WorldSpec& spec() const { return spec_; }
    bool has_class(int class_id) const { return anchors_.contains(class_id); }

    const std::vector<double>& text_anchor(int class_id) const { return anchor(class_id).text; }
    const std::vector<double>& visual_anchor(int class_id) const { return anchor(class_id).visual; }

    /// Deterministic teacher outputs for one region of a given class.
    TeacherOutput emulate_region(int class_id, std::uint64_t key) const {
        const Anchor& a = anchor(class_id);
        const auto dz = a.visual.size(), dh = a.text.size();
        Rng rng(derive_seed(spec_.seed, 0x9015E, static_cast<std::uint64_t>(class_id), key));
        TeacherOutput out{a.visual, a.text};
        const double sz = spec_.teacher_noise / std::sqrt(static_cast<double>(dz));
        const double sh = spec_.teacher_noise / std::sqrt(static_cast<double>(dh));
        for (double& v : out.z_v) v += sz * rng.normal();
        for (double& v : out.h) v += sh * rng.normal();
        const auto attrs = region_attributes(spec_, key);
        for (std::size_t k = 0; k < dz; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < attrs.size(); ++j) s += attribute_mix_(k, j) * attrs[j];
            out.z_v[k] += spec_.teacher_attribute_scale * s;
        }
        return out;
    }

private:
    struct Anchor {
        std::vector<double> visual;
        std::vector<double> text;
    };

    const Anchor& anchor(int class_id) const {
        const auto it = anchors_.find(class_id);
        if (it == anchors_.end()) fail(ErrorKind::UnknownClass, "class " + std::to_string(class_id) + " is not registered");
        return it->second;
    }

    WorldSpec spec_;
    std::map<int, Anchor> anchors_;
    Tensor attribute_mix_;
};

/// u = concat(gamma * z_v, h) with gamma = |h|_2. A zero h gives gamma = 0.
inline std::vector<double> fuse(std::span<const double> z_v, std::span<const double> h) {
    const double gamma = norm2(h);
    if (gamma == 0.0) log_event("teacher.zero_text_embedding", {{"d_z", z_v.size()}, {"d_h", h.size()}});
    std::vector<double> u;
    u.reserve(z_v.size() + h.size());
    for (double v : z_v) u.push_back(gamma * v);
    u.insert(u.end(), h.begin(), h.end());
    return u;
}

} // namespace mocha
