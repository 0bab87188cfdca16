#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/numerics/rng.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/teacher/emulator.hpp"
#include "mocha/teacher/world.hpp"

namespace mocha {

/// Renders a scene into a (grid*grid) x channels pixel matrix, row-major over
/// cells. Channels are [class signal | region attributes | nuisance]; object
/// cells carry their class appearance, the region's attributes and a
/// per-region nuisance draw; background cells carry scene-level nuisance only.
class SceneRenderer {
public:
    explicit SceneRenderer(const WorldSpec& spec) : spec_(spec) {
        spec.validate();
        Rng rng(derive_seed(spec.seed, 0xA99E));
        const auto s = static_cast<std::size_t>(spec.signal_channels);
        for (int c = 0; c < spec.coarse_classes; ++c) {
            std::vector<double> a(s);
            for (double& v : a) v = spec.appearance_scale * rng.normal();
            appearance_[c] = std::move(a);
        }
        for (int p = 0; p < spec.personal_classes; ++p) {
            std::vector<double> a = appearance_.at(spec.parent_of_personal(p));
            const auto offset = detail::random_unit(rng, s);
            for (std::size_t k = 0; k < s; ++k) a[k] += spec.appearance_instance_offset * offset[k];
            appearance_[spec.personal_class_id(p)] = std::move(a);
        }
    }

    const WorldSpec& spec() const { return spec_; }
    std::size_t grid() const { return static_cast<std::size_t>(spec_.grid); }
    std::size_t channels() const { return static_cast<std::size_t>(spec_.pixel_channels()); }

    const std::vector<double>& appearance(int class_id) const {
        const auto it = appearance_.find(class_id);
        if (it == appearance_.end()) fail(ErrorKind::UnknownClass, "no appearance for class " + std::to_string(class_id));
        return it->second;
    }

    Tensor render(const SceneSample& scene) const {
        const std::size_t g = grid(), ch = channels();
        const auto s = static_cast<std::size_t>(spec_.signal_channels);
        const auto m = static_cast<std::size_t>(spec_.attribute_dim);
        const auto nz = static_cast<std::size_t>(spec_.nuisance_channels);
        Rng rng(derive_seed(spec_.seed, 0x9E4D, scene.image_id));
        Tensor px({g * g, ch});

        std::vector<double> background(nz);
        for (double& v : background) v = spec_.nuisance_scale * rng.normal();
        for (std::size_t cell = 0; cell < g * g; ++cell)
            for (std::size_t k = 0; k < nz; ++k) px(cell, s + m + k) = background[k];

        for (std::size_t r = 0; r < scene.regions.size(); ++r) {
            const Region& region = scene.regions[r];
            const auto& a = appearance(region.class_id);
            const auto attrs = region_attributes(spec_, region_key(scene.image_id, r));
            std::vector<double> nuisance(nz);
            for (double& v : nuisance) v = spec_.nuisance_scale * rng.normal();
            for (std::size_t row = 0; row < g; ++row)
                for (std::size_t col = 0; col < g; ++col) {
                    if (!region.box.contains_cell(row, col, g)) continue;
                    const std::size_t cell = row * g + col;
                    for (std::size_t k = 0; k < s; ++k) px(cell, k) = a[k];
                    for (std::size_t k = 0; k < m; ++k) px(cell, s + k) = spec_.attribute_pixel_scale * attrs[k];
                    for (std::size_t k = 0; k < nz; ++k) px(cell, s + m + k) = nuisance[k];
                }
        }
        for (double& v : px.data()) v += spec_.pixel_noise * rng.normal();
        return px;
    }

private:
    WorldSpec spec_;
    std::map<int, std::vector<double>> appearance_;
};

} // namespace mocha
