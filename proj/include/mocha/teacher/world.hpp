#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/rng.hpp"

namespace mocha {

enum class Split { Distill, Personal };

inline std::string to_string(Split s) { return s == Split::Distill ? "distill" : "personal"; }

inline Split split_from_string(const std::string& s) {
    if (s == "distill") return Split::Distill;
    if (s == "personal") return Split::Personal;
    fail(ErrorKind::InvalidConfig, "unknown split '" + s + "'");
}

/// Normalized [x1, y1, x2, y2] box; x runs along width, y along height.
struct BBox {
    double x1 = 0.0, y1 = 0.0, x2 = 1.0, y2 = 1.0;

    bool valid() const {
        return 0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0;
    }
    bool contains_cell(std::size_t row, std::size_t col, std::size_t grid) const {
        const double cy = (static_cast<double>(row) + 0.5) / static_cast<double>(grid);
        const double cx = (static_cast<double>(col) + 0.5) / static_cast<double>(grid);
        return x1 <= cx && cx < x2 && y1 <= cy && cy < y2;
    }
    bool operator==(const BBox&) const = default;
};

struct Region {
    BBox box;
    int class_id = 0;
};

struct SceneSample {
    std::uint64_t image_id = 0;
    std::vector<Region> regions;
    Split split = Split::Distill;
};

/// Deterministic key for region `index` of image `image_id`.
inline std::uint64_t region_key(std::uint64_t image_id, std::size_t index) { return image_id * 64 + index; }

/// Everything that defines the synthetic world: class tree, counts, noise
/// scales and the seed. Teacher outputs and rendered scenes are pure
/// functions of this document.
struct WorldSpec {
    std::uint64_t seed = 7;

    // class tree: personal class i is a child of coarse class i / personal_per_parent
    int coarse_classes = 10;
    int personal_classes = 8;
    int personal_per_parent = 2;

    // scene counts
    int scenes_per_coarse = 20;
    int scenes_per_personal = 20;
    int max_regions = 3;
    int grid = 16;
    int min_box_cells = 4;
    int max_box_cells = 8;

    // teacher streams
    int d_z = 64;
    int d_h = 192;
    double anchor_margin = 0.8;
    double teacher_noise = 0.05;     ///< expected norm of per-region teacher noise
    double teacher_instance_offset = 0.35;
    int attribute_dim = 6;
    double teacher_attribute_scale = 0.2;

    // rendered appearance (student input)
    int signal_channels = 8;
    int nuisance_channels = 8;
    double appearance_scale = 1.0;
    double appearance_instance_offset = 0.9;
    double attribute_pixel_scale = 0.5;
    double nuisance_scale = 1.5;
    double pixel_noise = 0.3;

    int pixel_channels() const { return signal_channels + attribute_dim + nuisance_channels; }
    int personal_class_id(int i) const { return 100 + i; }
    int parent_of_personal(int i) const { return i / personal_per_parent; }

    void validate() const {
        require(coarse_classes >= 2, ErrorKind::InvalidConfig, "need at least two coarse classes");
        require(personal_classes >= 1 && personal_per_parent >= 1, ErrorKind::InvalidConfig, "bad personal class tree");
        require((personal_classes - 1) / personal_per_parent < coarse_classes, ErrorKind::InvalidConfig,
                "personal classes need more coarse parents");
        require(coarse_classes < 100, ErrorKind::InvalidConfig, "coarse class ids must stay below 100");
        require(scenes_per_coarse >= 1 && scenes_per_personal >= 1, ErrorKind::InvalidConfig, "scene counts must be positive");
        require(max_regions >= 1 && max_regions <= 64, ErrorKind::InvalidConfig, "max_regions must lie in [1, 64]");
        require(grid >= 4 && grid % 4 == 0, ErrorKind::InvalidConfig, "grid must be a positive multiple of 4");
        require(1 <= min_box_cells && min_box_cells <= max_box_cells && max_box_cells <= grid, ErrorKind::InvalidConfig,
                "box size range must lie within the grid");
        require(d_z >= 1 && d_h >= 1 && attribute_dim >= 0, ErrorKind::InvalidConfig, "bad teacher dimensions");
        require(anchor_margin > 0.0 && anchor_margin < 1.4, ErrorKind::InvalidConfig,
                "anchor margin must lie in (0, 1.4) for unit-sphere anchors");
        require(teacher_noise >= 0.0 && teacher_instance_offset >= 0.0 && teacher_attribute_scale >= 0.0,
                ErrorKind::InvalidConfig, "teacher scales must be non-negative");
        require(signal_channels >= 1 && nuisance_channels >= 0, ErrorKind::InvalidConfig, "bad channel counts");
        require(appearance_scale > 0.0 && appearance_instance_offset >= 0.0 && attribute_pixel_scale >= 0.0 &&
                    nuisance_scale >= 0.0 && pixel_noise >= 0.0,
                ErrorKind::InvalidConfig, "appearance scales must be non-negative");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WorldSpec, seed, coarse_classes, personal_classes, personal_per_parent,
                                                scenes_per_coarse, scenes_per_personal, max_regions, grid,
                                                min_box_cells, max_box_cells, d_z, d_h, anchor_margin, teacher_noise,
                                                teacher_instance_offset, attribute_dim, teacher_attribute_scale,
                                                signal_channels, nuisance_channels, appearance_scale,
                                                appearance_instance_offset, attribute_pixel_scale, nuisance_scale,
                                                pixel_noise)

namespace detail {

inline BBox random_box(Rng& rng, const WorldSpec& spec) {
    const auto span = static_cast<std::uint64_t>(spec.max_box_cells - spec.min_box_cells + 1);
    const int w = spec.min_box_cells + static_cast<int>(rng.below(span));
    const int h = spec.min_box_cells + static_cast<int>(rng.below(span));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.grid - w + 1)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.grid - h + 1)));
    const double g = spec.grid;
    return BBox{x / g, y / g, (x + w) / g, (y + h) / g};
}

inline bool overlaps(const BBox& a, const BBox& b) {
    return a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2;
}

inline SceneSample make_scene(Rng& rng, const WorldSpec& spec, std::uint64_t image_id, Split split, int primary,
                              int extra_objects) {
    SceneSample scene{image_id, {}, split};
    scene.regions.push_back({random_box(rng, spec), primary});
    for (int e = 0; e < extra_objects; ++e) {
        const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.coarse_classes)));
        for (int attempt = 0; attempt < 20; ++attempt) {
            const BBox box = random_box(rng, spec);
            const bool clear = std::none_of(scene.regions.begin(), scene.regions.end(),
                                            [&](const Region& r) { return overlaps(r.box, box); });
            if (clear) {
                scene.regions.push_back({box, cls});
                break;
            }
        }
    }
    return scene;
}

} // namespace detail

struct Dataset {
    std::vector<SceneSample> distill;
    std::vector<SceneSample> personal;
};

/// Distillation scenes hold coarse classes only (a primary object plus
/// up to max_regions - 1 non-overlapping extras); personal scenes hold one
/// personal-class object each.
inline Dataset generate_dataset(const WorldSpec& spec) {
    spec.validate();
    Dataset ds;
    Rng rng(derive_seed(spec.seed, 0x5CE4E));
    std::uint64_t next_id = 0;
    for (int c = 0; c < spec.coarse_classes; ++c)
        for (int s = 0; s < spec.scenes_per_coarse; ++s) {
            const int extras = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_regions)));
            ds.distill.push_back(detail::make_scene(rng, spec, next_id++, Split::Distill, c, extras));
        }
    for (int p = 0; p < spec.personal_classes; ++p)
        for (int s = 0; s < spec.scenes_per_personal; ++s)
            ds.personal.push_back(detail::make_scene(rng, spec, next_id++, Split::Personal, spec.personal_class_id(p), 0));
    return ds;
}

inline nlohmann::json to_json(const SceneSample& s) {
    nlohmann::json regions = nlohmann::json::array();
    for (const Region& r : s.regions)
        regions.push_back({{"bbox", {r.box.x1, r.box.y1, r.box.x2, r.box.y2}}, {"class_id", r.class_id}});
    return {{"image_id", s.image_id}, {"split", to_string(s.split)}, {"regions", regions}};
}

inline SceneSample scene_from_json(const nlohmann::json& j) {
    SceneSample s;
    s.image_id = j.at("image_id").get<std::uint64_t>();
    s.split = split_from_string(j.at("split").get<std::string>());
    for (const auto& r : j.at("regions")) {
        const auto b = r.at("bbox").get<std::array<double, 4>>();
        Region region{BBox{b[0], b[1], b[2], b[3]}, r.at("class_id").get<int>()};
        require(region.box.valid(), ErrorKind::InvalidConfig, "invalid bbox in scene " + std::to_string(s.image_id));
        s.regions.push_back(region);
    }
    require(!s.regions.empty(), ErrorKind::InvalidConfig, "scene without regions");
    return s;
}

inline nlohmann::json to_json(const Dataset& ds) {
    nlohmann::json d = nlohmann::json::array(), p = nlohmann::json::array();
    for (const auto& s : ds.distill) d.push_back(to_json(s));
    for (const auto& s : ds.personal) p.push_back(to_json(s));
    return {{"distill", d}, {"personal", p}};
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
    try {
        Dataset ds;
        for (const auto& s : j.at("distill")) ds.distill.push_back(scene_from_json(s));
        for (const auto& s : j.at("personal")) ds.personal.push_back(scene_from_json(s));
        return ds;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("malformed dataset document: ") + e.what());
    }
}

} // namespace mocha
