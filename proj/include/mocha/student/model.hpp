#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/student/backbone.hpp"
#include "mocha/student/region_pool.hpp"
#include "mocha/student/translator.hpp"
#include "mocha/teacher/world.hpp"

namespace mocha {

inline constexpr int kCheckpointVersion = 1;

/// Backbone g_S plus translator t_S.
struct StudentModel {
    Backbone backbone;
    Translator translator;

    StudentModel() = default;
    StudentModel(const BackboneConfig& bcfg, TranslatorConfig tcfg, std::uint64_t seed) : backbone(bcfg, seed) {
        tcfg.input_dim = bcfg.feature_dim();
        translator = Translator(tcfg, seed);
    }

    /// Pooled student descriptors f_A for `boxes` of one rendered scene (n x d_s).
    ad::Var pooled(ad::Tape& tape, const std::vector<ad::Var>& backbone_vars, const Tensor& pixels,
                   std::span<const BBox> boxes) const {
        return ad::region_pool(backbone.forward(tape, backbone_vars, pixels), boxes);
    }

    /// Translated region features f'_A (n x d_t), no gradients.
    Tensor embed(const Tensor& pixels, std::span<const BBox> boxes) const {
        ad::Tape tape;
        const auto bvars = backbone.params().bind(tape, false);
        const auto tvars = translator.params().bind(tape, false);
        return translator.forward(tvars, pooled(tape, bvars, pixels, boxes)).value();
    }

    std::uint64_t checksum() const {
        return backbone.params().checksum() ^ (translator.params().checksum() * 0x9e3779b97f4a7c15ULL);
    }
};

/// Cosine similarity between every translated dense cell of F_A and `target`,
/// as a grid_h x grid_w map. Cells whose translated vector is zero score 0.
inline Tensor dense_similarity_map(const StudentModel& model, const Tensor& pixels, std::span<const double> target) {
    require(target.size() == model.translator.config().output_dim, ErrorKind::DimensionMismatch,
            "similarity target has the wrong length");
    ad::Tape tape;
    const auto levels = model.backbone.forward(tape, model.backbone.params().bind(tape, false), pixels);
    const Tensor translated =
        model.translator.forward(model.translator.params().bind(tape, false), ad::dense_features(levels)).value();
    const std::size_t gh = levels.front().height, gw = levels.front().width;
    Tensor heat({gh, gw});
    const double tn = norm2(target);
    for (std::size_t cell = 0; cell < gh * gw; ++cell) {
        const double cn = norm2(translated.row(cell));
        heat[cell] = (cn == 0.0 || tn == 0.0) ? 0.0 : std::clamp(dot(translated.row(cell), target) / (cn * tn), -1.0, 1.0);
    }
    return heat;
}

inline nlohmann::json checkpoint_to_json(const StudentModel& m) {
    return {{"format", "mocha-student-checkpoint"},
            {"version", kCheckpointVersion},
            {"backbone", {{"config", m.backbone.config()}, {"tensors", m.backbone.params().to_json()}}},
            {"translator", {{"config", m.translator.config()}, {"tensors", m.translator.params().to_json()}}}};
}

inline StudentModel checkpoint_from_json(const nlohmann::json& j) {
    try {
        require(j.at("format").get<std::string>() == "mocha-student-checkpoint", ErrorKind::InvalidConfig,
                "not a student checkpoint");
        require(j.at("version").get<int>() == kCheckpointVersion, ErrorKind::InvalidConfig,
                "unsupported checkpoint version");
        const auto bcfg = j.at("backbone").at("config").get<BackboneConfig>();
        const auto tcfg = j.at("translator").at("config").get<TranslatorConfig>();
        StudentModel m(bcfg, tcfg, 0);
        m.backbone.params().load_json(j.at("backbone").at("tensors"));
        m.translator.params().load_json(j.at("translator").at("tensors"));
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("malformed checkpoint: ") + e.what());
    }
}

} // namespace mocha
