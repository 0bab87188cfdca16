#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/log.hpp"
#include "mocha/numerics/autodiff.hpp"
#include "mocha/objectives/losses.hpp"
#include "mocha/pipeline/adam.hpp"
#include "mocha/student/model.hpp"
#include "mocha/student/render.hpp"
#include "mocha/teacher/supervision.hpp"

namespace mocha {

/// Where the relational loss gathers its region set.
enum class EmbeddingScope { Batch, Image };

inline void to_json(nlohmann::json& j, EmbeddingScope s) { j = s == EmbeddingScope::Batch ? "batch" : "image"; }

inline void from_json(const nlohmann::json& j, EmbeddingScope& s) {
    const auto name = j.get<std::string>();
    if (name == "batch")
        s = EmbeddingScope::Batch;
    else if (name == "image")
        s = EmbeddingScope::Image;
    else
        fail(ErrorKind::InvalidConfig, "embedding_scope must be \"batch\" or \"image\", got \"" + name + "\"");
}

struct DistillConfig {
    int epochs = 30;
    int batch_size = 8;
    AdamConfig optimizer;
    LossWeights weights;
    bool freeze_backbone = false;
    bool freeze_translator = false;
    EmbeddingScope embedding_scope = EmbeddingScope::Batch;
    std::uint64_t seed = 0;

    void validate() const {
        require(epochs >= 1 && batch_size >= 1, ErrorKind::InvalidConfig, "epochs and batch size must be >= 1");
        optimizer.validate();
        weights.validate();
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DistillConfig, epochs, batch_size, optimizer, weights, freeze_backbone,
                                                freeze_translator, embedding_scope, seed)

struct LossTraceRow {
    int epoch = 0;
    int batch = 0;
    double l_det = 0.0;
    double l_dist = 0.0;
    double l_emb = 0.0;
    double total = 0.0;
};

/// Pluggable detection loss; the default contributes a constant zero.
using DetectionLoss = std::function<ad::Var(ad::Tape&, const SceneSample&, const std::vector<ad::LevelVar>&)>;

inline DetectionLoss zero_detection_loss() {
    return [](ad::Tape& tape, const SceneSample&, const std::vector<ad::LevelVar>&) {
        return tape.constant(Tensor::scalar(0.0));
    };
}

namespace detail {

inline Tensor target_rows(const SupervisionSet& sup, const SceneSample& scene) {
    const std::size_t n = scene.regions.size();
    const std::size_t dt = sup.projector.output_dim();
    Tensor out({n, dt});
    for (std::size_t r = 0; r < n; ++r) {
        const auto& t = sup.at(scene.image_id, r).u_prime;
        require(t.size() == dt, ErrorKind::DimensionMismatch, "target length mismatch");
        std::copy(t.begin(), t.end(), out.row(r).begin());
    }
    return out;
}

} // namespace detail

/// Joint distillation of backbone and translator against the u' targets.
///
/// Per batch: every image contributes L_det plus its per-region distillation
/// loss averaged over its n boxes; the relational loss is computed over the
/// batch's pooled region set (or per image, see EmbeddingScope); one Adam
/// step updates both parts. Scenes are reshuffled each epoch from the run
/// seed and the final partial batch is kept.
inline std::vector<LossTraceRow> run_distillation(const DistillConfig& cfg, std::span<const SceneSample> scenes,
                                                  const SceneRenderer& renderer, const SupervisionSet& sup,
                                                  StudentModel& model,
                                                  const DetectionLoss& det_loss = zero_detection_loss()) {
    cfg.validate();
    require(!scenes.empty(), ErrorKind::DegenerateData, "no distillation scenes");
    require(sup.projector.output_dim() == model.translator.config().output_dim, ErrorKind::DimensionMismatch,
            "translator output does not match the target dimension");

    std::vector<Tensor> pixels, targets;
    pixels.reserve(scenes.size());
    for (const auto& s : scenes) {
        pixels.push_back(renderer.render(s));
        targets.push_back(detail::target_rows(sup, s));
    }

    Adam backbone_opt(cfg.optimizer), translator_opt(cfg.optimizer);
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<LossTraceRow> trace;
    const auto k = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_total = 0.0;
        int batch = 0;
        for (std::size_t start = 0; start < order.size(); start += k, ++batch) {
            const std::size_t end = std::min(order.size(), start + k);
            ad::Tape tape;
            const auto bvars = model.backbone.params().bind(tape, !cfg.freeze_backbone);
            const auto tvars = model.translator.params().bind(tape, !cfg.freeze_translator);

            std::vector<ad::Var> pooled, det_terms;
            std::vector<std::size_t> counts;
            for (std::size_t i = start; i < end; ++i) {
                const SceneSample& scene = scenes[order[i]];
                std::vector<BBox> boxes;
                for (const auto& r : scene.regions) boxes.push_back(r.box);
                const auto levels = model.backbone.forward(tape, bvars, pixels[order[i]]);
                det_terms.push_back(det_loss(tape, scene, levels));
                pooled.push_back(ad::region_pool(levels, boxes));
                counts.push_back(boxes.size());
            }
            const ad::Var translated = model.translator.forward(tvars, ad::concat_rows(pooled));

            ad::Var l_det = det_terms.front();
            for (std::size_t i = 1; i < det_terms.size(); ++i) l_det = ad::add(l_det, det_terms[i]);

            std::vector<ad::Var> dist_terms, emb_terms;
            std::vector<Tensor> batch_targets;
            std::size_t offset = 0;
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t n = counts[i - start];
                const ad::Var f = ad::slice_rows(translated, offset, n);
                dist_terms.push_back(distill_loss(f, tape.constant(targets[order[i]])));
                if (cfg.embedding_scope == EmbeddingScope::Image && n >= 2 && cfg.weights.lambda_emb > 0.0)
                    emb_terms.push_back(embedding_loss(f, targets[order[i]], cfg.weights.tau));
                batch_targets.push_back(targets[order[i]]);
                offset += n;
            }
            ad::Var l_dist = dist_terms.front();
            for (std::size_t i = 1; i < dist_terms.size(); ++i) l_dist = ad::add(l_dist, dist_terms[i]);

            ad::Var l_emb = tape.constant(Tensor::scalar(0.0));
            if (cfg.weights.lambda_emb > 0.0) {
                if (cfg.embedding_scope == EmbeddingScope::Batch && translated.rows() >= 2) {
                    std::vector<double> rows;
                    for (const auto& t : batch_targets) rows.insert(rows.end(), t.data().begin(), t.data().end());
                    l_emb = embedding_loss(translated, Tensor({translated.rows(), translated.cols()}, std::move(rows)),
                                           cfg.weights.tau);
                } else {
                    for (const auto& e : emb_terms) l_emb = ad::add(l_emb, e);
                }
            }

            const ad::Var total = total_loss(l_det, l_dist, l_emb, cfg.weights);
            LossTraceRow row{epoch, batch, l_det.value().item(), l_dist.value().item(), l_emb.value().item(),
                             total.value().item()};
            if (!std::isfinite(row.total))
                fail(ErrorKind::NonFiniteLoss,
                     "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + " loss is not finite");
            trace.push_back(row);
            epoch_total += row.total;

            try {
                tape.backward(total);
            } catch (const Error& e) {
                fail(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) +
                                                   ": " + e.what());
            }
            auto grads_of = [](const std::vector<ad::Var>& vars) {
                std::vector<Tensor> g;
                for (const auto& v : vars) g.push_back(v.grad());
                return g;
            };
            if (!cfg.freeze_backbone) backbone_opt.step(model.backbone.params(), grads_of(bvars));
            if (!cfg.freeze_translator) translator_opt.step(model.translator.params(), grads_of(tvars));
        }
        log_event("distill.epoch", {{"epoch", epoch}, {"batches", batch}, {"mean_total", epoch_total / batch}});
    }
    return trace;
}

} // namespace mocha
