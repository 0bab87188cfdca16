#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocha/cli/config.hpp"
#include "mocha/error.hpp"
#include "mocha/log.hpp"
#include "mocha/numerics/pca.hpp"
#include "mocha/pipeline/distill.hpp"
#include "mocha/pipeline/episodes.hpp"
#include "mocha/pipeline/prototypes.hpp"
#include "mocha/stats/summary.hpp"
#include "mocha/student/model.hpp"
#include "mocha/student/render.hpp"
#include "mocha/teacher/emulator.hpp"
#include "mocha/teacher/supervision.hpp"
#include "mocha/teacher/world.hpp"
#include "mocha/toy/toy.hpp"

namespace mocha::cli {

// ---- configs ----------------------------------------------------------------

struct GenDataConfig {
    WorldSpec world;
    std::string dataset = "dataset.json";
    std::string world_out = "world.json";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenDataConfig, world, dataset, world_out)

struct PcaFitConfig {
    std::string dataset = "dataset.json";
    std::string world = "world.json";
    std::size_t d_t = 16;
    SigmaMode sigma_mode = SigmaMode::Empirical;
    std::string projector = "pca.json";
    std::string cache = "supervision.jsonl";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PcaFitConfig, dataset, world, d_t, sigma_mode, projector, cache)

struct PcaSweepConfig {
    std::string cache = "supervision.jsonl";
    std::vector<std::size_t> d_t_list{8, 16, 32, 64, 128};
    std::vector<std::string> modes{"normalized", "unnormalized"};
    std::vector<std::size_t> k_shots{1, 5};
    std::size_t episodes = kEpisodesPerEvaluation;
    std::size_t queries_per_class = 10;
    SigmaMode sigma_mode = SigmaMode::Empirical;
    std::uint64_t seed = 0;
    std::string output = "pca_sweep.csv";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PcaSweepConfig, cache, d_t_list, modes, k_shots, episodes,
                                                queries_per_class, sigma_mode, seed, output)

/// Backbone/translator sizes; input and output widths follow from the world and the cache.
struct StudentShape {
    std::vector<std::size_t> level_channels{16, 32, 64};
    std::size_t tokens = 8;
    std::size_t heads = 4;
    std::size_t head_dim = 8;
    std::size_t hidden = 128;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StudentShape, level_channels, tokens, heads, head_dim, hidden)

struct DistillCmdConfig {
    std::string dataset = "dataset.json";
    std::string world = "world.json";
    std::string cache = "supervision.jsonl";
    std::string projector = "pca.json";
    StudentShape student;
    DistillConfig distill;
    std::string checkpoint = "distilled.ckpt.json";
    std::string initial_checkpoint = "baseline.ckpt.json";
    std::string loss_trace = "distilled.loss.csv";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DistillCmdConfig, dataset, world, cache, projector, student, distill,
                                                checkpoint, initial_checkpoint, loss_trace)

struct VariantRef {
    std::string name;
    std::string checkpoint;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VariantRef, name, checkpoint)

struct EvalConfig {
    std::string dataset = "dataset.json";
    std::string world = "world.json";
    std::vector<VariantRef> variants{{"baseline", "baseline.ckpt.json"}, {"distilled", "distilled.ckpt.json"}};
    std::vector<std::size_t> k_shots{1, 5};
    std::size_t episodes = kEpisodesPerEvaluation;
    std::size_t queries_per_class = 10;
    std::uint64_t seed = 0;
    std::string output = "episodes.csv";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, dataset, world, variants, k_shots, episodes,
                                                queries_per_class, seed, output)

struct StatsConfig {
    std::string episodes = "episodes.csv";
    std::string alternative = "two-sided";
    std::string summary = "stats.summary.csv";
    std::string pvalues = "stats.pvalues.csv";
    std::string report = "stats.txt";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StatsConfig, episodes, alternative, summary, pvalues, report)

struct ToyCmdConfig {
    ToyConfig toy;
    std::string trajectory = "toy.trajectory.csv";
    std::string match_rate = "toy.match.csv";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ToyCmdConfig, toy, trajectory, match_rate)

// ---- helpers ----------------------------------------------------------------

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline Dataset load_dataset(const RunContext& ctx, const std::string& rel) {
    return dataset_from_json(ctx.read_json(rel));
}

inline WorldSpec load_world(const RunContext& ctx, const std::string& rel) {
    auto spec = parse_strict<WorldSpec>(ctx.read_json(rel), rel);
    spec.validate();
    return spec;
}

inline std::vector<SceneSample> all_scenes(const Dataset& ds) {
    std::vector<SceneSample> out = ds.distill;
    out.insert(out.end(), ds.personal.begin(), ds.personal.end());
    return out;
}

/// Translated features of every personal-split region, one row each, plus labels.
inline Tensor personal_features(const StudentModel& model, const SceneRenderer& renderer,
                                std::span<const SceneSample> scenes, std::vector<int>& labels) {
    std::vector<double> rows;
    labels.clear();
    const std::size_t dt = model.translator.config().output_dim;
    for (const auto& s : scenes) {
        const Tensor f = model.embed(renderer.render(s), detail::boxes_of(s));
        rows.insert(rows.end(), f.data().begin(), f.data().end());
        for (const auto& r : s.regions) labels.push_back(r.class_id);
    }
    return Tensor({labels.size(), dt}, std::move(rows));
}

inline std::vector<EpisodeResult> parse_episode_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line == "episode,variant,k_shot,accuracy", ErrorKind::InvalidConfig,
            "episode CSV must start with the header episode,variant,k_shot,accuracy");
    std::vector<EpisodeResult> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        require(cells.size() == 4, ErrorKind::InvalidConfig, "episode CSV line " + std::to_string(lineno) + " needs 4 cells");
        try {
            out.push_back({std::stoull(cells[0]), cells[1], std::stoull(cells[2]), std::stod(cells[3])});
        } catch (const std::exception&) {
            fail(ErrorKind::InvalidConfig, "episode CSV line " + std::to_string(lineno) + " is malformed");
        }
    }
    return out;
}

// ---- subcommands --------------------------------------------------------------

inline void cmd_gen_data(RunContext& ctx) {
    auto cfg = parse_strict<GenDataConfig>(ctx.config_document(), "gen-data config");
    if (ctx.options().seed) cfg.world.seed = *ctx.options().seed;
    cfg.world.validate();
    ctx.write_resolved_config(cfg);
    const Dataset ds = generate_dataset(cfg.world);
    ctx.event("gen-data.generated", {{"distill_scenes", ds.distill.size()}, {"personal_scenes", ds.personal.size()}});
    ctx.write_json(cfg.dataset, to_json(ds));
    ctx.write_json(cfg.world_out, nlohmann::json(cfg.world));
}

inline void cmd_pca_fit(RunContext& ctx) {
    const auto cfg = parse_strict<PcaFitConfig>(ctx.config_document(), "pca-fit config");
    if (ctx.options().seed) ctx.event("seed.unused", {{"reason", "pca-fit is deterministic given its inputs"}});
    ctx.write_resolved_config(cfg);
    const WorldSpec world = load_world(ctx, cfg.world);
    const Dataset ds = load_dataset(ctx, cfg.dataset);
    const TeacherEmulator em(world);
    const auto scenes = all_scenes(ds);
    const SupervisionSet set = build_supervision(scenes, em, PcaFitRequest{cfg.d_t}, cfg.sigma_mode);
    ctx.event("pca-fit.fitted", {{"d", set.projector.input_dim()}, {"d_t", set.projector.output_dim()},
                                 {"targets", set.targets.size()}});
    ctx.write_json(cfg.projector, to_json(set.projector));
    ctx.write_text(cfg.cache, to_jsonl(set.targets));
}

inline void cmd_pca_sweep(RunContext& ctx) {
    auto cfg = parse_strict<PcaSweepConfig>(ctx.config_document(), "pca-sweep config");
    if (ctx.options().seed) cfg.seed = *ctx.options().seed;
    for (const auto& m : cfg.modes)
        require(m == "normalized" || m == "unnormalized", ErrorKind::InvalidConfig,
                "sweep mode must be normalized or unnormalized, got " + m);
    require(!cfg.d_t_list.empty() && !cfg.modes.empty() && !cfg.k_shots.empty() && cfg.episodes >= 1,
            ErrorKind::InvalidConfig, "sweep lists must be non-empty");
    ctx.write_resolved_config(cfg);

    auto targets = targets_from_jsonl(ctx.read_text(cfg.cache));
    require(!targets.empty(), ErrorKind::InvalidConfig, "supervision cache " + cfg.cache + " is empty");
    std::vector<int> labels;
    for (const auto& t : targets)
        if (t.split == Split::Personal) labels.push_back(t.class_id);
    require(!labels.empty(), ErrorKind::InvalidConfig, "supervision cache has no personal-split targets");

    std::string csv = "d_t,mode,k_shot,mean,std\n";
    for (std::size_t dt : cfg.d_t_list) {
        const PcaProjector p = fit_projector(targets, dt);
        for (const auto& mode : cfg.modes) {
            const bool normalize = mode == "normalized";
            std::vector<double> rows;
            for (const auto& t : targets)
                if (t.split == Split::Personal) {
                    const auto v = p.project(t.u, normalize, cfg.sigma_mode);
                    rows.insert(rows.end(), v.begin(), v.end());
                }
            const Tensor features({labels.size(), dt}, std::move(rows));
            for (std::size_t k : cfg.k_shots) {
                std::vector<Episode> eps;
                for (std::size_t e = 0; e < cfg.episodes; ++e)
                    eps.push_back(sample_episode(labels, k, cfg.queries_per_class, cfg.seed + e));
                const auto ms = mean_std(evaluate_oracle(eps, features, labels, ctx.threads()));
                csv += std::to_string(dt) + "," + mode + "," + std::to_string(k) + "," + num(ms.mean) + "," +
                       num(ms.std) + "\n";
                ctx.event("pca-sweep.point", {{"d_t", dt}, {"mode", mode}, {"k_shot", k}, {"mean", ms.mean}});
            }
        }
    }
    ctx.write_text(cfg.output, csv);
}

inline void cmd_distill(RunContext& ctx) {
    auto cfg = parse_strict<DistillCmdConfig>(ctx.config_document(), "distill config");
    if (ctx.options().seed) cfg.distill.seed = *ctx.options().seed;
    cfg.distill.validate();
    ctx.write_resolved_config(cfg);

    const WorldSpec world = load_world(ctx, cfg.world);
    const Dataset ds = load_dataset(ctx, cfg.dataset);
    SupervisionSet sup;
    sup.targets = targets_from_jsonl(ctx.read_text(cfg.cache));
    sup.projector = pca_from_json(ctx.read_json(cfg.projector));
    require(!sup.targets.empty(), ErrorKind::InvalidConfig, "supervision cache " + cfg.cache + " is empty");

    BackboneConfig bcfg;
    bcfg.input_channels = static_cast<std::size_t>(world.pixel_channels());
    bcfg.grid = static_cast<std::size_t>(world.grid);
    bcfg.level_channels = cfg.student.level_channels;
    TranslatorConfig tcfg;
    tcfg.output_dim = sup.projector.output_dim();
    tcfg.tokens = cfg.student.tokens;
    tcfg.heads = cfg.student.heads;
    tcfg.head_dim = cfg.student.head_dim;
    tcfg.hidden = cfg.student.hidden;

    StudentModel model(bcfg, tcfg, derive_seed(cfg.distill.seed, 0x5EED));
    ctx.write_json(cfg.initial_checkpoint, checkpoint_to_json(model));
    const SceneRenderer renderer(world);
    const auto trace = run_distillation(cfg.distill, ds.distill, renderer, sup, model);

    std::string csv = "epoch,batch,l_det,l_dist,l_emb,total\n";
    for (const auto& r : trace)
        csv += std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," + num(r.l_det) + "," + num(r.l_dist) +
               "," + num(r.l_emb) + "," + num(r.total) + "\n";
    ctx.write_text(cfg.loss_trace, csv);
    ctx.write_json(cfg.checkpoint, checkpoint_to_json(model));
}

inline void cmd_eval(RunContext& ctx) {
    auto cfg = parse_strict<EvalConfig>(ctx.config_document(), "eval config");
    if (ctx.options().seed) cfg.seed = *ctx.options().seed;
    require(!cfg.variants.empty() && !cfg.k_shots.empty() && cfg.episodes >= 1, ErrorKind::InvalidConfig,
            "eval needs variants, k_shots and at least one episode");
    ctx.write_resolved_config(cfg);

    const WorldSpec world = load_world(ctx, cfg.world);
    const Dataset ds = load_dataset(ctx, cfg.dataset);
    const SceneRenderer renderer(world);

    std::string csv = "episode,variant,k_shot,accuracy\n";
    for (const auto& v : cfg.variants) {
        const StudentModel model = checkpoint_from_json(ctx.read_json(v.checkpoint));
        const std::uint64_t before = model.checksum();
        std::vector<int> labels;
        const Tensor features = personal_features(model, renderer, ds.personal, labels);
        require(model.checksum() == before, ErrorKind::InvalidConfig, "model parameters changed during evaluation");
        for (std::size_t k : cfg.k_shots) {
            std::vector<Episode> eps;
            for (std::size_t e = 0; e < cfg.episodes; ++e)
                eps.push_back(sample_episode(labels, k, cfg.queries_per_class, cfg.seed + e));
            const auto acc = evaluate_oracle(eps, features, labels, ctx.threads());
            for (std::size_t e = 0; e < acc.size(); ++e)
                csv += std::to_string(e) + "," + v.name + "," + std::to_string(k) + "," + num(acc[e]) + "\n";
            const auto ms = mean_std(acc);
            ctx.event("eval.variant", {{"variant", v.name}, {"k_shot", k}, {"mean", ms.mean}, {"std", ms.std}});
        }
    }
    ctx.write_text(cfg.output, csv);
}

inline void cmd_stats(RunContext& ctx) {
    const auto cfg = parse_strict<StatsConfig>(ctx.config_document(), "stats config");
    if (ctx.options().seed) ctx.event("seed.unused", {{"reason", "stats is deterministic given its inputs"}});
    const Alternative alt = alternative_from_string(cfg.alternative);
    ctx.write_resolved_config(cfg);
    const auto results = parse_episode_csv(ctx.read_text(cfg.episodes));
    const EpisodeSummary s = summarize_episodes(results, alt);
    ctx.write_text(cfg.summary, summary_csv(s));
    ctx.write_text(cfg.pvalues, pvalue_csv(s));
    const std::string text = summary_text(s);
    ctx.write_text(cfg.report, text);
    if (!ctx.options().quiet) std::fputs(text.c_str(), stdout);
}

inline void cmd_toy(RunContext& ctx) {
    auto cfg = parse_strict<ToyCmdConfig>(ctx.config_document(), "toy config");
    if (ctx.options().seed) cfg.toy.seed = *ctx.options().seed;
    cfg.toy.validate();
    ctx.write_resolved_config(cfg);
    const ToyRun run = run_toy(cfg.toy);

    std::string traj = "iter,point_id";
    if (cfg.toy.optimized_dim == 2)
        traj += ",x,y";
    else
        for (std::size_t c = 0; c < cfg.toy.optimized_dim; ++c) traj += ",x" + std::to_string(c);
    traj += "\n";
    for (std::size_t it = 0; it < run.trajectory.size(); ++it)
        for (std::size_t p = 0; p < cfg.toy.n_points; ++p) {
            traj += std::to_string(it) + "," + std::to_string(p);
            for (double v : run.trajectory[it].row(p)) traj += "," + num(v);
            traj += "\n";
        }
    std::string match = "iter,k,rate\n";
    for (std::size_t it = 0; it < run.trajectory.size(); ++it)
        for (std::size_t m = 0; m < cfg.toy.k_list.size(); ++m)
            match += std::to_string(it) + "," + std::to_string(cfg.toy.k_list[m]) + "," + num(run.match[m][it]) + "\n";
    ctx.event("toy.finished", {{"initial_loss", run.loss.front()}, {"final_loss", run.loss.back()}});
    ctx.write_text(cfg.trajectory, traj);
    ctx.write_text(cfg.match_rate, match);
}

using Command = std::function<void(RunContext&)>;

inline const std::map<std::string, Command>& commands() {
    static const std::map<std::string, Command> table{
        {"gen-data", cmd_gen_data}, {"pca-fit", cmd_pca_fit}, {"pca-sweep", cmd_pca_sweep}, {"distill", cmd_distill},
        {"toy", cmd_toy},           {"eval", cmd_eval},       {"stats", cmd_stats}};
    return table;
}

/// Runs one subcommand with its event stream captured; returns the process
/// exit code (0 ok, 1 on any library or I/O error, with error.json written).
inline int run_command(const std::string& name, const RunOptions& opts) {
    const auto it = commands().find(name);
    if (it == commands().end()) {
        std::fprintf(stderr, "unknown subcommand %s\n", name.c_str());
        return 2;
    }
    std::optional<RunContext> ctx;
    try {
        ctx.emplace(name, opts);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
    ScopedEventSink sink([&](const std::string& event, const nlohmann::json& fields) { ctx->event(event, fields); });
    try {
        ctx->event("run.started");
        it->second(*ctx);
        ctx->event("run.finished");
        return 0;
    } catch (const Error& e) {
        ctx->write_error(e.kind(), e.what());
    } catch (const std::exception& e) {
        ctx->write_error(ErrorKind::Io, e.what());
    }
    if (!opts.quiet) std::fprintf(stderr, "%s failed, see %s.error.json\n", name.c_str(), name.c_str());
    return 1;
}

} // namespace mocha::cli
