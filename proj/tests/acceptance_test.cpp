#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mocha/cli/commands.hpp"
#include "mocha/mocha.hpp"
#include "oracles.hpp"

using namespace mocha;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

ad::Var contract(ad::Tape& t, const ad::Var& out, std::uint64_t seed) {
    Rng rng(seed);
    return ad::sum(ad::mul(out, t.constant(Tensor::randn(out.value().shape(), rng))));
}

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

// ---- 1 ----------------------------------------------------------------------

Outcome gradients() {
    double worst_dist = 0, worst_emb = 0, worst_tr = 0;
    TranslatorConfig tc;
    tc.input_dim = 12;
    tc.output_dim = 5;
    tc.tokens = 3;
    tc.heads = 2;
    tc.head_dim = 3;
    tc.hidden = 7;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(seed, 0xC1));
        const Tensor f = Tensor::randn({6, 5}, rng), u = Tensor::randn({6, 5}, rng);
        worst_dist = std::max(worst_dist, grad_check([&](ad::Tape& t, ad::Var x) { return distill_loss(x, t.constant(u)); }, f));

        const Tensor fe = Tensor::randn({7, 3}, rng), ue = Tensor::randn({7, 4}, rng);
        worst_emb = std::max(worst_emb, grad_check([&](ad::Tape&, ad::Var x) { return embedding_loss(x, ue, 0.5); }, fe));

        const Translator tr(tc, seed);
        const Tensor ft = Tensor::randn({4, 12}, rng);
        worst_tr = std::max(worst_tr, grad_check([&](ad::Tape& t, ad::Var x) {
                                return contract(t, tr.forward(tr.params().bind(t, false), x), seed);
                            },
                                                 ft));
        for (std::size_t p = 0; p < tr.params().size(); ++p) {
            const TapeFunction fn = [&, p](ad::Tape& t, ad::Var x) {
                auto vars = tr.params().bind(t, false);
                vars[p] = x;
                return contract(t, tr.forward(vars, t.constant(ft)), seed);
            };
            worst_tr = std::max(worst_tr, grad_check(fn, tr.params()[p]));
        }
    }
    const bool ok = worst_dist < 1e-4 && worst_emb < 1e-4 && worst_tr < 1e-4;
    return {ok, fmt("20 seeds; max rel err distill %.2e, embedding %.2e, translator %.2e", worst_dist, worst_emb, worst_tr)};
}

// ---- 2 ----------------------------------------------------------------------

Outcome identities() {
    double congruent = 0, equidistant = 0;
    bool zero = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(derive_seed(seed, 0xC2));
        const Tensor u = Tensor::randn({8, 3}, rng);
        // rotate in the (0, 2) plane and shift
        Tensor f = u;
        const double a = 0.3 + 0.1 * static_cast<double>(seed);
        for (std::size_t r = 0; r < 8; ++r) {
            f(r, 0) = std::cos(a) * u(r, 0) - std::sin(a) * u(r, 2) + 1.5;
            f(r, 2) = std::sin(a) * u(r, 0) + std::cos(a) * u(r, 2) - 0.5;
        }
        congruent = std::max(congruent, std::abs(embedding_loss(f, u, 0.7) - embedding_entropy_floor(u, 0.7)));
        zero = zero && distill_loss(f, f) == 0.0 && distill_loss(u, u) == 0.0;
    }
    for (std::size_t n : {3u, 5u, 10u}) {
        Tensor f({n, n}), u({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            f(i, i) = 2.0;
            u(i, i) = 0.5;
        }
        equidistant = std::max(equidistant, std::abs(embedding_loss(f, u, 0.4) - std::log(static_cast<double>(n - 1))));
    }
    return {congruent < 1e-9 && equidistant < 1e-9 && zero,
            fmt("congruent gap %.1e, equidistant gap %.1e, distill(F,F)=0 %s", congruent, equidistant,
                zero ? "yes" : "no")};
}

// ---- 3 ----------------------------------------------------------------------

Outcome toy() {
    std::vector<double> gain(3, 0.0);
    double worst_rise = 0.0;
    ToyConfig cfg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        cfg.seed = seed;
        const auto run = run_toy(cfg);
        for (std::size_t t = 1; t < run.loss.size(); ++t) worst_rise = std::max(worst_rise, run.loss[t] - run.loss[t - 1]);
        for (std::size_t m = 0; m < 3; ++m) gain[m] += (run.match[m].back() - run.match[m].front()) / 10.0;
    }
    const bool ok = *std::min_element(gain.begin(), gain.end()) >= 20.0 && worst_rise <= 1e-9;
    return {ok, fmt("mean gain k=1 %.1f pp, k=3 %.1f pp, k=5 %.1f pp; largest loss rise %.1e", gain[0], gain[1], gain[2],
                    worst_rise)};
}

// ---- 4 ----------------------------------------------------------------------

Outcome hyperbolic() {
    const double a = 18.0, b = 0.47, c = -0.26;
    std::vector<double> y(512);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a / std::pow(static_cast<double>(i) + 1.0, b) + c;
    const auto clean = fit_hyperbolic(y);
    const double clean_err = std::max({rel(clean.a, a), rel(clean.b, b), rel(clean.c, c)});

    double seed_ab = 0, seed_c = 0, ma = 0, mb = 0, mc = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto noisy = y;
        Rng rng(derive_seed(s, 0xC4));
        for (double& v : noisy) v *= 1.0 + 0.01 * rng.normal();
        const auto fit = fit_hyperbolic(noisy);
        seed_ab = std::max({seed_ab, rel(fit.a, a), rel(fit.b, b)});
        seed_c = std::max(seed_c, rel(fit.c, c));
        ma += fit.a / 20;
        mb += fit.b / 20;
        mc += fit.c / 20;
    }
    const double mean_err = std::max({rel(ma, a), rel(mb, b), rel(mc, c)});
    const bool ok = clean_err < 0.01 && seed_ab < 0.05 && mean_err < 0.05;
    return {ok, fmt("noiseless max rel err %.1e; 1%% noise: per-seed a,b max %.1f%%, per-seed c max %.1f%%, "
                    "20-seed mean max %.1f%%",
                    clean_err, 100 * seed_ab, 100 * seed_c, 100 * mean_err)};
}

// ---- 5 ----------------------------------------------------------------------

Outcome pca() {
    double ortho = 0;
    bool ordered = true;
    const std::pair<std::size_t, std::size_t> shapes[] = {{300, 8}, {300, 64}, {400, 256}, {120, 256}};
    for (const auto& [n, d] : shapes) {
        Rng rng(derive_seed(n, d));
        Tensor x = Tensor::randn({n, d}, rng);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < d; ++k) x(r, k) *= 1.0 + 3.0 / static_cast<double>(k + 1);
        const std::size_t dt = std::min(n - 1, d);
        const auto p = pca_fit(x, dt);
        for (std::size_t i = 0; i < dt; ++i)
            for (std::size_t j = i; j < dt; ++j) {
                double dot = 0;
                for (std::size_t k = 0; k < d; ++k) dot += p.components(i, k) * p.components(j, k);
                ortho = std::max(ortho, std::abs(dot - (i == j ? 1.0 : 0.0)));
            }
        for (std::size_t i = 1; i < dt; ++i) ordered = ordered && p.explained_variance[i] <= p.explained_variance[i - 1];
    }

    // full-rank, unnormalized projection against raw teacher vectors
    WorldSpec spec;
    spec.d_z = 16;
    spec.d_h = 48;
    spec.scenes_per_coarse = 30;
    const auto ds = generate_dataset(spec);
    std::vector<SceneSample> scenes = ds.distill;
    scenes.insert(scenes.end(), ds.personal.begin(), ds.personal.end());
    const auto sup = build_supervision(scenes, TeacherEmulator(spec), PcaFitRequest{64});
    std::vector<int> labels;
    std::vector<double> raw, proj;
    for (const auto& t : sup.targets)
        if (t.split == Split::Personal) {
            labels.push_back(t.class_id);
            raw.insert(raw.end(), t.u.begin(), t.u.end());
            const auto v = sup.projector.project(t.u, false);
            proj.insert(proj.end(), v.begin(), v.end());
        }
    const Tensor raw_t({labels.size(), 64}, raw), proj_t({labels.size(), 64}, proj);
    std::size_t agree = 0, total = 0;
    for (std::size_t k : {1u, 5u})
        for (const auto& ep : sample_episodes(labels, k, 0)) {
            PrototypeStore a, b;
            for (auto i : ep.support) {
                a.add(labels[i], raw_t.row(i));
                b.add(labels[i], proj_t.row(i));
            }
            for (auto i : ep.query) {
                agree += a.classify(raw_t.row(i)) == b.classify(proj_t.row(i));
                ++total;
            }
        }
    const bool ok = ortho < 1e-9 && ordered && agree == total;
    return {ok, fmt("orthonormality err %.1e, ordering %s; isometry agreement %zu/%zu", ortho, ordered ? "ok" : "broken",
                    agree, total)};
}

// ---- 6 ----------------------------------------------------------------------

Outcome prototypes() {
    const WorldSpec spec;
    const auto ds = generate_dataset(spec);
    const SceneRenderer renderer(spec);
    TranslatorConfig tc;
    tc.output_dim = 16;
    std::vector<int> labels;
    for (const auto& s : ds.personal) labels.push_back(s.regions[0].class_id);
    std::size_t agree = 0, total = 0;
    for (std::uint64_t cfg = 0; cfg < 10; ++cfg) {
        const StudentModel model(BackboneConfig{}, tc, derive_seed(cfg, 0xC6));
        const std::size_t k = cfg % 2 ? 5 : 1;
        const Episode ep = sample_episode(labels, k, 0, cfg);
        std::vector<SceneSample> support;
        std::map<int, oracle::Matrix> oracle_support;
        for (auto i : ep.support) {
            support.push_back(ds.personal[i]);
            const Tensor f = model.embed(renderer.render(ds.personal[i]), detail::boxes_of(ds.personal[i]));
            oracle_support[labels[i]].emplace_back(f.row(0).begin(), f.row(0).end());
        }
        const auto store = fsl_train(model, renderer, support);
        for (std::size_t q = 0; q < 100; ++q) {
            const auto& scene = ds.personal[ep.query[q]];
            const auto boxes = detail::boxes_of(scene);
            const int got = fsl_infer(store, model, renderer, scene, boxes).at(0);
            const Tensor f = model.embed(renderer.render(scene), boxes);
            agree += got == oracle::nearest_class_mean(oracle_support, {f.row(0).begin(), f.row(0).end()});
            ++total;
        }
    }
    return {agree == total && total == 1000, fmt("%zu/%zu queries agree across 10 configurations", agree, total)};
}

// ---- 7, 8, 10: the documented CLI recipe ------------------------------------

const fs::path kConfigs = fs::path(MOCHA_SOURCE_DIR) / "configs";

int cli(const std::string& cmd, const fs::path& workdir, const std::string& config = "") {
    cli::RunOptions opts;
    opts.workdir = workdir;
    opts.quiet = true;
    opts.threads = 4;
    if (!config.empty()) opts.config = kConfigs / config;
    const int rc = cli::run_command(cmd, opts);
    if (rc != 0) {
        std::ifstream in(workdir / (cmd + ".error.json"));
        std::stringstream ss;
        ss << in.rdbuf();
        fail(ErrorKind::Io, cmd + " failed: " + ss.str());
    }
    return rc;
}

void recipe(const fs::path& w) {
    cli("gen-data", w);
    cli("pca-fit", w);
    cli("distill", w, "distill.json");
    cli("distill", w, "distill-dist-only.json");
    cli("eval", w, "eval.json");
    cli("stats", w);
    cli("pca-sweep", w, "pca-sweep.json");
    cli("toy", w, "toy.json");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::vector<double>> episode_table(const fs::path& w) {
    std::map<std::string, std::vector<double>> out; // "variant/k" -> per-episode accuracy
    for (const auto& r : cli::parse_episode_csv(slurp(w / "episodes.csv")))
        out[r.variant + "/" + std::to_string(r.k_shot)].push_back(r.accuracy);
    return out;
}

double mean_of(const std::vector<double>& v) { return mean_std(v).mean; }

Outcome end_to_end(const fs::path& w, double seconds) {
    auto t = episode_table(w);
    bool ok = seconds < 600.0;
    std::string detail;
    for (int k : {1, 5}) {
        const auto& base = t["baseline/" + std::to_string(k)];
        const auto& only = t["dist-only/" + std::to_string(k)];
        const auto& dual = t["distilled/" + std::to_string(k)];
        const double p = wilcoxon_signed_rank(dual, base).p_value;
        const double gain = mean_of(dual) - mean_of(base);
        ok = ok && gain >= 5.0 && mean_of(dual) >= mean_of(only) && p < 0.05;
        detail += fmt("%d-shot: baseline %.2f, dist-only %.2f, distilled %.2f (gain %+.2f pp, p=%.2g); ", k, mean_of(base),
                      mean_of(only), mean_of(dual), gain, p);
    }
    return {ok, detail + fmt("recipe %.0f s", seconds)};
}

Outcome normalization(const fs::path& w) {
    std::istringstream in(slurp(w / "pca_sweep.csv"));
    double norm = NAN, raw = NAN;
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("64,normalized,1,", 0) == 0) norm = std::stod(line.substr(16));
        if (line.rfind("64,unnormalized,1,", 0) == 0) raw = std::stod(line.substr(18));
    }
    return {norm >= raw, fmt("d_t=64 1-shot: normalized %.2f, unnormalized %.2f", norm, raw)};
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Outcome determinism(const fs::path& a, const fs::path& b) {
    recipe(b);
    std::size_t same = 0, files = 0;
    std::string diff;
    for (const auto& e : fs::directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto name = e.path().filename();
        if (fs::exists(b / name) && fnv1a(slurp(e.path())) == fnv1a(slurp(b / name)))
            ++same;
        else
            diff += " " + name.string();
    }
    return {same == files && files > 0, fmt("%zu/%zu output files hash-identical across reruns%s", same, files, diff.c_str())};
}

// reported only: the relational-loss temperature against downstream accuracy
void temperature_sweep(const fs::path& w) {
    std::printf("  temperature sweep (lambda_emb = 8, seed 1):\n");
    for (double tau : {0.05, 0.1, 0.5, 1.0}) {
        const std::string tag = fmt("tau%g", tau);
        nlohmann::json d = nlohmann::json::parse(slurp(kConfigs / "distill.json"));
        d["distill"]["weights"]["tau"] = tau;
        d["checkpoint"] = tag + ".ckpt.json";
        d["initial_checkpoint"] = tag + ".init.ckpt.json";
        d["loss_trace"] = tag + ".loss.csv";
        std::ofstream(w / (tag + ".distill.json")) << d.dump();
        nlohmann::json e = {{"variants", {{{"name", tag}, {"checkpoint", tag + ".ckpt.json"}}}},
                            {"output", tag + ".episodes.csv"}};
        std::ofstream(w / (tag + ".eval.json")) << e.dump();
        for (const auto& [cmd, file] : {std::pair{"distill", tag + ".distill.json"}, std::pair{"eval", tag + ".eval.json"}}) {
            cli::RunOptions opts;
            opts.workdir = w;
            opts.quiet = true;
            opts.config = w / file;
            if (cli::run_command(cmd, opts) != 0) {
                std::printf("    tau %-5g failed\n", tau);
                return;
            }
        }
        std::map<std::size_t, std::vector<double>> acc;
        for (const auto& r : cli::parse_episode_csv(slurp(w / (tag + ".episodes.csv")))) acc[r.k_shot].push_back(r.accuracy);
        std::printf("    tau %-5g 1-shot %.2f  5-shot %.2f\n", tau, mean_of(acc[1]), mean_of(acc[5]));
    }
}

Outcome wilcoxon() {
    std::mt19937_64 gen(909);
    std::uniform_int_distribution<int> small(-5, 5);
    std::normal_distribution<double> nd(0.25, 1.0);
    double worst = 0;
    int checked = 0;
    while (checked < 100) {
        const std::size_t n = 5 + static_cast<std::size_t>(checked % 8);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = checked % 2 ? small(gen) : nd(gen);
            b[i] = checked % 2 ? small(gen) : nd(gen);
        }
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < n; ++i) nonzero += a[i] != b[i];
        if (nonzero < 5) continue;
        worst = std::max(worst, std::abs(wilcoxon_signed_rank(a, b).p_value - oracle::wilcoxon_enumerated(a, b)));
        ++checked;
    }
    const std::vector<double> pos{0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, zero(6, 0.0);
    const double p6 = wilcoxon_signed_rank(pos, zero).p_value;
    return {worst < 1e-12 && p6 == 0.03125, fmt("100 samples, max |p - enumerated| %.1e; n=6 all positive p=%.17g", worst, p6)};
}

} // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / ("mocha_acceptance_" + std::to_string(::getpid()));
    const fs::path run_a = root / "a", run_b = root / "b";
    fs::remove_all(root);
    fs::create_directories(run_a);

    double recipe_seconds = 0.0;
    bool recipe_ok = false;
    std::string recipe_error;

    using Check = std::function<Outcome()>;
    const std::vector<std::tuple<int, std::string, double, Check>> checks{
        {1, "gradient correctness", 10.0, gradients},
        {2, "loss identities", 0.0, identities},
        {3, "toy study", 30.0, toy},
        {4, "hyperbolic fit", 0.0, hyperbolic},
        {5, "PCA pipeline", 0.0, pca},
        {6, "prototype oracle equivalence", 0.0, prototypes},
        {7, "end-to-end trend",
         0.0,
         [&] {
             const auto start = std::chrono::steady_clock::now();
             try {
                 recipe(run_a);
                 recipe_ok = true;
             } catch (const std::exception& e) {
                 recipe_error = e.what();
             }
             recipe_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
             if (!recipe_ok) return Outcome{false, "recipe failed: " + recipe_error};
             return end_to_end(run_a, recipe_seconds);
         }},
        {8, "normalization ablation", 0.0,
         [&] { return recipe_ok ? normalization(run_a) : Outcome{false, "recipe failed"}; }},
        {9, "Wilcoxon exactness", 0.0, wilcoxon},
        {10, "determinism", 0.0,
         [&] { return recipe_ok ? determinism(run_a, run_b) : Outcome{false, "recipe failed"}; }},
    };

    int failures = 0;
    for (const auto& [id, name, budget, check] : checks) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = check();
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (budget > 0.0 && secs >= budget) {
            out.pass = false;
            out.detail += fmt(" (over the %.0f s budget)", budget);
        }
        failures += !out.pass;
        std::printf("[%s] %2d %-30s %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", id, name.c_str(), out.detail.c_str(), secs);
        std::fflush(stdout);
    }

    if (recipe_ok) temperature_sweep(run_a);
    fs::remove_all(root);
    std::printf("%s: %d of %zu criteria failed\n", failures ? "FAIL" : "PASS", failures, checks.size());
    return failures ? 1 : 0;
}
