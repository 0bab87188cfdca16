#include <cstdint>
#include <string>

#include <CLI11.hpp>

#include "mocha/cli/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mocha: multimodal distillation and few-shot personalization on synthetic data"};
    app.require_subcommand(1);

    mocha::cli::RunOptions opts;
    std::uint64_t seed = 0;
    std::string config, workdir = ".";

    const std::pair<const char*, const char*> subcommands[] = {
        {"gen-data", "generate the synthetic scene dataset and world description"},
        {"pca-fit", "emulate teacher targets, fit the PCA projector and write the supervision cache"},
        {"pca-sweep", "oracle accuracy of teacher targets against the PCA dimension"},
        {"distill", "distil the student backbone and translator against the supervision cache"},
        {"toy", "relational-geometry toy study (2D points fitted to 3D references)"},
        {"eval", "oracle-box few-shot evaluation of student checkpoints"},
        {"stats", "summary table and signed-rank tests over episode results"},
    };
    for (const auto& [name, help] : subcommands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "JSON config document (defaults apply to missing keys)")
            ->check(CLI::ExistingFile);
        sub->add_option("--workdir", workdir, "directory all input and output paths are relative to");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--threads", opts.threads, "worker threads for episode evaluation")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--quiet", opts.quiet, "suppress human-readable progress on stderr");
    }

    CLI11_PARSE(app, argc, argv);

    const auto* chosen = app.get_subcommands().front();
    opts.config = config;
    opts.workdir = workdir;
    if (chosen->count("--seed") > 0) opts.seed = seed;
    return mocha::cli::run_command(chosen->get_name(), opts);
}
