// Pipeline driver: generate data, train the base model, score neurons,
// partition them, fine-tune with gradient masks, evaluate, and render
// reports. Each stage persists its artifacts and a manifest, so stages can
// be rerun independently.
//
// Logs go to stderr; one machine-readable JSON summary per stage goes to
// stdout. Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mnaft/pipeline.hpp"

using namespace mnaft;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed;
};

RunConfig resolve_config(const GlobalArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

void emit(const nlohmann::json& summary) { std::cout << summary.dump() << "\n"; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mnaft: neuron-aware fine-tuning pipeline for synthetic image translation"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "key = value config file");
    app.add_option("--out", args.out_dir, "output directory (overrides config)");
    uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "seed (overrides config)");

    auto* cmd_gen = app.add_subcommand("gen-data", "generate the task datasets");
    auto* cmd_train = app.add_subcommand("train-base", "train the base model on all tasks");
    auto* cmd_score = app.add_subcommand("score", "score neuron awareness and select layers");
    bool with_oracle = false;
    cmd_score->add_flag("--with-oracle", with_oracle,
                        "also compute the exact-ablation Spearman report");
    auto* cmd_part = app.add_subcommand("partition", "split neurons into general/specific sets");
    auto* cmd_ft = app.add_subcommand("finetune", "fine-tune with gradient masks");
    std::string mode_name = "mnaft";
    int ft_task = -1;
    cmd_ft->add_option("--mode", mode_name,
                       "mnaft | full | all-layers | language-layers | vision-layers | "
                       "general-only | specific-only");
    cmd_ft->add_option("--task", ft_task, "target task id");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate all checkpoints on the eval splits");
    auto* cmd_report = app.add_subcommand("report", "emit activation profiles and projections");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) args.seed = seed_value;

    try {
        RunConfig cfg = resolve_config(args);
        if (cmd_gen->parsed()) {
            emit(stages::gen_data(cfg));
        } else if (cmd_train->parsed()) {
            std::fprintf(stderr, "[train-base] %d steps, batch %d, lr %g\n", cfg.base_steps,
                         cfg.base_batch, static_cast<double>(cfg.base_lr));
            emit(stages::train_base(cfg));
        } else if (cmd_score->parsed()) {
            emit(stages::score(cfg, with_oracle));
        } else if (cmd_part->parsed()) {
            emit(stages::partition(cfg));
        } else if (cmd_ft->parsed()) {
            FinetuneMode mode = finetune_mode_from_name(mode_name);
            int task = ft_task >= 0 ? ft_task : cfg.ft_task;
            std::fprintf(stderr, "[finetune] mode=%s task=%d steps=%d\n",
                         finetune_mode_name(mode), task, cfg.ft_steps);
            emit(stages::finetune_stage(cfg, mode, task));
        } else if (cmd_eval->parsed()) {
            emit(stages::eval(cfg));
        } else if (cmd_report->parsed()) {
            emit(stages::report(cfg));
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
