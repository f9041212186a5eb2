// zsrl: reproducible two-domain retrieval experiments from one JSON config.
//
// Subcommands: gen-data, soft-labels, train, eval, ablate. Every command
// prints exactly one JSON status line on stdout; diagnostics go to stderr
// (verbosity via ZSRL_LOG=error|info|debug). Exit codes: 0 ok, 2 config
// error, 3 missing/bad data, 4 numeric failure, 5 shape mismatch, 1 other.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "zsrl/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    cmd->add_option("--output-dir", args.output_dir, "overrides config output_dir");
    cmd->add_option("--seed", args.seed, "overrides config seed");
}

zsrl::ExperimentConfig load_with_overrides(const CommonArgs& args) {
    zsrl::ExperimentConfig cfg = zsrl::load_experiment_config(args.config_path);
    if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

int emit_error(const std::string& command, const std::exception& e) {
    const int code = zsrl::exit_code_for(e);
    zsrl::log_error(e.what());
    nlohmann::json status;
    status["command"] = command;
    status["status"] = "error";
    status["error"] = e.what();
    status["exit_code"] = code;
    std::cout << status.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"zero-shot sketch-photo retrieval experiments"};
    app.require_subcommand(1);

    CommonArgs gen_args, soft_args, train_args, eval_args, ablate_args;
    std::string checkpoint_path;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and split");
    add_common(gen, gen_args);
    CLI::App* soft = app.add_subcommand("soft-labels", "pretrain the teacher and extract soft labels");
    add_common(soft, soft_args);
    CLI::App* tr = app.add_subcommand("train", "train the encoder");
    add_common(tr, train_args);
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, eval_args);
    ev->add_option("--checkpoint", checkpoint_path, "trained checkpoint JSON")->required();
    CLI::App* ab = app.add_subcommand("ablate", "run the loss-combination grid");
    add_common(ab, ablate_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    std::string command;
    try {
        nlohmann::json status;
        if (gen->parsed()) {
            command = "gen-data";
            status = zsrl::run_gen_data(load_with_overrides(gen_args));
        } else if (soft->parsed()) {
            command = "soft-labels";
            status = zsrl::run_soft_labels(load_with_overrides(soft_args));
        } else if (tr->parsed()) {
            command = "train";
            status = zsrl::run_train(load_with_overrides(train_args));
        } else if (ev->parsed()) {
            command = "eval";
            status = zsrl::run_eval(load_with_overrides(eval_args), checkpoint_path);
        } else {
            command = "ablate";
            status = zsrl::run_ablate(load_with_overrides(ablate_args));
        }
        std::cout << status.dump() << std::endl;
        return 0;
    } catch (const std::exception& e) {
        return emit_error(command, e);
    }
}
