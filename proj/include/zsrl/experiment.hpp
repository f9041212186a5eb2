#ifndef ZSRL_EXPERIMENT_HPP
#define ZSRL_EXPERIMENT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsrl/data.hpp"
#include "zsrl/distill.hpp"
#include "zsrl/evalrank.hpp"
#include "zsrl/losses.hpp"
#include "zsrl/trainer.hpp"

namespace zsrl {

/// Which metric blocks the eval command reports.
struct EvalSettings {
    std::vector<std::size_t> k_values = {100, 200};
    std::size_t map_k = 200;
    std::vector<GalleryMode> gallery_modes = {GalleryMode::ZeroShot, GalleryMode::Generalized};
    std::vector<ApNormalizer> ap_normalizers = {ApNormalizer::TotalRelevant,
                                                ApNormalizer::MinKRelevant};
    bool score_missing_as_zero = false;
    std::size_t emit_topk = 0;  // 0 = no per-query top-K files
    // Re-derives the metrics with the brute-force oracle and insists on
    // exact agreement; only runs on instances within the size caps.
    bool oracle_check = false;
    std::size_t oracle_max_gallery = 64;
    std::size_t oracle_max_queries = 16;
};

/// One experiment document drives every subcommand. Validated strictly:
/// unknown keys anywhere are rejected up front.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    // data: exactly one source
    std::optional<SynthConfig> synthetic;
    std::optional<std::string> dataset_path;

    // split: a file, or a protocol over the dataset's classes
    std::optional<std::string> split_path;
    std::string split_protocol;  // "random_k" | "heldout_list"
    std::size_t split_unseen_k = 0;
    std::vector<int> split_heldout;
    std::optional<std::uint64_t> split_seed;

    std::vector<std::size_t> hidden_dims = {32};
    std::size_t embed_dim = 512;
    std::optional<std::uint64_t> encoder_init_seed;

    LossConfig losses;
    OptimizerConfig optimizer;

    TeacherConfig teacher;
    SoftLabelMode soft_label_mode = SoftLabelMode::LogitMean;
    std::string teacher_scope = "all_classes";  // or "seen_only"
    std::optional<std::string> soft_label_path;

    EvalSettings eval;
    std::vector<std::uint64_t> ablate_seeds;

    std::string resolved_soft_label_path() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Dataset and split resolution shared by all commands: synthetic data is
/// regenerated deterministically from the seed, so later commands do not
/// depend on gen-data having written files.
std::vector<DatasetItem> resolve_dataset(const ExperimentConfig& cfg);
SplitSpec resolve_split(const ExperimentConfig& cfg, const std::vector<DatasetItem>& items);

// Command runners. Each returns the JSON status document the CLI prints as
// its single stdout line; failures propagate as zsrl exceptions.
nlohmann::json run_gen_data(const ExperimentConfig& cfg);
nlohmann::json run_soft_labels(const ExperimentConfig& cfg);
nlohmann::json run_train(const ExperimentConfig& cfg);
nlohmann::json run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);
nlohmann::json run_ablate(const ExperimentConfig& cfg);

/// Stable exit codes: 2 config/usage, 3 missing or bad data, 4 numeric,
/// 5 shape mismatch, 1 anything else.
int exit_code_for(const std::exception& e);

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };
LogLevel log_level();  // from ZSRL_LOG, read once
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace zsrl

#endif  // ZSRL_EXPERIMENT_HPP
