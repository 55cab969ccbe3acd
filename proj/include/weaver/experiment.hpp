#pragma once

// End-to-end experiment harness: suite generation, strategy runs over
// orders and seeds, metric persistence and table emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "weaver/cl.hpp"
#include "weaver/data.hpp"
#include "weaver/eval.hpp"
#include "weaver/model.hpp"
#include "weaver/viz.hpp"

namespace weaver {

enum class Strategy { finetune, ewc, weaver, replay, mtl };

std::string_view strategy_name(Strategy s);
// Throws ConfigError for unknown names.
Strategy parse_strategy(std::string_view name);

struct ExperimentConfig {
    SuiteConfig suite;
    // vocab_size and num_labels are derived from the suite.
    ModelConfig model;
    Hyperparams hyper;
    std::vector<Strategy> strategies = {Strategy::finetune, Strategy::ewc, Strategy::weaver, Strategy::replay,
                                        Strategy::mtl};
    // Permutations of 0..K-1. Empty means four random permutations.
    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::optional<std::size_t> freeze_layers;
    double ewc_lambda = 100.0;
    std::size_t ewc_fisher_samples = 0;
    double replay_fraction = 0.10;
    std::string output_dir = "weaver-out";
    std::string task_label = "NER";
    std::size_t max_vocab = 5000;
    bool save_checkpoints = true;

    // Throws ConfigError.
    void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
// Reads and parses a config file; every failure is a ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// The configured orders, or the default four permutations drawn from the
// suite seed.
std::vector<std::vector<std::size_t>> resolved_orders(const ExperimentConfig& config);

// FNV-1a over the canonical JSON dump of the config.
std::string config_hash(const ExperimentConfig& config);
std::string provenance_string();

// Generated suite plus everything needed to train and evaluate on it.
struct PreparedSuite {
    Suite suite;
    Vocabulary vocab;
    LabelSet labels;
    std::vector<EncodedCorpus> train;
    ModelConfig model;
};

PreparedSuite prepare_suite(const ExperimentConfig& config);

// Model and shuffle seeds of one run.
ModelConfig run_model_config(const PreparedSuite& prepared, std::uint64_t seed);
Hyperparams run_hyper(const ExperimentConfig& config, std::uint64_t seed);

struct RunResult {
    Strategy strategy = Strategy::weaver;
    std::size_t order_index = 0;
    std::vector<std::size_t> order;
    std::uint64_t seed = 0;
    // Rows follow the stages; for MTL a single row after joint training.
    ResultMatrix matrix;
    // Empty for MTL.
    std::vector<double> forgetting;
    std::vector<Checkpoint> checkpoints;
};

// Corpora and test sets are taken in `order`. `mask` applies to every stage.
RunResult execute_run(const ExperimentConfig& config, const PreparedSuite& prepared, Strategy strategy,
                      std::size_t order_index, std::uint64_t seed, const FreezeMask& mask = {});

nlohmann::json run_metrics_json(const RunResult& run);

struct RunOptions {
    std::size_t jobs = 1;
    std::optional<std::uint64_t> seed_override;
};

// Writes per-run directories, then tables/ from the persisted metrics.
// Returns 0 on success, 1 if any run failed (a FAILED marker is written).
int run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// Rebuilds tables/ from output_dir/*/*/*/metrics.json.
void write_tables(const ExperimentConfig& config);

struct CrossEvalResult {
    std::vector<std::string> corpora;
    // Seed means; grid[i][j] = F1 on test j of the model trained on corpus i.
    std::vector<std::vector<double>> grid;
    std::vector<std::vector<std::vector<double>>> per_seed;
    double diagonal_mean() const;
    double off_diagonal_mean() const;
};

CrossEvalResult cross_eval(const ExperimentConfig& config, const RunOptions& options = {});
int run_cross_eval(const ExperimentConfig& config, const RunOptions& options = {});

struct AblationResult {
    std::vector<std::size_t> order;
    // Per seed, per stage: mean F1 over all test sets.
    std::vector<std::vector<double>> full;
    std::vector<std::vector<double>> frozen;
};

// One entry per order. Throws ConfigError when freeze_layers is unset or > L.
std::vector<AblationResult> ablation(const ExperimentConfig& config, const RunOptions& options = {});
int run_ablation(const ExperimentConfig& config, const RunOptions& options = {});

struct EmbeddingProjection {
    // model_tag -> records; tags are "independent", "joint", "weaver".
    std::vector<ProjectionRecord> records;
    // Centroid distance between the two corpora under each model tag.
    double independent = 0.0;
    double joint = 0.0;
    double weaver = 0.0;
};

// Embeddings of O-tagged training tokens of the first two corpora (in order 0, 1) under two
// independently trained models, one joint model and a two-stage WEAVER model.
EmbeddingProjection project_embeddings(const ExperimentConfig& config, std::uint64_t seed,
                                       std::size_t max_tokens_per_corpus = 300);
int run_project_embeddings(const ExperimentConfig& config, const RunOptions& options = {});

// Pairwise ASO between per-seed score lists stored in a JSON file
// {"a": [...], "b": [...], "alpha"?, "tau"?, "bootstrap_n"?, "seed"?}.
int run_aso_file(const std::filesystem::path& path, const std::filesystem::path& output);

}  // namespace weaver
