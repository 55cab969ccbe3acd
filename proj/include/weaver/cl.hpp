#pragma once

// Continual-learning strategies over a sequence of corpora. Every strategy
// sees the corpora through a CorpusStream and requests exactly one corpus per
// stage, in order; only MTL (the joint upper bound) reads them all at once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "weaver/data.hpp"
#include "weaver/model.hpp"
#include "weaver/objective.hpp"
#include "weaver/params.hpp"
#include "weaver/rng.hpp"

namespace weaver {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct HistoryEntry {
    std::string corpus;
    std::size_t size = 0;

    bool operator==(const HistoryEntry&) const = default;
};

struct Checkpoint {
    ModelConfig model_config;
    ParameterSet params;
    // Running total of training examples seen (sum of history sizes).
    std::size_t cumulative_examples = 0;
    std::vector<HistoryEntry> history;
    std::uint32_t format_version = kCheckpointFormatVersion;

    bool operator==(const Checkpoint&) const = default;

    // Throws ValidationError if cumulative_examples disagrees with history or
    // any parameter is non-finite.
    void validate() const;

    static Checkpoint initial(const ModelConfig& config);
};

class CorpusStream {
public:
    virtual ~CorpusStream() = default;
    virtual std::size_t size() const = 0;
    virtual const EncodedCorpus& stage(std::size_t index) const = 0;
};

class CorpusList final : public CorpusStream {
public:
    explicit CorpusList(std::span<const EncodedCorpus> corpora) : corpora_(corpora) {}

    std::size_t size() const override { return corpora_.size(); }
    const EncodedCorpus& stage(std::size_t index) const override { return corpora_[index]; }

private:
    std::span<const EncodedCorpus> corpora_;
};

using Trainer = std::function<ParameterSet(const ModelConfig&, const ParameterSet&, std::span<const EncodedSentence>,
                                           const Hyperparams&, const TrainingObjective&, const FreezeMask&)>;

// Wraps weaver::train.
Trainer default_trainer();

// Hyperparameters for stage `stage`: same values, stage-specific seed.
Hyperparams stage_hyper(const Hyperparams& hyper, std::size_t stage);

// old * (all_data - curr_data) / all_data + new * curr_data / all_data, element-wise.
ParameterSet weight_average(const ParameterSet& old_params, const ParameterSet& new_params, std::size_t all_data,
                            std::size_t curr_data);

struct AverageOptions {
    // When false the label head is taken from the newly trained model.
    bool average_head = true;
};

ParameterSet weight_average(const ParameterSet& old_params, const ParameterSet& new_params, std::size_t all_data,
                            std::size_t curr_data, const AverageOptions& options, int head_layer);

struct StrategyContext {
    Hyperparams hyper;
    FreezeMask mask;
    Trainer trainer = default_trainer();
};

struct WeaverOptions {
    // Train every stage from the base parameters instead of the running model.
    bool reinit_each_stage = false;
    AverageOptions average;
};

// Sequential fine-tuning followed by size-weighted averaging of the previous
// and the freshly trained weights. Returns one checkpoint per stage.
std::vector<Checkpoint> weaver_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx,
                                   const WeaverOptions& options = {});

std::vector<Checkpoint> finetune_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx);

// Diagonal empirical Fisher: mean over sentences of the squared gradient of
// the gold-label log-likelihood. sample_count == 0 uses the whole corpus.
ParameterSet fisher_diag(const ModelConfig& config, const ParameterSet& params,
                         std::span<const EncodedSentence> corpus, std::size_t sample_count, std::uint64_t seed);

struct EwcOptions {
    double lambda = 100.0;
    std::size_t fisher_samples = 0;
};

std::vector<Checkpoint> ewc_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx,
                                const EwcOptions& options = {});

// Holds a uniform sample of ceil(fraction * seen) of all sentences seen so far.
class ReplayBuffer {
public:
    explicit ReplayBuffer(double fraction = 0.10);

    double fraction() const noexcept { return fraction_; }
    std::size_t seen() const noexcept { return seen_; }
    const std::vector<EncodedSentence>& sentences() const noexcept { return sentences_; }
    bool empty() const noexcept { return sentences_.empty(); }

    // Resamples after a stage: the new content is a uniform draw without
    // replacement over everything seen, realized from the old buffer (itself
    // uniform over earlier corpora) and the current corpus.
    void update(std::span<const EncodedSentence> current, Rng& rng);

private:
    double fraction_;
    std::size_t seen_ = 0;
    std::vector<EncodedSentence> sentences_;
};

struct ReplayOptions {
    double fraction = 0.10;
    std::uint64_t seed = 0;
};

std::vector<Checkpoint> replay_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx,
                                   const ReplayOptions& options = {});

// One training run over the concatenation of all corpora.
Checkpoint mtl_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx);

}  // namespace weaver
