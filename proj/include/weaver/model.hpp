#pragma once

// Small token tagger: token + position embedding, a stack of post-norm
// encoder layers (single-head self-attention and a GELU feed-forward block,
// each with a residual connection and layer norm), and a linear label head.
// Gradients are computed by hand; there is no autograd.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "weaver/objective.hpp"
#include "weaver/params.hpp"

namespace weaver {

inline constexpr std::size_t kMaxSequenceLength = 64;

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 16;
    std::size_t num_layers = 4;
    std::size_t hidden_dim = 32;
    std::size_t num_labels = 3;
    // 0 attends over the full sequence; w > 0 restricts attention to |i - j| <= w.
    std::size_t attention_window = 0;
    std::uint64_t seed = 0;

    bool operator==(const ModelConfig&) const = default;

    // Throws ConfigError.
    void validate() const;
    int head_layer() const noexcept { return static_cast<int>(num_layers) + 1; }
};

enum class OptimizerKind { sgd, adam };

struct Hyperparams {
    std::size_t epochs = 3;
    std::size_t batch_size = 16;
    double learning_rate = 3e-5;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::optional<double> grad_clip;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EncodedSentence {
    std::vector<int> tokens;
    std::vector<int> labels;

    bool operator==(const EncodedSentence&) const = default;
};

using Distribution = std::vector<double>;

ParameterSet init_params(const ModelConfig& config);

// Per-token label distributions. Throws InputError for empty input, ids
// outside the vocabulary, or sequences longer than kMaxSequenceLength.
std::vector<Distribution> forward(const ModelConfig& config, const ParameterSet& params,
                                  std::span<const int> token_ids);

struct LossAndGrad {
    double loss = 0.0;
    ParameterSet grad;
};

// Mean per-token cross-entropy over the batch plus the objective's penalty.
LossAndGrad loss_and_grad(const ModelConfig& config, const ParameterSet& params,
                          std::span<const EncodedSentence> batch, const TrainingObjective& objective);

// Loss only; same value as loss_and_grad(...).loss.
double batch_loss(const ModelConfig& config, const ParameterSet& params, std::span<const EncodedSentence> batch,
                  const TrainingObjective& objective);

// Gradient of the summed token cross-entropy of one sentence (the negative
// log-likelihood of its label sequence).
ParameterSet sentence_nll_grad(const ModelConfig& config, const ParameterSet& params,
                               const EncodedSentence& sentence);

// Mini-batch training. Frozen layers are left bit-identical; the optimizer
// state starts fresh on every call. When `epoch_losses` is non-null it
// receives the mean batch loss of every epoch.
ParameterSet train(const ModelConfig& config, const ParameterSet& params, std::span<const EncodedSentence> data,
                   const Hyperparams& hyper, const TrainingObjective& objective, const FreezeMask& mask,
                   std::vector<double>* epoch_losses = nullptr);

// Argmax label per position; ties resolve to the lowest label index.
std::vector<int> predict_labels(const ModelConfig& config, const ParameterSet& params,
                                std::span<const int> token_ids);

// Final encoder-layer representation of every token.
std::vector<std::vector<double>> embed_tokens(const ModelConfig& config, const ParameterSet& params,
                                              std::span<const int> token_ids);

}  // namespace weaver
