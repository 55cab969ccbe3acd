#include "weaver/cl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "weaver/error.hpp"

namespace weaver {

void Checkpoint::validate() const {
    std::size_t total = 0;
    for (const auto& h : history) {
        total += h.size;
    }
    if (total != cumulative_examples) {
        throw ValidationError(fmt::format("checkpoint: cumulative_examples {} but history sums to {}",
                                          cumulative_examples, total));
    }
    if (!params.all_finite()) {
        throw ValidationError("checkpoint: parameters contain NaN or Inf");
    }
}

Checkpoint Checkpoint::initial(const ModelConfig& config) {
    Checkpoint c;
    c.model_config = config;
    c.params = init_params(config);
    return c;
}

Trainer default_trainer() {
    return [](const ModelConfig& config, const ParameterSet& params, std::span<const EncodedSentence> data,
              const Hyperparams& hyper, const TrainingObjective& objective, const FreezeMask& mask) {
        return train(config, params, data, hyper, objective, mask);
    };
}

Hyperparams stage_hyper(const Hyperparams& hyper, std::size_t stage) {
    Hyperparams h = hyper;
    h.seed = derive_seed(hyper.seed, 0x57A6E000ULL + stage);
    return h;
}

ParameterSet weight_average(const ParameterSet& old_params, const ParameterSet& new_params, std::size_t all_data,
                            std::size_t curr_data) {
    return weight_average(old_params, new_params, all_data, curr_data, AverageOptions{}, -1);
}

ParameterSet weight_average(const ParameterSet& old_params, const ParameterSet& new_params, std::size_t all_data,
                            std::size_t curr_data, const AverageOptions& options, int head_layer) {
    require_same_layout(old_params, new_params, "weight_average");
    if (all_data == 0 || curr_data == 0) {
        throw ArgumentError("weight_average: data counts must be positive");
    }
    if (curr_data > all_data) {
        throw ArgumentError(fmt::format("weight_average: curr_data {} exceeds all_data {}", curr_data, all_data));
    }
    const double total = static_cast<double>(all_data);
    const double old_coef = static_cast<double>(all_data - curr_data) / total;
    const double new_coef = static_cast<double>(curr_data) / total;

    ParameterSet out = old_params;
    for (std::size_t i = 0; i < out.tensor_count(); ++i) {
        auto& dst = out.entry(i);
        const auto& src = new_params.entry(i).tensor.data;
        if (!options.average_head && dst.layer == head_layer) {
            dst.tensor.data = src;
            continue;
        }
        for (std::size_t j = 0; j < src.size(); ++j) {
            const double a = dst.tensor.data[j];
            const double b = src[j];
            // Equal operands stay exactly equal (frozen layers); the clamp only
            // removes last-ulp rounding outside the convex hull.
            dst.tensor.data[j] = a == b ? a : std::clamp(a * old_coef + b * new_coef, std::min(a, b), std::max(a, b));
        }
    }
    return out;
}

namespace {

void require_fresh_base(const CorpusStream& corpora, const Checkpoint& base, const char* who) {
    if (corpora.size() == 0) {
        throw ArgumentError(fmt::format("{}: no corpora", who));
    }
    if (base.cumulative_examples != 0 || !base.history.empty()) {
        throw ArgumentError(fmt::format("{}: base checkpoint must not carry training history", who));
    }
}

Checkpoint next_checkpoint(const Checkpoint& prev, ParameterSet params, const EncodedCorpus& corpus) {
    Checkpoint c;
    c.model_config = prev.model_config;
    c.params = std::move(params);
    c.history = prev.history;
    c.history.push_back(HistoryEntry{corpus.name, corpus.declared_size});
    c.cumulative_examples = prev.cumulative_examples + corpus.declared_size;
    return c;
}

}  // namespace

std::vector<Checkpoint> weaver_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx,
                                   const WeaverOptions& options) {
    require_fresh_base(corpora, base, "weaver_run");
    std::vector<Checkpoint> stages;
    const Checkpoint* prev = &base;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const EncodedCorpus& corpus = corpora.stage(i);
        const ParameterSet& start = (i == 0 || options.reinit_each_stage) ? base.params : prev->params;
        ParameterSet trained = ctx.trainer(base.model_config, start, corpus.sentences, stage_hyper(ctx.hyper, i),
                                           TrainingObjective::plain(), ctx.mask);
        if (i == 0) {
            stages.push_back(next_checkpoint(*prev, std::move(trained), corpus));
        } else {
            Checkpoint next = next_checkpoint(*prev, ParameterSet{}, corpus);
            next.params = weight_average(prev->params, trained, next.cumulative_examples, corpus.declared_size,
                                         options.average, base.model_config.head_layer());
            stages.push_back(std::move(next));
        }
        prev = &stages.back();
    }
    return stages;
}

std::vector<Checkpoint> finetune_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx) {
    require_fresh_base(corpora, base, "finetune_run");
    std::vector<Checkpoint> stages;
    const Checkpoint* prev = &base;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const EncodedCorpus& corpus = corpora.stage(i);
        ParameterSet trained = ctx.trainer(base.model_config, prev->params, corpus.sentences,
                                           stage_hyper(ctx.hyper, i), TrainingObjective::plain(), ctx.mask);
        stages.push_back(next_checkpoint(*prev, std::move(trained), corpus));
        prev = &stages.back();
    }
    return stages;
}

ParameterSet fisher_diag(const ModelConfig& config, const ParameterSet& params,
                         std::span<const EncodedSentence> corpus, std::size_t sample_count, std::uint64_t seed) {
    if (corpus.empty()) {
        throw ArgumentError("fisher_diag: empty corpus");
    }
    std::vector<std::size_t> picks(corpus.size());
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    if (sample_count > 0 && sample_count < corpus.size()) {
        Rng rng(derive_seed(seed, 0xF15E));
        shuffle(std::span<std::size_t>(picks), rng);
        picks.resize(sample_count);
        std::sort(picks.begin(), picks.end());
    }
    ParameterSet fisher = params.zeros_like();
    for (std::size_t idx : picks) {
        const ParameterSet g = sentence_nll_grad(config, params, corpus[idx]);
        fisher.zip_apply(g, [](double& f, double gj) { f += gj * gj; });
    }
    const double inv = 1.0 / static_cast<double>(picks.size());
    for (auto& e : fisher) {
        for (double& f : e.tensor.data) {
            f *= inv;
        }
    }
    return fisher;
}

std::vector<Checkpoint> ewc_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx,
                                const EwcOptions& options) {
    require_fresh_base(corpora, base, "ewc_run");
    if (!(options.lambda >= 0.0)) {
        throw ArgumentError("ewc_run: lambda must be non-negative");
    }
    std::vector<Checkpoint> stages;
    const Checkpoint* prev = &base;
    TrainingObjective objective = TrainingObjective::plain();
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const EncodedCorpus& corpus = corpora.stage(i);
        const Hyperparams hyper = stage_hyper(ctx.hyper, i);
        ParameterSet trained = ctx.trainer(base.model_config, prev->params, corpus.sentences, hyper, objective, ctx.mask);
        if (i + 1 < corpora.size()) {
            // Importance estimate for the next stage, taken while this corpus is still in hand.
            ParameterSet fisher = fisher_diag(base.model_config, trained, corpus.sentences, options.fisher_samples,
                                              hyper.seed);
            objective = TrainingObjective::ewc(options.lambda, std::move(fisher), trained);
        }
        stages.push_back(next_checkpoint(*prev, std::move(trained), corpus));
        prev = &stages.back();
    }
    return stages;
}

ReplayBuffer::ReplayBuffer(double fraction) : fraction_(fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ArgumentError("replay fraction must lie in (0, 1]");
    }
}

void ReplayBuffer::update(std::span<const EncodedSentence> current, Rng& rng) {
    const std::size_t total = seen_ + current.size();
    // Guard against 0.1 * 30 = 3.0000000000000004 style rounding.
    const double exact = fraction_ * static_cast<double>(total);
    std::size_t target = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    target = std::min(target, total);

    // Split the draw between the old buffer (uniform over earlier corpora) and
    // the current corpus in proportion to what each stands for; randomized
    // rounding keeps every seen sentence at inclusion probability target/total.
    const double old_share = static_cast<double>(target) * static_cast<double>(seen_) / static_cast<double>(total);
    std::size_t from_old = static_cast<std::size_t>(std::floor(old_share));
    if (bernoulli(rng, old_share - static_cast<double>(from_old))) {
        ++from_old;
    }
    from_old = std::min({from_old, sentences_.size(), target});
    std::size_t from_current = target - from_old;
    if (from_current > current.size()) {
        from_current = current.size();
        from_old = std::min(target - from_current, sentences_.size());
    }

    auto draw = [&rng](std::vector<std::size_t> idx, std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + uniform_index(rng, idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    };
    std::vector<std::size_t> old_idx(sentences_.size());
    std::iota(old_idx.begin(), old_idx.end(), std::size_t{0});
    std::vector<std::size_t> cur_idx(current.size());
    std::iota(cur_idx.begin(), cur_idx.end(), std::size_t{0});

    std::vector<EncodedSentence> next;
    next.reserve(target);
    for (std::size_t i : draw(std::move(old_idx), from_old)) {
        next.push_back(sentences_[i]);
    }
    for (std::size_t i : draw(std::move(cur_idx), from_current)) {
        next.push_back(current[i]);
    }
    sentences_ = std::move(next);
    seen_ = total;
}

std::vector<Checkpoint> replay_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx,
                                   const ReplayOptions& options) {
    require_fresh_base(corpora, base, "replay_run");
    ReplayBuffer buffer(options.fraction);
    Rng rng(derive_seed(options.seed, 0x4E71A));
    std::vector<Checkpoint> stages;
    const Checkpoint* prev = &base;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const EncodedCorpus& corpus = corpora.stage(i);
        const Hyperparams hyper = stage_hyper(ctx.hyper, i);
        ParameterSet trained = ctx.trainer(base.model_config, prev->params, corpus.sentences, hyper,
                                           TrainingObjective::plain(), ctx.mask);
        if (!buffer.empty() && ctx.hyper.epochs > 0) {
            Hyperparams replay_hyper = hyper;
            replay_hyper.epochs = 1;
            replay_hyper.seed = derive_seed(hyper.seed, 0x4E);
            trained = ctx.trainer(base.model_config, trained, buffer.sentences(), replay_hyper,
                                  TrainingObjective::plain(), ctx.mask);
        }
        buffer.update(corpus.sentences, rng);
        stages.push_back(next_checkpoint(*prev, std::move(trained), corpus));
        prev = &stages.back();
    }
    return stages;
}

Checkpoint mtl_run(const CorpusStream& corpora, const Checkpoint& base, const StrategyContext& ctx) {
    require_fresh_base(corpora, base, "mtl_run");
    std::vector<EncodedSentence> joint;
    Checkpoint out;
    out.model_config = base.model_config;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const EncodedCorpus& corpus = corpora.stage(i);
        joint.insert(joint.end(), corpus.sentences.begin(), corpus.sentences.end());
        out.history.push_back(HistoryEntry{corpus.name, corpus.declared_size});
        out.cumulative_examples += corpus.declared_size;
    }
    // The trainer reshuffles every epoch from the stage seed.
    out.params = ctx.trainer(base.model_config, base.params, joint, stage_hyper(ctx.hyper, 0),
                             TrainingObjective::plain(), ctx.mask);
    return out;
}

}  // namespace weaver
