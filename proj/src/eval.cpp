#include "weaver/eval.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "weaver/error.hpp"

namespace weaver {

SpanScore score(const EvalCounts& counts) {
    SpanScore s;
    s.counts = counts;
    const auto tp = static_cast<double>(counts.tp);
    if (counts.tp + counts.fp > 0) {
        s.precision = tp / static_cast<double>(counts.tp + counts.fp);
    }
    if (counts.tp + counts.fn > 0) {
        s.recall = tp / static_cast<double>(counts.tp + counts.fn);
    }
    if (s.precision + s.recall > 0.0) {
        s.f1 = 2.0 * (s.precision * s.recall) / (s.precision + s.recall);
    }
    return s;
}

SpanScore span_f1(const Corpus& gold, const TagSequences& pred) {
    if (pred.size() != gold.sentences.size()) {
        throw AlignmentError(fmt::format("{} predicted sentences for {} gold sentences", pred.size(),
                                         gold.sentences.size()));
    }
    EvalCounts counts;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        const auto& g = gold.sentences[s].tags;
        const auto& p = pred[s];
        if (g.size() != p.size()) {
            throw AlignmentError(fmt::format("sentence {}: {} predicted tags for {} gold tags", s, p.size(), g.size()));
        }
        // Both span lists come out sorted by begin, so a merge walk suffices.
        const auto gold_spans = extract_spans(g);
        const auto pred_spans = extract_spans(p);
        std::size_t gi = 0;
        std::size_t pi = 0;
        std::size_t matched = 0;
        while (gi < gold_spans.size() && pi < pred_spans.size()) {
            if (gold_spans[gi] == pred_spans[pi]) {
                ++matched;
                ++gi;
                ++pi;
            } else if (gold_spans[gi] < pred_spans[pi]) {
                ++gi;
            } else {
                ++pi;
            }
        }
        counts.tp += matched;
        counts.fp += pred_spans.size() - matched;
        counts.fn += gold_spans.size() - matched;
    }
    return score(counts);
}

std::vector<std::string> Evaluator::predict_tags(const ModelConfig& config, const ParameterSet& params,
                                                 std::span<const std::string> tokens) const {
    std::vector<std::string> tags(tokens.size(), "O");
    if (tokens.empty()) {
        return tags;
    }
    const std::size_t n = std::min(tokens.size(), kMaxSequenceLength);
    const auto ids = encode_tokens(tokens.first(n), *vocab_);
    const auto labels = predict_labels(config, params, ids);
    for (std::size_t i = 0; i < n; ++i) {
        tags[i] = labels_->tag(labels[i]);
    }
    return tags;
}

TagSequences Evaluator::predict(const ModelConfig& config, const ParameterSet& params, const Corpus& corpus) const {
    TagSequences out;
    out.reserve(corpus.sentences.size());
    for (const auto& s : corpus.sentences) {
        out.push_back(predict_tags(config, params, s.tokens));
    }
    return out;
}

double Evaluator::f1(const Checkpoint& checkpoint, const Corpus& test) const {
    return span_f1(test, predict(checkpoint.model_config, checkpoint.params, test)).f1;
}

void ResultMatrix::validate() const {
    const std::size_t t = r.size();
    if (baseline.size() != t || task_names.size() != t) {
        throw ArgumentError("result matrix: baseline and task names must have one entry per task");
    }
    for (const auto& row : r) {
        if (row.size() != t) {
            throw ArgumentError("result matrix must be square");
        }
        for (double v : row) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ArgumentError("result matrix entries must lie in [0, 1]");
            }
        }
    }
}

ResultMatrix result_matrix(std::span<const Checkpoint> stages, std::span<const Corpus> test_sets,
                           const Checkpoint& base, const Evaluator& evaluator) {
    if (stages.size() != test_sets.size() || stages.empty()) {
        throw ArgumentError(fmt::format("result_matrix: {} stages but {} test sets", stages.size(), test_sets.size()));
    }
    ResultMatrix m;
    const std::size_t t = stages.size();
    m.r.assign(t, std::vector<double>(t, 0.0));
    for (std::size_t j = 0; j < t; ++j) {
        m.task_names.push_back(test_sets[j].name);
        m.baseline.push_back(evaluator.f1(base, test_sets[j]));
    }
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
            m.r[i][j] = evaluator.f1(stages[i], test_sets[j]);
        }
    }
    return m;
}

double backward_transfer(const ResultMatrix& m) {
    const std::size_t t = m.tasks();
    if (t < 2) {
        throw ArgumentError("backward transfer needs at least two tasks");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < t; ++i) {
        sum += m.r[t - 1][i] - m.r[i][i];
    }
    return sum / static_cast<double>(t - 1);
}

double forward_transfer(const ResultMatrix& m) {
    const std::size_t t = m.tasks();
    if (t < 2) {
        throw ArgumentError("forward transfer needs at least two tasks");
    }
    if (m.baseline.size() != t) {
        throw ArgumentError("forward transfer needs one baseline value per task");
    }
    double sum = 0.0;
    for (std::size_t i = 1; i < t; ++i) {
        sum += m.r[i - 1][i] - m.baseline[i];
    }
    return sum / static_cast<double>(t - 1);
}

double average_final_f1(const ResultMatrix& m) {
    if (m.tasks() == 0) {
        throw ArgumentError("empty result matrix");
    }
    const auto& last = m.r.back();
    double sum = 0.0;
    for (double v : last) {
        sum += v;
    }
    return sum / static_cast<double>(last.size());
}

std::vector<double> forgetting_curve(std::span<const Checkpoint> stages, const Corpus& first_test,
                                     const Checkpoint& base, const Evaluator& evaluator) {
    if (stages.empty()) {
        throw ArgumentError("forgetting curve needs at least one stage");
    }
    std::vector<double> curve;
    curve.push_back(evaluator.f1(base, first_test));
    for (const auto& c : stages) {
        curve.push_back(evaluator.f1(c, first_test));
    }
    return curve;
}

std::vector<std::vector<double>> cross_eval_grid(std::span<const Checkpoint> models, std::span<const Corpus> test_sets,
                                                 const Evaluator& evaluator) {
    if (models.size() != test_sets.size() || models.empty()) {
        throw ArgumentError(fmt::format("cross_eval_grid: {} models but {} test sets", models.size(), test_sets.size()));
    }
    std::vector<std::vector<double>> grid(models.size(), std::vector<double>(test_sets.size(), 0.0));
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = 0; j < test_sets.size(); ++j) {
            grid[i][j] = evaluator.f1(models[i], test_sets[j]);
        }
    }
    return grid;
}

nlohmann::json to_json(const ResultMatrix& m) {
    nlohmann::json j;
    j["task_names"] = m.task_names;
    j["r"] = m.r;
    j["baseline"] = m.baseline;
    if (m.tasks() >= 2) {
        j["bwt"] = backward_transfer(m);
        j["fwt"] = forward_transfer(m);
    } else {
        j["bwt"] = nullptr;
        j["fwt"] = nullptr;
    }
    j["avg_final_f1"] = average_final_f1(m);
    return j;
}

ResultMatrix result_matrix_from_json(const nlohmann::json& j) {
    ResultMatrix m;
    try {
        m.task_names = j.at("task_names").get<std::vector<std::string>>();
        m.r = j.at("r").get<std::vector<std::vector<double>>>();
        m.baseline = j.at("baseline").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(fmt::format("result matrix JSON: {}", e.what()));
    }
    m.validate();
    return m;
}

}  // namespace weaver
