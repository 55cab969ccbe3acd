#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "weaver/cl.hpp"
#include "weaver/data.hpp"

namespace weaver {

struct EvalCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    EvalCounts& operator+=(const EvalCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const EvalCounts&) const = default;
};

struct SpanScore {
    EvalCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

using TagSequences = std::vector<std::vector<std::string>>;

// Precision, recall and F1 from counts; each is 0 when its denominator is 0.
SpanScore score(const EvalCounts& counts);

// Exact-boundary, exact-type span matching. Throws AlignmentError when pred
// does not mirror gold sentence by sentence and token by token.
SpanScore span_f1(const Corpus& gold, const TagSequences& pred);

// Runs a model over raw corpora. Tokens beyond kMaxSequenceLength are tagged O.
class Evaluator {
public:
    Evaluator(const Vocabulary& vocab, const LabelSet& labels) : vocab_(&vocab), labels_(&labels) {}

    std::vector<std::string> predict_tags(const ModelConfig& config, const ParameterSet& params,
                                          std::span<const std::string> tokens) const;
    TagSequences predict(const ModelConfig& config, const ParameterSet& params, const Corpus& corpus) const;
    double f1(const Checkpoint& checkpoint, const Corpus& test) const;

    const Vocabulary& vocab() const { return *vocab_; }
    const LabelSet& labels() const { return *labels_; }

private:
    const Vocabulary* vocab_;
    const LabelSet* labels_;
};

struct ResultMatrix {
    std::vector<std::string> task_names;
    // r[i][j]: F1 on test set j after finishing training stage i.
    std::vector<std::vector<double>> r;
    // F1 of the untrained base model on each test set.
    std::vector<double> baseline;

    std::size_t tasks() const noexcept { return r.size(); }
    void validate() const;
};

ResultMatrix result_matrix(std::span<const Checkpoint> stages, std::span<const Corpus> test_sets,
                           const Checkpoint& base, const Evaluator& evaluator);

// (1/(T-1)) * sum_{i<T-1} (r[T-1][i] - r[i][i]); needs T >= 2.
double backward_transfer(const ResultMatrix& m);
// (1/(T-1)) * sum_{i>=1} (r[i-1][i] - baseline[i]); needs T >= 2.
double forward_transfer(const ResultMatrix& m);
// Unweighted mean of the last row.
double average_final_f1(const ResultMatrix& m);

// Index 0 is the base model; index i the checkpoint of stage i-1. All on one test set.
std::vector<double> forgetting_curve(std::span<const Checkpoint> stages, const Corpus& first_test,
                                     const Checkpoint& base, const Evaluator& evaluator);

std::vector<std::vector<double>> cross_eval_grid(std::span<const Checkpoint> models, std::span<const Corpus> test_sets,
                                                 const Evaluator& evaluator);

// {task_names, r, baseline, bwt, fwt, avg_final_f1}; bwt/fwt are null for T < 2.
nlohmann::json to_json(const ResultMatrix& m);
ResultMatrix result_matrix_from_json(const nlohmann::json& j);

}  // namespace weaver
