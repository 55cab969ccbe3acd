#pragma once

#include <optional>

#include "weaver/params.hpp"

namespace weaver {

// What the trainer minimizes: mean per-token cross-entropy, optionally plus
// the diagonal-Fisher quadratic penalty (lambda/2) * sum_j F_j (theta_j - anchor_j)^2.
struct TrainingObjective {
    enum class Kind { plain, ewc };

    Kind kind = Kind::plain;
    double ewc_lambda = 0.0;
    std::optional<ParameterSet> fisher;
    std::optional<ParameterSet> anchor;

    static TrainingObjective plain() { return {}; }
    static TrainingObjective ewc(double lambda, ParameterSet fisher, ParameterSet anchor);

    // Throws StructuralError / ArgumentError if the ewc fields are missing or
    // do not match `params`.
    void validate(const ParameterSet& params) const;
};

double ewc_penalty(const ParameterSet& params, const TrainingObjective& objective);

// grad += d(penalty)/d(params) = lambda * F * (theta - anchor).
void add_ewc_gradient(const ParameterSet& params, const TrainingObjective& objective, ParameterSet& grad);

}  // namespace weaver
