#include "weaver/objective.hpp"

#include <cmath>

#include "weaver/error.hpp"

namespace weaver {

TrainingObjective TrainingObjective::ewc(double lambda, ParameterSet fisher, ParameterSet anchor) {
    TrainingObjective obj;
    obj.kind = Kind::ewc;
    obj.ewc_lambda = lambda;
    obj.fisher = std::move(fisher);
    obj.anchor = std::move(anchor);
    return obj;
}

void TrainingObjective::validate(const ParameterSet& params) const {
    if (kind == Kind::plain) {
        return;
    }
    if (!(ewc_lambda >= 0.0) || !std::isfinite(ewc_lambda)) {
        throw ArgumentError("ewc lambda must be a finite non-negative number");
    }
    if (!fisher || !anchor) {
        throw StructuralError("ewc objective requires both fisher and anchor");
    }
    require_same_layout(params, *fisher, "ewc fisher");
    require_same_layout(params, *anchor, "ewc anchor");
    for (const auto& e : *fisher) {
        for (double f : e.tensor.data) {
            if (!(f >= 0.0)) {
                throw ArgumentError("fisher entries must be non-negative");
            }
        }
    }
}

double ewc_penalty(const ParameterSet& params, const TrainingObjective& objective) {
    if (objective.kind == TrainingObjective::Kind::plain) {
        return 0.0;
    }
    objective.validate(params);
    double sum = 0.0;
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        const auto& theta = params.entry(i).tensor.data;
        const auto& f = objective.fisher->entry(i).tensor.data;
        const auto& a = objective.anchor->entry(i).tensor.data;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double diff = theta[j] - a[j];
            sum += f[j] * diff * diff;
        }
    }
    return 0.5 * objective.ewc_lambda * sum;
}

void add_ewc_gradient(const ParameterSet& params, const TrainingObjective& objective, ParameterSet& grad) {
    if (objective.kind == TrainingObjective::Kind::plain) {
        return;
    }
    require_same_layout(params, grad, "ewc gradient");
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        const auto& theta = params.entry(i).tensor.data;
        const auto& f = objective.fisher->entry(i).tensor.data;
        const auto& a = objective.anchor->entry(i).tensor.data;
        auto& g = grad.entry(i).tensor.data;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            g[j] += objective.ewc_lambda * f[j] * (theta[j] - a[j]);
        }
    }
}

}  // namespace weaver
