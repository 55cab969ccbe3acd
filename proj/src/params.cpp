#include "weaver/params.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "weaver/error.hpp"

namespace weaver {

std::size_t element_count(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void ParameterSet::add(std::string name, int layer, std::vector<std::size_t> shape) {
    if (index_.count(name) != 0) {
        throw StructuralError(fmt::format("duplicate tensor name '{}'", name));
    }
    const std::size_t n = element_count(shape);
    index_.emplace(name, entries_.size());
    entries_.push_back(NamedTensor{std::move(name), layer, Tensor{std::move(shape), std::vector<double>(n, 0.0)}});
}

std::size_t ParameterSet::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e.tensor.size();
    }
    return n;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw StructuralError(fmt::format("no tensor named '{}'", name));
    }
    return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
    return entries_[index_of(name)].tensor;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    return entries_[index_of(name)].tensor;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.layer != b.layer || a.tensor.shape != b.tensor.shape) {
            return false;
        }
    }
    return true;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out = *this;
    out.fill(0.0);
    return out;
}

bool ParameterSet::all_finite() const {
    for (const auto& e : entries_) {
        for (double v : e.tensor.data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
    }
    return true;
}

void ParameterSet::fill(double value) {
    for (auto& e : entries_) {
        std::fill(e.tensor.data.begin(), e.tensor.data.end(), value);
    }
}

void ParameterSet::zip_apply(const ParameterSet& other, const std::function<void(double&, double)>& fn) {
    require_same_layout(*this, other, "zip_apply");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& dst = entries_[i].tensor.data;
        const auto& src = other.entries_[i].tensor.data;
        for (std::size_t j = 0; j < dst.size(); ++j) {
            fn(dst[j], src[j]);
        }
    }
}

void require_same_layout(const ParameterSet& a, const ParameterSet& b, const char* context) {
    if (!a.same_layout(b)) {
        throw StructuralError(fmt::format("{}: parameter layouts differ", context));
    }
}

FreezeMask FreezeMask::prefix(int encoder_layers) {
    FreezeMask mask;
    if (encoder_layers > 0) {
        for (int i = 0; i <= encoder_layers; ++i) {
            mask.frozen_layers.insert(i);
        }
    }
    return mask;
}

FreezeMask FreezeMask::all(int num_layers) {
    FreezeMask mask;
    for (int i = 0; i <= num_layers + 1; ++i) {
        mask.frozen_layers.insert(i);
    }
    return mask;
}

}  // namespace weaver
