#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace weaver {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    std::size_t size() const noexcept { return data.size(); }
    bool operator==(const Tensor&) const = default;
};

std::size_t element_count(std::span<const std::size_t> shape);

struct NamedTensor {
    std::string name;
    int layer = 0;  // 0 = embedding, 1..L encoder layers, L+1 = label head
    Tensor tensor;

    bool operator==(const NamedTensor&) const = default;
};

// Ordered collection of named tensors. Order is fixed by construction and is
// the iteration, serialization and averaging order.
class ParameterSet {
public:
    ParameterSet() = default;

    void add(std::string name, int layer, std::vector<std::size_t> shape);

    std::size_t tensor_count() const noexcept { return entries_.size(); }
    std::size_t parameter_count() const noexcept;

    NamedTensor& entry(std::size_t i) { return entries_.at(i); }
    const NamedTensor& entry(std::size_t i) const { return entries_.at(i); }

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;

    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }
    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }

    // Same names, layers and shapes in the same order.
    bool same_layout(const ParameterSet& other) const;
    ParameterSet zeros_like() const;
    bool all_finite() const;
    void fill(double value);

    // Applies fn(dst, src) element-wise over every tensor. Throws
    // StructuralError when layouts differ.
    void zip_apply(const ParameterSet& other, const std::function<void(double&, double)>& fn);

    bool operator==(const ParameterSet& other) const { return entries_ == other.entries_; }

private:
    std::vector<NamedTensor> entries_;
    std::map<std::string, std::size_t> index_;
};

void require_same_layout(const ParameterSet& a, const ParameterSet& b, const char* context);

struct FreezeMask {
    std::set<int> frozen_layers;

    bool is_frozen(int layer) const { return frozen_layers.count(layer) != 0; }

    // Embedding plus the first `encoder_layers` encoder layers; zero freezes nothing.
    static FreezeMask prefix(int encoder_layers);
    static FreezeMask all(int num_layers);
};

}  // namespace weaver
