#include "dpanet/parameters.hpp"

#include <cmath>

#include "dpanet/error.hpp"

namespace dpanet {

using numerics::Shape;
using numerics::Tensor;

template <typename T>
Tensor<T> ParameterList<T>::add(std::string name, Tensor<T> value) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), value});
  return value;
}

template <typename T>
const Tensor<T>* ParameterList<T>::find(const std::string& name) const {
  for (const auto& entry : entries_) {
    if (entry.name == name) return &entry.value;
  }
  return nullptr;
}

template <typename T>
Tensor<T>* ParameterList<T>::find(const std::string& name) {
  for (auto& entry : entries_) {
    if (entry.name == name) return &entry.value;
  }
  return nullptr;
}

template <typename T>
std::size_t ParameterList<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto& entry : entries_) total += entry.value.numel();
  return total;
}

template <typename T>
void ParameterList<T>::zero_grad() {
  for (auto& entry : entries_) entry.value.zero_grad();
}

template <typename T>
std::vector<std::vector<T>> ParameterList<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  out.reserve(entries_.size());
  for (const auto& entry : entries_) out.push_back(entry.value.to_vector());
  return out;
}

template <typename T>
void ParameterList<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != entries_.size()) throw DimensionError("snapshot does not match parameter list");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].value.mutable_data();
    if (dst.size() != values[i].size()) throw DimensionError("snapshot size mismatch for " + entries_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

template <typename T>
Tensor<T> Initializer<T>::fan_in_uniform(Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(numerics::shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> Initializer<T>::normal(Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(numerics::shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> Initializer<T>::constant(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value);
}

template class ParameterList<float>;
template class ParameterList<double>;
template class Initializer<float>;
template class Initializer<double>;

}  // namespace dpanet
