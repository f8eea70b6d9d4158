#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dpanet/numerics/tensor.hpp"

namespace dpanet {

template <typename T>
struct NamedParameter {
  std::string name;
  numerics::Tensor<T> value;
};

/// Ordered registry of trainable leaves. Modules keep shallow handles to the
/// tensors they register, so updates through either view are shared.
template <typename T>
class ParameterList {
 public:
  numerics::Tensor<T> add(std::string name, numerics::Tensor<T> value);

  const std::vector<NamedParameter<T>>& entries() const { return entries_; }
  std::vector<NamedParameter<T>>& entries() { return entries_; }
  const numerics::Tensor<T>* find(const std::string& name) const;
  numerics::Tensor<T>* find(const std::string& name);

  /// Total number of scalars.
  std::size_t scalar_count() const;
  void zero_grad();

  /// Deep copy of every parameter's values, in registration order.
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

 private:
  std::vector<NamedParameter<T>> entries_;
};

/// Deterministic initializers drawing from one seeded engine.
template <typename T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  numerics::Tensor<T> fan_in_uniform(numerics::Shape shape, std::size_t fan_in);
  numerics::Tensor<T> normal(numerics::Shape shape, double stddev);
  numerics::Tensor<T> constant(numerics::Shape shape, T value);

 private:
  std::mt19937_64 rng_;
};

}  // namespace dpanet
