#pragma once

#include <string>

namespace dpanet::numerics::debug {

// Test-only fault injection: while a ScopedBackwardFault is alive on this
// thread, the named kernel multiplies the gradient it propagates by `factor`.
// Used as a negative control for the gradient checker.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(std::string kernel, double factor);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  std::string previous_kernel_;
  double previous_factor_;
};

/// 1.0 unless a fault is active for `kernel`.
double backward_fault_factor(const char* kernel);

}  // namespace dpanet::numerics::debug
