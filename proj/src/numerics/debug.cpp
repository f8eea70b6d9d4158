#include "dpanet/numerics/debug.hpp"

namespace dpanet::numerics::debug {

namespace {
thread_local std::string g_kernel;
thread_local double g_factor = 1.0;
}  // namespace

ScopedBackwardFault::ScopedBackwardFault(std::string kernel, double factor)
    : previous_kernel_(g_kernel), previous_factor_(g_factor) {
  g_kernel = std::move(kernel);
  g_factor = factor;
}

ScopedBackwardFault::~ScopedBackwardFault() {
  g_kernel = previous_kernel_;
  g_factor = previous_factor_;
}

double backward_fault_factor(const char* kernel) {
  if (g_kernel.empty() || g_kernel != kernel) return 1.0;
  return g_factor;
}

}  // namespace dpanet::numerics::debug
