#include "dpanet/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>

#include "dpanet/error.hpp"
#include "dpanet/numerics/debug.hpp"
#include "dpanet/numerics/spectrum.hpp"

namespace dpanet::numerics {

namespace {

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw PreconditionError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
detail::Node<T>* grad_target(detail::Node<T>& self, std::size_t i) {
  auto* parent = self.parents[i].get();
  return parent->requires_grad ? parent : nullptr;
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> index_a;
  std::vector<std::size_t> index_b;
};

std::shared_ptr<BroadcastPlan> broadcast_plan(const Shape& a, const Shape& b, const char* op,
                                              bool force_maps = false) {
  auto plan = std::make_shared<BroadcastPlan>();
  if (a == b && !force_maps) {
    plan->out = a;
    plan->same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  plan->out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      plan->out[i] = pa[i];
    } else if (pa[i] == 1) {
      plan->out[i] = pb[i];
    } else {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
  }
  std::vector<std::size_t> stride_a(rank, 0), stride_b(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    stride_a[i] = pa[i] == 1 ? 0 : sa;
    stride_b[i] = pb[i] == 1 ? 0 : sb;
    sa *= pa[i];
    sb *= pb[i];
  }
  const std::size_t total = shape_numel(plan->out);
  plan->index_a.resize(total);
  plan->index_b.resize(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    plan->index_a[flat] = ia;
    plan->index_b[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      ia += stride_a[d];
      ib += stride_b[d];
      if (counter[d] < plan->out[d]) break;
      ia -= stride_a[d] * counter[d];
      ib -= stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
  return plan;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa, DB dfb) {
  auto plan = broadcast_plan(a.shape(), b.shape(), name);
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t total = shape_numel(plan->out);
  std::vector<T> out(total);
  if (plan->same) {
    for (std::size_t i = 0; i < total; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < total; ++i) out[i] = f(av[plan->index_a[i]], bv[plan->index_b[i]]);
  }
  return make_result<T>(plan->out, std::move(out), {&a, &b}, name,
                        [plan, dfa, dfb](detail::Node<T>& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    const auto& g = self.grad;
    auto* na = grad_target(self, 0);
    auto* nb = grad_target(self, 1);
    const std::size_t total = g.size();
    if (na) {
      auto& ga = na->ensure_grad();
      for (std::size_t i = 0; i < total; ++i) {
        const std::size_t ia = plan->same ? i : plan->index_a[i];
        const std::size_t ib = plan->same ? i : plan->index_b[i];
        ga[ia] += g[i] * dfa(x[ia], y[ib], self.data[i]);
      }
    }
    if (nb) {
      auto& gb = nb->ensure_grad();
      for (std::size_t i = 0; i < total; ++i) {
        const std::size_t ia = plan->same ? i : plan->index_a[i];
        const std::size_t ib = plan->same ? i : plan->index_b[i];
        gb[ib] += g[i] * dfb(x[ia], y[ib], self.data[i]);
      }
    }
  });
}

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, F f, DF df) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, name, [df](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    const auto& xin = nx->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xin[i], self.data[i]);
  });
}

// ---------------------------------------------------------------------------
// GEMM kernels (row-major, C += op(A) op(B))
// ---------------------------------------------------------------------------

// Dot product with eight independent partial sums so the loop vectorizes
// without reassociation flags; the summation order is fixed.
template <typename T>
T dot(const T* a, const T* b, std::size_t k) {
  T acc[8] = {};
  std::size_t p = 0;
  for (; p + 8 <= k; p += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[p + l] * b[p + l];
  }
  T total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; p < k; ++p) total += a[p] * b[p];
  return total;
}

// C[m,n] += A[m,k] B[n,k]^T, B given row-major as (n, k).
template <typename T>
void gemm_dot(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* bt, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += dot(arow, bt + j * k, k);
  }
}

// Narrow outputs with a long inner dimension are faster as row dot products.
inline bool prefer_dot(std::size_t n, std::size_t k) { return n < 16 && k >= 32; }

// C[m,n] += A[m,k] B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::vector<T>& scratch) {
  if (prefer_dot(n, k)) {
    scratch.resize(k * n);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < n; ++j) scratch[j * k + p] = b[p * n + j];
    }
    gemm_dot(m, n, k, a, scratch.data(), c);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             std::vector<T>& scratch) {
  if (prefer_dot(n, k)) {
    gemm_dot(m, n, k, a, b, c);
    return;
  }
  scratch.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  }
  std::vector<T> unused;
  gemm_nn(m, n, k, a, scratch.data(), c, unused);
}

// C[m,n] += A[k,m]^T B[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Visits (out_flat, in_flat) for a permutation with output extents `out` and
// input strides already reordered to output axis order.
template <typename Fn>
void for_each_permuted(const Shape& out, const std::vector<std::size_t>& in_strides, Fn fn) {
  const std::size_t rank = out.size();
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, src);
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += in_strides[d];
      if (counter[d] < out[d]) break;
      src -= in_strides[d] * counter[d];
      counter[d] = 0;
    }
  }
}

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() < rank) {
    throw DimensionError(std::string(op) + " needs rank >= " + std::to_string(rank) + ", got " +
                         shape_str(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
                   [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
                   [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
                   [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
                   [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary_op(x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary_op(x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary_op(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_op(x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary_op(
      x, "gelu",
      [](T v) { return static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2))); },
      [](T v, T) {
        const double d = static_cast<double>(v);
        return static_cast<T>(0.5 * (1.0 + std::erf(d * inv_sqrt2)) + d * inv_sqrt_2pi * std::exp(-0.5 * d * d));
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xv = x.data();
  double acc = 0.0;
  for (auto v : xv) acc += static_cast<double>(v);
  return make_result<T>({}, {static_cast<T>(acc)}, {&x}, "sum", [](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (auto& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto xv = x.data();
  double acc = 0.0;
  for (auto v : xv) acc += static_cast<double>(v);
  const double n = static_cast<double>(xv.size());
  return make_result<T>({}, {static_cast<T>(acc / n)}, {&x}, "mean", [n](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    const T share = static_cast<T>(static_cast<double>(self.grad[0]) / n);
    for (auto& g : gx) g += share;
  });
}

namespace {

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, int axis, bool keepdim, bool average) {
  const std::size_t a = normalize_axis(axis, x.dim());
  const auto split = split_at(x.shape(), a);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[a] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(a));
  }
  const T factor = average ? T(1) / static_cast<T>(split.extent) : T(1);
  const auto xv = x.data();
  std::vector<T> out(split.outer * split.inner, T(0));
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t e = 0; e < split.extent; ++e) {
      const T* src = xv.data() + (o * split.extent + e) * split.inner;
      T* dst = out.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v *= factor;
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, average ? "mean_axis" : "sum_axis",
                        [split, factor](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o) {
      const T* g = self.grad.data() + o * split.inner;
      for (std::size_t e = 0; e < split.extent; ++e) {
        T* dst = gx.data() + (o * split.extent + e) * split.inner;
        for (std::size_t i = 0; i < split.inner; ++i) dst[i] += g[i] * factor;
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, false);
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, true);
}

// ---------------------------------------------------------------------------
// Linear algebra and layout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(sa) + " x " + shape_str(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  std::shared_ptr<BroadcastPlan> plan;
  try {
    plan = broadcast_plan(batch_a, batch_b, "matmul", true);
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not broadcastable");
  }
  const std::size_t batches = shape_numel(plan->out);
  Shape out_shape = plan->out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batches * m * n, T(0));
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> scratch;
  for (std::size_t bi = 0; bi < batches; ++bi) {
    gemm_nn(m, n, k, av.data() + plan->index_a[bi] * m * k, bv.data() + plan->index_b[bi] * k * n,
            out.data() + bi * m * n, scratch);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&a, &b}, "matmul",
                        [plan, m, n, k, batches](detail::Node<T>& self) {
    auto* na = grad_target(self, 0);
    auto* nb = grad_target(self, 1);
    std::vector<T> scratch;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const T* g = self.grad.data() + bi * m * n;
      if (na) {
        auto& ga = na->ensure_grad();
        gemm_nt(m, k, n, g, self.parents[1]->data.data() + plan->index_b[bi] * k * n,
                ga.data() + plan->index_a[bi] * m * k, scratch);
      }
      if (nb) {
        auto& gb = nb->ensure_grad();
        gemm_tn(k, n, m, self.parents[0]->data.data() + plan->index_a[bi] * m * k, g,
                gb.data() + plan->index_b[bi] * k * n);
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x.shape(), 1, "linear");
  if (weight.dim() != 2 || weight.shape()[0] != x.shape().back()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t in = weight.shape()[0];
  const std::size_t out_features = weight.shape()[1];
  const bool has_bias = bias.defined();
  if (has_bias && (bias.dim() != 1 || bias.shape()[0] != out_features)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  std::vector<T> out(rows * out_features, T(0));
  if (has_bias) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_features));
  }
  std::vector<T> scratch;
  gemm_nn(rows, out_features, in, x.data().data(), weight.data().data(), out.data(), scratch);
  auto backward = [rows, in, out_features, has_bias](detail::Node<T>& self) {
    const T* g = self.grad.data();
    if (auto* nx = grad_target(self, 0)) {
      std::vector<T> scratch;
      gemm_nt(rows, in, out_features, g, self.parents[1]->data.data(), nx->ensure_grad().data(), scratch);
    }
    if (auto* nw = grad_target(self, 1)) {
      gemm_tn(in, out_features, rows, self.parents[0]->data.data(), g, nw->ensure_grad().data());
    }
    if (has_bias) {
      if (auto* nb = grad_target(self, 2)) {
        auto& gb = nb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < out_features; ++j) gb[j] += g[r * out_features + j];
        }
      }
    }
  };
  if (has_bias) return make_result<T>(std::move(out_shape), std::move(out), {&x, &weight, &bias}, "linear", backward);
  return make_result<T>(std::move(out_shape), std::move(out), {&x, &weight}, "linear", backward);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_result<T>(std::move(shape), x.to_vector(), {&x}, "reshape", [](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const auto& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (order.size() != rank) throw DimensionError("permute: order rank mismatch for " + shape_str(in_shape));
  std::vector<bool> seen(rank, false);
  for (auto axis : order) {
    if (axis >= rank || seen[axis]) throw PreconditionError("permute: invalid axis order");
    seen[axis] = true;
  }
  std::vector<std::size_t> in_strides(rank);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = stride;
    stride *= in_shape[i];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> permuted_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    permuted_strides[i] = in_strides[order[i]];
  }
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for_each_permuted(out_shape, permuted_strides, [&](std::size_t dst, std::size_t src) { out[dst] = xv[src]; });
  Shape captured_shape = out_shape;
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "permute",
                        [captured_shape, permuted_strides](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for_each_permuted(captured_shape, permuted_strides,
                      [&](std::size_t dst, std::size_t src) { gx[src] += self.grad[dst]; });
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
  const std::size_t a = normalize_axis(axis0, x.dim());
  const std::size_t b = normalize_axis(axis1, x.dim());
  std::vector<std::size_t> order(x.dim());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[a], order[b]);
  return permute(x, order);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw PreconditionError("concat of zero tensors");
  const std::size_t a = normalize_axis(axis, parts.front().dim());
  Shape out_shape = parts.front().shape();
  std::vector<std::size_t> extents;
  std::size_t total_extent = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != a && probe[i] != out_shape[i]) {
        throw DimensionError("concat: shapes " + shape_str(out_shape) + " and " + shape_str(probe) +
                             " differ off the concat axis");
      }
    }
    extents.push_back(probe[a]);
    total_extent += probe[a];
  }
  out_shape[a] = total_extent;
  const auto split = split_at(out_shape, a);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pv = parts[pi].data();
    const std::size_t chunk = extents[pi] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * total_extent * split.inner + offset * split.inner);
    }
    offset += extents[pi];
  }
  return make_result<T>(std::move(out_shape), std::move(out), parts, "concat",
                        [split, extents, total_extent](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < extents.size(); ++pi) {
      const std::size_t chunk = extents[pi] * split.inner;
      if (auto* np = grad_target(self, pi)) {
        auto& gp = np->ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o) {
          const T* src = self.grad.data() + o * total_extent * split.inner + offset * split.inner;
          T* dst = gp.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += extents[pi];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t a = normalize_axis(axis, x.dim());
  const auto split = split_at(x.shape(), a);
  if (length == 0 || start + length > split.extent) {
    throw PreconditionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[a] = length;
  const auto xv = x.data();
  const std::size_t chunk = length * split.inner;
  std::vector<T> out(split.outer * chunk);
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(xv.data() + (o * split.extent + start) * split.inner, chunk, out.data() + o * chunk);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "slice",
                        [split, start, chunk](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o) {
      T* dst = gx.data() + (o * split.extent + start) * split.inner;
      const T* src = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Network kernels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t a = normalize_axis(axis, x.dim());
  const auto split = split_at(x.shape(), a);
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      T peak = xv[base];
      for (std::size_t e = 1; e < split.extent; ++e) peak = std::max(peak, xv[base + e * split.inner]);
      T total = T(0);
      for (std::size_t e = 0; e < split.extent; ++e) {
        const T v = std::exp(xv[base + e * split.inner] - peak);
        out[base + e * split.inner] = v;
        total += v;
      }
      const T inv = T(1) / total;
      for (std::size_t e = 0; e < split.extent; ++e) out[base + e * split.inner] *= inv;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, "softmax", [split](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    const T fault = static_cast<T>(debug::backward_fault_factor("softmax"));
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        const std::size_t base = o * split.extent * split.inner + i;
        T dot = T(0);
        for (std::size_t e = 0; e < split.extent; ++e) {
          const std::size_t idx = base + e * split.inner;
          dot += g[idx] * y[idx];
        }
        for (std::size_t e = 0; e < split.extent; ++e) {
          const std::size_t idx = base + e * split.inner;
          gx[idx] += fault * y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_rank(x.shape(), 1, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " +
                         shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  if (!(eps > T(0))) throw PreconditionError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  auto normalized = std::make_shared<std::vector<T>>(xv.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += static_cast<double>(row[j]);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = static_cast<double>(row[j]) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*rstd)[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = static_cast<T>((static_cast<double>(row[j]) - mu) * inv);
      (*normalized)[r * d + j] = xhat;
      out[r * d + j] = gv[j] * xhat + bv[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &gain, &bias}, "layer_norm",
                        [normalized, rstd, rows, d](detail::Node<T>& self) {
    const auto& g = self.grad;
    const auto& xhat = *normalized;
    const auto& gain_v = self.parents[1]->data;
    if (auto* nx = grad_target(self, 0)) {
      auto& gx = nx->ensure_grad();
      const T inv_d = T(1) / static_cast<T>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T sum_dxhat = T(0);
        T sum_dxhat_xhat = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          const T dxhat = g[r * d + j] * gain_v[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          const T dxhat = g[r * d + j] * gain_v[j];
          gx[r * d + j] += (*rstd)[r] * inv_d *
                           (static_cast<T>(d) * dxhat - sum_dxhat - xhat[r * d + j] * sum_dxhat_xhat);
        }
      }
    }
    if (auto* ng = grad_target(self, 1)) {
      auto& gg = ng->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
    }
    if (auto* nb = grad_target(self, 2)) {
      auto& gb = nb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    }
  });
}

template <typename T>
Tensor<T> avg_pool1d(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "avg_pool1d");
  const auto split = split_at(x.shape(), x.dim() - 2);
  const std::size_t length = split.extent;
  const std::size_t channels = split.inner;
  if (length % 2 != 0) {
    throw PreconditionError("avg_pool1d requires an even sequence length, got " + std::to_string(length));
  }
  const std::size_t half = length / 2;
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = half;
  const auto xv = x.data();
  std::vector<T> out(split.outer * half * channels);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t t = 0; t < half; ++t) {
      const T* first = xv.data() + (o * length + 2 * t) * channels;
      const T* second = first + channels;
      T* dst = out.data() + (o * half + t) * channels;
      for (std::size_t c = 0; c < channels; ++c) dst[c] = (first[c] + second[c]) * T(0.5);
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "avg_pool1d",
                        [split, half, channels](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t t = 0; t < half; ++t) {
        const T* g = self.grad.data() + (o * half + t) * channels;
        T* first = gx.data() + (o * 2 * half + 2 * t) * channels;
        T* second = first + channels;
        for (std::size_t c = 0; c < channels; ++c) {
          first[c] += g[c] * T(0.5);
          second[c] += g[c] * T(0.5);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> upsample_linear(const Tensor<T>& x, std::size_t target_len) {
  require_rank(x.shape(), 2, "upsample_linear");
  const auto split = split_at(x.shape(), x.dim() - 2);
  const std::size_t length = split.extent;
  const std::size_t width = split.inner;
  if (target_len != 2 * length) {
    throw PreconditionError("upsample_linear doubles the length: expected target " +
                            std::to_string(2 * length) + ", got " + std::to_string(target_len));
  }
  struct Tap {
    std::size_t lo;
    std::size_t hi;
    T weight;
  };
  auto taps = std::make_shared<std::vector<Tap>>(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    if (length == 1) {
      (*taps)[i] = {0, 0, T(0)};
      continue;
    }
    // Align corners: output i sits at input position i (L - 1) / (2L - 1).
    const std::size_t num = i * (length - 1);
    const std::size_t den = target_len - 1;
    const std::size_t lo = num / den;
    const std::size_t hi = std::min(lo + 1, length - 1);
    const T w = static_cast<T>(static_cast<double>(num % den) / static_cast<double>(den));
    (*taps)[i] = {lo, hi, w};
  }
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = target_len;
  const auto xv = x.data();
  std::vector<T> out(split.outer * target_len * width);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < target_len; ++i) {
      const auto& tap = (*taps)[i];
      const T* lo = xv.data() + (o * length + tap.lo) * width;
      const T* hi = xv.data() + (o * length + tap.hi) * width;
      T* dst = out.data() + (o * target_len + i) * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] = (T(1) - tap.weight) * lo[j] + tap.weight * hi[j];
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "upsample_linear",
                        [taps, split, length, width, target_len](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < target_len; ++i) {
        const auto& tap = (*taps)[i];
        const T* g = self.grad.data() + (o * target_len + i) * width;
        T* lo = gx.data() + (o * length + tap.lo) * width;
        T* hi = gx.data() + (o * length + tap.hi) * width;
        for (std::size_t j = 0; j < width; ++j) {
          lo[j] += (T(1) - tap.weight) * g[j];
          hi[j] += tap.weight * g[j];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> rfft(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "rfft");
  const auto split = split_at(x.shape(), x.dim() - 2);
  const std::size_t length = split.extent;
  const std::size_t channels = split.inner;
  if (length < 2) throw PreconditionError("rfft requires a sequence length >= 2");
  const std::size_t bins = rfft_bins(length);
  const bool even = length % 2 == 0;
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  out_shape.push_back(bins);
  out_shape.push_back(channels);
  out_shape.push_back(2);
  const auto& table = dft_table(length);
  const auto xv = x.data();
  std::vector<T> out(split.outer * bins * channels * 2);
  std::vector<double> re(channels), im(channels);
  for (std::size_t o = 0; o < split.outer; ++o) {
    const T* series = xv.data() + o * length * channels;
    for (std::size_t k = 0; k < bins; ++k) {
      std::fill(re.begin(), re.end(), 0.0);
      std::fill(im.begin(), im.end(), 0.0);
      std::size_t phase = 0;
      for (std::size_t n = 0; n < length; ++n) {
        const double cs = table.cos[phase];
        const double sn = table.sin[phase];
        const T* row = series + n * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          re[c] += static_cast<double>(row[c]) * cs;
          im[c] -= static_cast<double>(row[c]) * sn;
        }
        phase += k;
        if (phase >= length) phase -= length;
      }
      const bool real_bin = k == 0 || (even && k == bins - 1);
      T* dst = out.data() + ((o * bins + k) * channels) * 2;
      for (std::size_t c = 0; c < channels; ++c) {
        dst[2 * c] = static_cast<T>(re[c]);
        dst[2 * c + 1] = real_bin ? T(0) : static_cast<T>(im[c]);
      }
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "rfft",
                        [split, length, channels, bins, even](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    const auto& table = dft_table(length);
    std::vector<double> acc(channels);
    for (std::size_t o = 0; o < split.outer; ++o) {
      const T* g = self.grad.data() + o * bins * channels * 2;
      for (std::size_t n = 0; n < length; ++n) {
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t phase = 0;
        for (std::size_t k = 0; k < bins; ++k) {
          const bool real_bin = k == 0 || (even && k == bins - 1);
          const double cs = table.cos[phase];
          const double sn = real_bin ? 0.0 : table.sin[phase];
          const T* gk = g + k * channels * 2;
          for (std::size_t c = 0; c < channels; ++c) {
            acc[c] += static_cast<double>(gk[2 * c]) * cs - static_cast<double>(gk[2 * c + 1]) * sn;
          }
          phase += n;
          if (phase >= length) phase -= length;
        }
        T* dst = gx.data() + (o * length + n) * channels;
        for (std::size_t c = 0; c < channels; ++c) dst[c] += static_cast<T>(acc[c]);
      }
    }
  });
}

template <typename T>
Tensor<T> irfft(const Tensor<T>& spectrum, std::size_t length) {
  require_rank(spectrum.shape(), 3, "irfft");
  const auto& s = spectrum.shape();
  if (s.back() != 2) throw DimensionError("irfft: last axis must hold (re, im), got " + shape_str(s));
  const std::size_t bins = s[s.size() - 3];
  const std::size_t channels = s[s.size() - 2];
  if (length < 2 || bins != rfft_bins(length)) {
    throw MalformedSpectrumError("irfft: " + std::to_string(bins) + " bins cannot come from length " +
                                 std::to_string(length));
  }
  const std::size_t outer = spectrum.numel() / (bins * channels * 2);
  const bool even = length % 2 == 0;
  const std::size_t last_interior = (length - 1) / 2;
  const double inv_len = 1.0 / static_cast<double>(length);
  Shape out_shape(s.begin(), s.end() - 3);
  out_shape.push_back(length);
  out_shape.push_back(channels);
  const auto& table = dft_table(length);
  const auto sv = spectrum.data();
  std::vector<T> out(outer * length * channels);
  std::vector<double> acc(channels);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* spec = sv.data() + o * bins * channels * 2;
    for (std::size_t n = 0; n < length; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        acc[c] = static_cast<double>(spec[2 * c]);
        if (even) {
          const double nyq = static_cast<double>(spec[((bins - 1) * channels + c) * 2]);
          acc[c] += (n % 2 == 0) ? nyq : -nyq;
        }
      }
      std::size_t phase = n;
      for (std::size_t k = 1; k <= last_interior; ++k) {
        const double cs = 2.0 * table.cos[phase];
        const double sn = 2.0 * table.sin[phase];
        const T* sk = spec + k * channels * 2;
        for (std::size_t c = 0; c < channels; ++c) {
          acc[c] += static_cast<double>(sk[2 * c]) * cs - static_cast<double>(sk[2 * c + 1]) * sn;
        }
        phase += n;
        if (phase >= length) phase -= length;
      }
      T* dst = out.data() + (o * length + n) * channels;
      for (std::size_t c = 0; c < channels; ++c) dst[c] = static_cast<T>(acc[c] * inv_len);
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&spectrum}, "irfft",
                        [outer, length, channels, bins, last_interior, inv_len](detail::Node<T>& self) {
    auto* ns = grad_target(self, 0);
    if (!ns) return;
    auto& gs = ns->ensure_grad();
    const auto& table = dft_table(length);
    std::vector<double> re(channels), im(channels);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* g = self.grad.data() + o * length * channels;
      T* dst = gs.data() + o * bins * channels * 2;
      for (std::size_t k = 0; k < bins; ++k) {
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        const bool interior = k >= 1 && k <= last_interior;
        std::size_t phase = 0;
        for (std::size_t n = 0; n < length; ++n) {
          const T* gn = g + n * channels;
          if (interior) {
            const double cs = table.cos[phase];
            const double sn = table.sin[phase];
            for (std::size_t c = 0; c < channels; ++c) {
              re[c] += static_cast<double>(gn[c]) * cs;
              im[c] -= static_cast<double>(gn[c]) * sn;
            }
          } else {
            // DC, or Nyquist for even L: weights 1 and (-1)^n.
            const double sign = (k == 0 || n % 2 == 0) ? 1.0 : -1.0;
            for (std::size_t c = 0; c < channels; ++c) re[c] += sign * static_cast<double>(gn[c]);
          }
          phase += k;
          if (phase >= length) phase -= length;
        }
        const double weight = (interior ? 2.0 : 1.0) * inv_len;
        for (std::size_t c = 0; c < channels; ++c) {
          dst[(k * channels + c) * 2] += static_cast<T>(re[c] * weight);
          if (interior) dst[(k * channels + c) * 2 + 1] += static_cast<T>(im[c] * weight);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw PreconditionError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const T scale_kept = static_cast<T>(1.0 / keep);
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  for (auto& m : *mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < keep ? scale_kept : T(0);
  }
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return make_result<T>(x.shape(), std::move(out), {&x}, "dropout", [mask](detail::Node<T>& self) {
    auto* nx = grad_target(self, 0);
    if (!nx) return;
    auto& gx = nx->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
  });
}

#define DPANET_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> square(const Tensor<T>&);                                                 \
  template Tensor<T> sqrt(const Tensor<T>&);                                                   \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> sum_axis(const Tensor<T>&, int, bool);                                    \
  template Tensor<T> mean_axis(const Tensor<T>&, int, bool);                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);               \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                    \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                               \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> avg_pool1d(const Tensor<T>&);                                             \
  template Tensor<T> upsample_linear(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> rfft(const Tensor<T>&);                                                   \
  template Tensor<T> irfft(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&);

DPANET_INSTANTIATE_OPS(float)
DPANET_INSTANTIATE_OPS(double)

#undef DPANET_INSTANTIATE_OPS

}  // namespace dpanet::numerics
