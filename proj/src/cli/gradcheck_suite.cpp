#include "dpanet/cli/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "dpanet/error.hpp"
#include "dpanet/fusion.hpp"
#include "dpanet/numerics/debug.hpp"
#include "dpanet/numerics/gradcheck.hpp"
#include "dpanet/numerics/ops.hpp"
#include "dpanet/pyramid.hpp"
#include "dpanet/revin.hpp"

namespace dpanet::cli {

namespace {

namespace nx = numerics;
using Tensor = nx::Tensor<double>;

class Case {
 public:
  explicit Case(std::uint64_t seed) : rng_(seed) {}

  Tensor leaf(nx::Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = values(std::move(shape), lo, hi, true);
    leaves_.push_back(t);
    names_.push_back("input" + std::to_string(leaves_.size() - 1));
    return t;
  }
  Tensor values(nx::Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(nx::shape_numel(shape));
    for (auto& v : data) v = dist(rng_);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
  }
  void add_parameters(const ParameterList<double>& params) {
    for (const auto& p : params.entries()) {
      leaves_.push_back(p.value);
      names_.push_back(p.name);
    }
  }

  /// Reduces `output` against a fixed random projection so every output entry
  /// receives a distinct upstream gradient.
  std::function<Tensor()> projected(std::function<Tensor()> output) {
    const Tensor probe = output();
    const Tensor weights = values(probe.shape());
    return [output = std::move(output), weights] { return nx::sum(nx::mul(output(), weights)); };
  }

  ComponentCheck run(const std::string& component, const std::function<Tensor()>& output, double step) {
    const auto result = nx::check_gradients(projected(output), leaves_, names_, step);
    return {component, result.worst_error, result.checked, result.worst_location};
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Tensor> leaves_;
  std::vector<std::string> names_;
};

FusionConfig small_fusion(bool cross) {
  FusionConfig c;
  c.input_length = 8;
  c.num_levels = 2;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.cross_attention = cross;
  return c;
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.input_length = 8;
  c.pred_length = 4;
  c.channels = 2;
  c.num_levels = 2;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.dropout = 0.0;
  return c;
}

const std::vector<std::string>& faultable_kernels() {
  static const std::vector<std::string> kernels{"softmax"};
  return kernels;
}

std::vector<ComponentCheck> run_gradcheck_suite(const GradcheckOptions& options) {
  std::optional<nx::debug::ScopedBackwardFault> fault;
  if (options.inject_fault) {
    const auto& kernels = faultable_kernels();
    if (std::find(kernels.begin(), kernels.end(), *options.inject_fault) == kernels.end()) {
      throw ConfigError("no fault hook for kernel '" + *options.inject_fault + "'");
    }
    fault.emplace(*options.inject_fault, 1.5);
  }

  std::vector<ComponentCheck> results;
  std::uint64_t seed = options.seed;
  auto check = [&](const std::string& name, auto&& build) {
    Case c(++seed * 0x9e3779b97f4a7c15ULL);
    auto output = build(c);
    results.push_back(c.run(name, output, options.step));
  };

  check("elementwise", [](Case& c) {
    auto a = c.leaf({3, 4});
    auto b = c.leaf({4});
    auto p = c.leaf({3, 4}, 0.5, 2.0);
    return [=] {
      auto y = nx::add(nx::mul(a, b), nx::sub(nx::div(a, p), nx::square(b)));
      return nx::add(nx::add(y, nx::sqrt(p)), nx::exp(nx::scale(a, 0.5)));
    };
  });
  check("gelu", [](Case& c) {
    auto x = c.leaf({2, 3, 4}, -3.0, 3.0);
    return [=] { return nx::gelu(x); };
  });
  check("reductions", [](Case& c) {
    auto x = c.leaf({2, 3, 4});
    return [=] {
      auto s = nx::sum_axis(x, 1, true);
      return nx::add(nx::mean_axis(x, -1, true), nx::mul(s, nx::mean(x)));
    };
  });
  check("matmul", [](Case& c) {
    auto a = c.leaf({2, 3, 5});
    auto b = c.leaf({2, 5, 4});
    return [=] { return nx::matmul(a, b); };
  });
  check("linear", [](Case& c) {
    auto x = c.leaf({2, 3, 5});
    auto w = c.leaf({5, 4});
    auto b = c.leaf({4});
    return [=] { return nx::linear(x, w, b); };
  });
  check("shape_ops", [](Case& c) {
    auto a = c.leaf({2, 3, 4});
    auto b = c.leaf({2, 2, 4});
    return [=] {
      auto cat = nx::concat<double>({a, b}, 1);
      auto p = nx::permute(cat, {2, 0, 1});
      auto r = nx::reshape(nx::transpose(p, 0, 2), {5, 8});
      return nx::slice(r, 0, 1, 3);
    };
  });
  check("softmax", [](Case& c) {
    auto x = c.leaf({2, 3, 5}, -2.0, 2.0);
    return [=] { return nx::add(nx::softmax(x, -1), nx::softmax(x, 1)); };
  });
  check("layer_norm", [](Case& c) {
    auto x = c.leaf({2, 3, 6});
    auto g = c.leaf({6}, 0.5, 1.5);
    auto b = c.leaf({6});
    return [=] { return nx::layer_norm(x, g, b, 1e-5); };
  });
  check("avg_pool1d", [](Case& c) {
    auto x = c.leaf({2, 8, 3});
    return [=] { return nx::avg_pool1d(x); };
  });
  check("upsample_linear", [](Case& c) {
    auto x = c.leaf({2, 4, 3});
    return [=] { return nx::upsample_linear(x, 8); };
  });
  check("rfft", [](Case& c) {
    auto x = c.leaf({2, 7, 3});
    return [=] { return nx::rfft(x); };
  });
  check("irfft", [](Case& c) {
    auto s = c.leaf({2, 5, 3, 2});
    return [=] { return nx::irfft(s, 8); };
  });
  check("dropout", [](Case& c) {
    auto x = c.leaf({4, 6});
    return [=] {
      std::mt19937_64 rng(7);
      return nx::dropout(x, 0.3, rng);
    };
  });
  check("revin", [](Case& c) {
    auto x = c.leaf({2, 8, 3});
    ParameterList<double> params;
    Revin<double> revin(3, 1e-5, true, params);
    auto& entries = params.entries();
    entries[0].value.mutable_data()[1] = 1.3;
    entries[1].value.mutable_data()[2] = -0.4;
    c.add_parameters(params);
    auto y = c.leaf({2, 8, 3});
    return [=] {
      auto [xn, state] = revin.normalize(x);
      return nx::add(xn, revin.denormalize(y, state));
    };
  });
  check("frequency_pyramid", [](Case& c) {
    auto x = c.leaf({2, 16, 2});
    const auto partition = make_band_partition(9, 3);
    return [=] {
      auto levels = build_frequency_pyramid(x, partition);
      std::vector<Tensor> flat;
      for (const auto& level : levels) flat.push_back(nx::reshape(level, {level.numel()}));
      return nx::concat(flat, 0);
    };
  });
  check("cross_attention", [](Case& c) {
    ParameterList<double> params;
    Initializer<double> init(11);
    CrossAttention<double> attn("attn", 8, 2, 0.0, init, params);
    c.add_parameters(params);
    auto q = c.leaf({3, 4, 8});
    auto kv = c.leaf({3, 5, 8});
    return [=] { return attn.forward(q, kv, ForwardContext{}, 0, "t"); };
  });
  for (bool cross : {true, false}) {
    check(cross ? "fusion_block" : "fusion_block_no_cross", [cross](Case& c) {
      ParameterList<double> params;
      Initializer<double> init(12);
      FusionBlock<double> block(0, small_fusion(cross), init, params);
      c.add_parameters(params);
      auto ht = c.leaf({3, 4, 8});
      auto hf = c.leaf({3, 4, 8});
      return [=] {
        auto [t, f] = block.forward(ht, hf, ForwardContext{});
        return nx::concat<double>({t, f}, -1);
      };
    });
  }
  check("coarse_to_fine", [](Case& c) {
    ParameterList<double> params;
    Initializer<double> init(13);
    CoarseToFine<double> fusion(small_fusion(true), init, params);
    c.add_parameters(params);
    std::vector<Tensor> ts{c.leaf({1, 8, 2}), c.leaf({1, 4, 2})};
    std::vector<Tensor> fs{c.leaf({1, 8, 2}), c.leaf({1, 4, 2})};
    return [=] { return fusion.forward(ts, fs, ForwardContext{}).h_t[0]; };
  });
  for (const char* variant : {"full", "temporal_only", "frequency_only", "no_cross_fusion"}) {
    check(std::string("model_") + variant, [variant, &options](Case& c) {
      auto model = std::make_shared<DpaNet<double>>(make_variant<double>(gradcheck_model_config(), variant,
                                                                         options.seed + 5));
      c.add_parameters(model->parameters());
      auto x = c.leaf({2, 8, 2}, -2.0, 2.0);
      return [=] { return model->forward(x).values; };
    });
  }
  return results;
}

}  // namespace dpanet::cli
