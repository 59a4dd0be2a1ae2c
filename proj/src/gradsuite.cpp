#include "transclaw/gradsuite.hpp"

#include <algorithm>
#include <memory>
#include <random>

#include "transclaw/errors.hpp"
#include "transclaw/gradcheck.hpp"
#include "transclaw/model.hpp"
#include "transclaw/nn.hpp"

namespace transclaw {

namespace {

using D = Tensor<double>;

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  D normal(Shape shape, double scale = 1.0, bool grad = true) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng_);
    D t(std::move(shape), std::move(v));
    t.set_requires_grad(grad);
    return t;
  }
  D uniform(Shape shape, double lo, double hi, bool grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng_);
    D t(std::move(shape), std::move(v));
    t.set_requires_grad(grad);
    return t;
  }
  std::vector<std::uint8_t> labels(std::size_t n, std::size_t classes) {
    std::uniform_int_distribution<int> dist(0, static_cast<int>(classes) - 1);
    std::vector<std::uint8_t> out(n);
    for (auto& x : out) x = static_cast<std::uint8_t>(dist(rng_));
    return out;
  }
  std::uint64_t next() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

// Identity forward whose backward over-reports the gradient by 10%.
D skew(const D& x) {
  D y(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  auto xi = x.impl(), yi = y.impl();
  detail::attach(y, "skew", {&x}, [=] {
    if (yi->grad.empty()) return;
    auto& dx = detail::grad_buffer(*xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 1.1 * yi->grad[i];
  });
  return y;
}

struct CaseContext {
  Draw& draw;
  const GradSuiteOptions& options;
  bool corrupt;

  // Scalar probe: sum(out * r) with a fixed random r.
  std::function<D()> probe(std::function<D()> f) {
    const D first = [&] {
      NoGradGuard guard;
      return f();
    }();
    const D r = draw.normal(first.shape(), 1.0, false);
    const bool skewed = corrupt;
    return [f = std::move(f), r, skewed] {
      D out = f();
      if (skewed) out = skew(out);
      return sum(mul(out, r));
    };
  }

  double check(const std::function<D()>& f, std::vector<D> inputs, std::size_t coords = 0) {
    GradcheckOptions o;
    o.epsilon = options.epsilon;
    o.max_coords_per_tensor = coords;
    o.seed = draw.next();
    return finite_diff_check(f, std::move(inputs), o);
  }
};

ModelConfig tiny_config() {
  ModelConfig c;
  c.height = c.width = 16;
  c.in_channels = 1;
  c.num_classes = 3;
  c.conv_levels = 3;
  c.base_channels = 4;
  c.patch_size = 1;
  c.transformer_layers = 1;
  c.heads = 2;
  c.model_width = 8;
  c.mlp_width = 16;
  c.bottleneck_channels = 8;
  c.skips = 3;
  return c;
}

using CaseFn = double (*)(CaseContext&);

struct Case {
  const char* name;
  CaseFn run;
  bool model;
};

double conv_case(CaseContext& c, std::size_t k, std::size_t stride, std::size_t pad,
                 std::size_t extent) {
  Conv2dParams<double> p{c.draw.normal({4, 3, k, k}, 0.5), c.draw.normal({4}), stride, pad};
  auto x = c.draw.normal({2, 3, extent, extent});
  return c.check(c.probe([=] { return conv2d(x, p); }), {x, p.weight, p.bias});
}

const Case kCases[] = {
    {"matmul",
     [](CaseContext& c) {
       auto a = c.draw.normal({2, 3, 4}), b = c.draw.normal({2, 4, 5});
       return c.check(c.probe([=] { return matmul(a, b); }), {a, b});
     },
     false},
    {"add",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4}), b = c.draw.normal({3, 4});
       return c.check(c.probe([=] { return add(a, b); }), {a, b});
     },
     false},
    {"sub",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4}), b = c.draw.normal({3, 4});
       return c.check(c.probe([=] { return sub(a, b); }), {a, b});
     },
     false},
    {"mul",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4}), b = c.draw.normal({3, 4});
       return c.check(c.probe([=] { return mul(a, b); }), {a, b});
     },
     false},
    {"scale",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4});
       return c.check(c.probe([=] { return scale(a, -1.7); }), {a});
     },
     false},
    {"add_scalar",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4});
       return c.check(c.probe([=] { return add_scalar(a, 0.3); }), {a});
     },
     false},
    {"axis_affine",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 3, 4}), g = c.draw.normal({3}), b = c.draw.normal({3});
       return c.check(c.probe([=] { return axis_affine(x, g, b, 1); }), {x, g, b});
     },
     false},
    {"sum",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4, 2});
       return c.check(c.probe([=] { return add(sum(a, 1), sum(a, 1)); }), {a});
     },
     false},
    {"mean",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 4});
       return std::max(c.check(c.probe([=] { return mean(a, 0); }), {a}),
                       c.check(c.probe([=] { return reshape(mean(a), {1}); }), {a}));
     },
     false},
    {"max",
     [](CaseContext& c) {
       auto a = c.draw.normal({3, 5});
       return c.check(c.probe([=] { return max(a, 1); }), {a});
     },
     false},
    {"reshape",
     [](CaseContext& c) {
       auto a = c.draw.normal({2, 6});
       return c.check(c.probe([=] { return reshape(a, {3, 2, 2}); }), {a});
     },
     false},
    {"permute",
     [](CaseContext& c) {
       auto a = c.draw.normal({2, 3, 4});
       return c.check(c.probe([=] { return permute(a, {2, 0, 1}); }), {a});
     },
     false},
    {"transpose",
     [](CaseContext& c) {
       auto a = c.draw.normal({2, 3, 4});
       return c.check(c.probe([=] { return transpose(a); }), {a});
     },
     false},
    {"concat",
     [](CaseContext& c) {
       auto a = c.draw.normal({2, 3}), b = c.draw.normal({2, 2});
       return c.check(c.probe([=] { return concat<double>({a, b, a}, 1); }), {a, b});
     },
     false},
    {"slice",
     [](CaseContext& c) {
       auto a = c.draw.normal({4, 5});
       return c.check(c.probe([=] { return slice(a, 1, 1, 3); }), {a});
     },
     false},
    {"conv2d", [](CaseContext& c) { return conv_case(c, 3, 1, 1, 5); }, false},
    {"conv2d_strided", [](CaseContext& c) { return conv_case(c, 3, 2, 1, 7); }, false},
    {"conv2d_pointwise", [](CaseContext& c) { return conv_case(c, 1, 1, 0, 4); }, false},
    {"maxpool2d",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 2, 4, 6});
       return c.check(c.probe([=] { return maxpool2d(x); }), {x});
     },
     false},
    {"avg_pool2d",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 2, 4, 8});
       return c.check(c.probe([=] { return avg_pool2d(x, 2); }), {x});
     },
     false},
    {"upsample_bilinear",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 2, 3, 2});
       return std::max(
           c.check(c.probe([=] { return upsample_bilinear2x(x); }), {x}),
           c.check(c.probe([=] { return upsample(x, 4, UpsampleMode::kBilinear); }), {x}));
     },
     false},
    {"upsample_nearest",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 2, 3, 2});
       return c.check(c.probe([=] { return upsample(x, 2, UpsampleMode::kNearest); }), {x});
     },
     false},
    {"batch_norm2d_train",
     [](CaseContext& c) {
       auto x = c.draw.normal({3, 2, 3, 3});
       auto p = NormParams<double>::identity(2, true);
       p.gamma = c.draw.normal({2});
       p.beta = c.draw.normal({2});
       return c.check(c.probe([=]() mutable { return batch_norm2d(x, p, true); }),
                      {x, p.gamma, p.beta});
     },
     false},
    {"batch_norm2d_eval",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 2, 3, 3});
       auto p = NormParams<double>::identity(2, true);
       p.gamma = c.draw.normal({2});
       p.beta = c.draw.normal({2});
       p.running_mean = c.draw.normal({2}, 1.0, false);
       p.running_var = c.draw.uniform({2}, 0.5, 2.0, false);
       return c.check(c.probe([=]() mutable { return batch_norm2d(x, p, false); }),
                      {x, p.gamma, p.beta});
     },
     false},
    {"layer_norm",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 3, 5});
       auto p = NormParams<double>::identity(5, false);
       p.gamma = c.draw.normal({5});
       p.beta = c.draw.normal({5});
       return c.check(c.probe([=] { return layer_norm(x, p); }), {x, p.gamma, p.beta});
     },
     false},
    {"linear",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 3, 4});
       LinearParams<double> p{c.draw.normal({4, 5}), c.draw.normal({5})};
       return c.check(c.probe([=] { return linear(x, p); }), {x, p.weight, p.bias});
     },
     false},
    {"relu",
     [](CaseContext& c) {
       auto x = c.draw.normal({4, 5});
       return c.check(c.probe([=] { return relu(x); }), {x});
     },
     false},
    {"gelu",
     [](CaseContext& c) {
       auto x = c.draw.normal({4, 5}, 2.0);
       return c.check(c.probe([=] { return gelu(x); }), {x});
     },
     false},
    {"softmax",
     [](CaseContext& c) {
       auto x = c.draw.normal({3, 5}, 2.0);
       return c.check(c.probe([=] { return softmax(x); }), {x});
     },
     false},
    {"cross_entropy",
     [](CaseContext& c) {
       auto x = c.draw.normal({2, 4, 3, 3}, 2.0);
       const auto target = c.draw.labels(2 * 3 * 3, 4);
       const bool skewed = c.corrupt;
       auto f = [=] {
         auto loss = cross_entropy(x, std::span<const std::uint8_t>(target));
         return skewed ? skew(loss) : loss;
       };
       return c.check(f, {x});
     },
     false},
    {"multi_head_attention",
     [](CaseContext& c) {
       auto z = c.draw.normal({2, 3, 4});
       AttentionParams<double> p;
       for (auto* l : {&p.query, &p.key, &p.value, &p.output}) {
         *l = {c.draw.normal({4, 4}, 0.7), c.draw.normal({4}, 0.3)};
       }
       return c.check(c.probe([=] { return multi_head_attention(z, p, 2); }),
                      {z, p.query.weight, p.query.bias, p.key.weight, p.key.bias, p.value.weight,
                       p.value.bias, p.output.weight, p.output.bias});
     },
     false},
    {"transformer_block",
     [](CaseContext& c) {
       auto cfg = tiny_config();
       auto model = std::make_shared<TransClawUNet<double>>(cfg, c.draw.next());
       auto z = c.draw.normal({2, cfg.token_count(), cfg.model_width});
       std::vector<D> inputs{z};
       for (const auto& p : model->parameters()) {
         if (p.name.rfind("transformer.0.", 0) == 0) inputs.push_back(p.tensor);
       }
       return c.check(c.probe([=] { return model->transformer_block(z, 0); }), inputs);
     },
     false},
    {"model",
     [](CaseContext& c) {
       auto cfg = tiny_config();
       auto model = std::make_shared<TransClawUNet<double>>(cfg, c.draw.next());
       auto x = c.draw.normal({2, 1, cfg.height, cfg.width}, 1.0, false);
       const auto target = c.draw.labels(2 * cfg.height * cfg.width, cfg.num_classes);
       const bool skewed = c.corrupt;
       auto f = [=] {
         auto loss = cross_entropy(model->forward(x, true), std::span<const std::uint8_t>(target));
         return skewed ? skew(loss) : loss;
       };
       std::vector<D> inputs;
       for (const auto& p : model->parameters()) inputs.push_back(p.tensor);
       return c.check(f, inputs, c.options.model_coords);
     },
     true},
};

}  // namespace

std::vector<std::string> gradsuite_case_names() {
  std::vector<std::string> out;
  for (const auto& c : kCases) out.emplace_back(c.name);
  return out;
}

std::vector<GradSuiteRow> run_gradsuite(const GradSuiteOptions& options,
                                        const std::function<void(const GradSuiteRow&)>& on_row) {
  if (!options.corrupt.empty()) {
    bool known = false;
    for (const auto& c : kCases) known = known || options.corrupt == c.name;
    if (!known) throw InvalidArgument("gradcheck: no case named \"" + options.corrupt + "\"");
  }
  if (options.seeds == 0 || options.model_seeds == 0) {
    throw InvalidArgument("gradcheck: seed counts must be positive");
  }
  std::vector<GradSuiteRow> rows;
  std::uint64_t case_index = 0;
  for (const auto& item : kCases) {
    GradSuiteRow row;
    row.name = item.name;
    const std::size_t draws = item.model ? options.model_seeds : options.seeds;
    for (std::size_t s = 0; s < draws; ++s) {
      Draw draw(options.seed * 1000003u + case_index * 7919u + s);
      CaseContext ctx{draw, options, options.corrupt == item.name};
      row.max_error = std::max(row.max_error, item.run(ctx));
    }
    row.passed = row.max_error < options.tolerance;
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
    ++case_index;
  }
  return rows;
}

}  // namespace transclaw
