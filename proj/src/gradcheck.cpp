#include "transclaw/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace transclaw {

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: f is not finite near x");
  return v;
}

}  // namespace

double finite_diff_check(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> inputs, const GradcheckOptions& options) {
  std::vector<bool> previous(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    previous[t] = inputs[t].requires_grad();
    inputs[t].set_requires_grad(true);
    inputs[t].clear_grad();
  }
  {
    Tape<double>::current().reset();
    const bool was_enabled = GradMode::enabled();
    GradMode::set_enabled(true);
    const auto loss = f();
    GradMode::set_enabled(was_enabled);
    if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: f(x) is not finite");
    if (loss.node_id() || loss.requires_grad()) backward(loss);
  }

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto values = x.data();
    for (const auto i : coords) {
      const double saved = values[i];
      values[i] = saved + options.epsilon;
      const double up = evaluate(f);
      values[i] = saved - options.epsilon;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    inputs[t].clear_grad();
    inputs[t].set_requires_grad(previous[t]);
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double epsilon) {
  Tensor<double> leaf = x.detach();
  GradcheckOptions options;
  options.epsilon = epsilon;
  return finite_diff_check([&] { return f(leaf); }, {leaf}, options);
}

}  // namespace transclaw
