#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "transclaw/tensor.hpp"

namespace transclaw {

struct GradcheckOptions {
  double epsilon = 1e-5;
  // 0 checks every coordinate; otherwise a seeded subset of this many
  // coordinates per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

// Compares the tape gradient of the scalar `f()` with respect to every tensor
// in `inputs` against central differences (f(x+e) - f(x-e)) / 2e. Returns the
// maximum of |analytic - numeric| / max(1, |analytic|). The tensors are
// perturbed in place and restored. Always evaluated in 64-bit.
double finite_diff_check(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> inputs,
                         const GradcheckOptions& options = {});

// Single-input form: f(x).
double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double epsilon = 1e-5);

}  // namespace transclaw
