#pragma once

// Finite-difference suite over every differentiable operator plus a tiny
// end-to-end model, always in 64-bit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace transclaw {

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 20;          // random draws per operator case
  std::size_t model_seeds = 1;     // draws for the end-to-end model
  std::size_t model_coords = 6;    // sampled coordinates per model tensor (0 = all)
  double tolerance = 1e-4;
  double epsilon = 1e-5;
  // Case whose backward rule is deliberately skewed (negative control).
  std::string corrupt;
};

struct GradSuiteRow {
  std::string name;
  double max_error = 0;
  bool passed = false;
};

std::vector<std::string> gradsuite_case_names();

// Rows in case order; `on_row` sees each as it completes. Throws
// InvalidArgument if `corrupt` names no case.
std::vector<GradSuiteRow> run_gradsuite(const GradSuiteOptions& options,
                                        const std::function<void(const GradSuiteRow&)>& on_row = {});

}  // namespace transclaw
