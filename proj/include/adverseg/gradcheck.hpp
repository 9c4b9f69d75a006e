#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adverseg/layers.hpp"

namespace adverseg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // element with the largest error, e.g. "weight[12]"
  std::size_t checked = 0;

  void merge(const GradCheckResult& other);
};

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up to
// rounding from producing meaningless ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central differences of `f` around `x`, compared element by element against `analytic`.
GradCheckResult check_gradient(const std::function<double(const TensorD&)>& f, const TensorD& x,
                               const TensorD& analytic, double epsilon, const std::string& label);

/// Checks a layer's backward against central differences of the scalar sink
/// <r, forward(x)>, with r a fixed seeded projection in [-1, 1]. Every input
/// element and every parameter element is perturbed. A projection rather than a
/// plain sum is used because layers such as softmax and train-mode batch norm
/// have an identically zero input gradient under the plain sum.
/// `analytic_scale` multiplies the backward result before comparison; values
/// other than 1 exist for negative-control tests.
GradCheckResult grad_check(Layer<double>& layer, const TensorD& input, double epsilon, Mode mode = Mode::train,
                           std::uint64_t seed = 0, double analytic_scale = 1.0);

struct GradCheckItem {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::string worst;

  bool passed() const { return max_rel_error < threshold; }
};

struct GradSuiteOptions {
  std::optional<std::string> only;  // run a single item by name
  std::uint64_t seed = 0;
  double epsilon = 1e-5;
  // Negative control: scales every analytic gradient by 1.01 before comparison.
  bool corrupt_backward = false;
};

// Names of every item the suite knows about, in run order.
std::vector<std::string> gradcheck_item_names();

// Throws ConfigError when `only` is not a known item.
std::vector<GradCheckItem> run_gradcheck_suite(const GradSuiteOptions& options);

}  // namespace adverseg
