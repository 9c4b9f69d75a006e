#include "adverseg/gradcheck.hpp"

#include <cmath>

namespace adverseg {

void GradCheckResult::merge(const GradCheckResult& other) {
  checked += other.checked;
  if (other.max_rel_error > max_rel_error) {
    max_rel_error = other.max_rel_error;
    worst = other.worst;
  }
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradient(const std::function<double(const TensorD&)>& f, const TensorD& x,
                               const TensorD& analytic, double epsilon, const std::string& label) {
  check_same_shape(x, analytic, "check_gradient");
  GradCheckResult result;
  TensorD probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + epsilon;
    const double f_plus = f(probe);
    probe[i] = original - epsilon;
    const double f_minus = f(probe);
    probe[i] = original;
    const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric);
    ++result.checked;
    if (result.worst.empty() || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = label + "[" + std::to_string(i) + "]";
    }
  }
  return result;
}

GradCheckResult grad_check(Layer<double>& layer, const TensorD& input, double epsilon, Mode mode,
                           std::uint64_t seed, double analytic_scale) {
  Rng rng(seed, 0x6772616463686b);
  const TensorD out = layer.forward(input, mode);
  const TensorD projection = rand_tensor<double>(rng, out.shape(), Uniform{-1.0, 1.0});

  auto params = layer.parameters();
  for (Param<double>* p : params) p->grad.fill(0.0);
  layer.forward(input, mode);
  const TensorD grad_input = scale(layer.backward(projection), analytic_scale);
  std::vector<TensorD> grad_params;
  for (Param<double>* p : params) grad_params.push_back(scale(p->grad, analytic_scale));

  auto sink = [&](const TensorD& x) { return dot(projection, layer.forward(x, mode)); };
  GradCheckResult result = check_gradient(sink, input, grad_input, epsilon, "input");

  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<double>* p = params[k];
    const TensorD saved = p->value;
    auto param_sink = [&](const TensorD& value) {
      p->value = value;
      return dot(projection, layer.forward(input, mode));
    };
    result.merge(check_gradient(param_sink, saved, grad_params[k], epsilon, p->name));
    p->value = saved;
  }
  return result;
}

}  // namespace adverseg
