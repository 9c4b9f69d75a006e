#include "adverseg/losses.hpp"

#include <cmath>

namespace adverseg {

namespace {

template <typename T>
double clamp_prob(T p) {
  return std::clamp(static_cast<double>(p), kProbClamp, 1.0 - kProbClamp);
}

template <typename T>
void require_scores(const BasicTensor<T>& s, const char* what) {
  if (s.empty()) throw ShapeError(std::string(what) + ": empty score tensor");
}

template <typename T>
std::size_t pixel_count(const BasicTensor<T>& prob_map, const BasicTensor<T>& one_hot, const char* what) {
  check_same_shape(prob_map, one_hot, what);
  if (prob_map.rank() != 4) throw ShapeError(std::string(what) + " expects [N,C,H,W], got " + shape_str(prob_map.shape()));
  return prob_map.dim(0) * prob_map.dim(2) * prob_map.dim(3);
}

}  // namespace

template <typename T>
LossValue<T> reconstruction_loss(const BasicTensor<T>& prob_map, const BasicTensor<T>& one_hot) {
  const double n = static_cast<double>(pixel_count(prob_map, one_hot, "reconstruction_loss"));
  LossValue<T> out{0.0, BasicTensor<T>(prob_map.shape(), T{0})};
  double total = 0.0;
  for (std::size_t i = 0; i < prob_map.size(); ++i) {
    const double p = clamp_prob(prob_map[i]);
    const double y = static_cast<double>(one_hot[i]);
    total += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    out.grad[i] = static_cast<T>(-(y / p - (1.0 - y) / (1.0 - p)) / n);
  }
  out.value = -total / n;
  return out;
}

template <typename T>
LossValue<T> categorical_cross_entropy(const BasicTensor<T>& prob_map, const BasicTensor<T>& one_hot) {
  const double n = static_cast<double>(pixel_count(prob_map, one_hot, "categorical_cross_entropy"));
  LossValue<T> out{0.0, BasicTensor<T>(prob_map.shape(), T{0})};
  double total = 0.0;
  for (std::size_t i = 0; i < prob_map.size(); ++i) {
    const double p = clamp_prob(prob_map[i]);
    const double y = static_cast<double>(one_hot[i]);
    total += y * std::log(p);
    out.grad[i] = static_cast<T>(-(y / p) / n);
  }
  out.value = -total / n;
  return out;
}

template <typename T>
DiscriminatorLossValue<T> discriminator_loss(const BasicTensor<T>& d_fake, const BasicTensor<T>& d_real,
                                             LossConvention convention) {
  require_scores(d_fake, "discriminator_loss");
  check_same_shape(d_fake, d_real, "discriminator_loss");
  const double n = static_cast<double>(d_fake.size());
  DiscriminatorLossValue<T> out;
  out.grad_fake = BasicTensor<T>(d_fake.shape(), T{0});
  out.grad_real = BasicTensor<T>(d_real.shape(), T{0});
  double total = 0.0;
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double f = clamp_prob(d_fake[i]);
    const double r = clamp_prob(d_real[i]);
    if (convention == LossConvention::paper_equation) {
      total += std::log(f) + std::log(1.0 - r);
      out.grad_fake[i] = static_cast<T>(-1.0 / (n * f));
      out.grad_real[i] = static_cast<T>(1.0 / (n * (1.0 - r)));
    } else {
      total += std::log(r) + std::log(1.0 - f);
      out.grad_real[i] = static_cast<T>(-1.0 / (n * r));
      out.grad_fake[i] = static_cast<T>(1.0 / (n * (1.0 - f)));
    }
  }
  out.value = -total / n;
  out.maximize = convention == LossConvention::paper_equation;
  return out;
}

template <typename T>
LossValue<T> generator_adversarial_loss(const BasicTensor<T>& d_fake) {
  require_scores(d_fake, "generator_adversarial_loss");
  const double n = static_cast<double>(d_fake.size());
  LossValue<T> out{0.0, BasicTensor<T>(d_fake.shape(), T{0})};
  double total = 0.0;
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double f = clamp_prob(d_fake[i]);
    total += std::log(f);
    out.grad[i] = static_cast<T>(-1.0 / (n * f));
  }
  out.value = -total / n;
  return out;
}

double total_generator_objective(double adv_g, double rec, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative, got " + std::to_string(lambda));
  return adv_g + lambda * rec;
}

#define ADVERSEG_INSTANTIATE_LOSSES(T)                                                                  \
  template LossValue<T> reconstruction_loss(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template LossValue<T> categorical_cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template DiscriminatorLossValue<T> discriminator_loss(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                        LossConvention);                                \
  template LossValue<T> generator_adversarial_loss(const BasicTensor<T>&);

ADVERSEG_INSTANTIATE_LOSSES(float)
ADVERSEG_INSTANTIATE_LOSSES(double)

#undef ADVERSEG_INSTANTIATE_LOSSES

}  // namespace adverseg
