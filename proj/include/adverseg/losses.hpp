#pragma once

#include "adverseg/tensor.hpp"

namespace adverseg {

// Every probability is clamped to [kProbClamp, 1 - kProbClamp] before a log.
inline constexpr double kProbClamp = 1e-7;

/// Sign convention of the discriminator objective.
///
/// paper_equation: L_adv = -(1/N) sum[log D(fake) + log(1 - D(real))], which
/// the discriminator maximizes (gradient ascent); at the optimum
/// D(fake) -> 0 and D(real) -> 1, so D is a probability-of-real.
///
/// standard_gan: the Goodfellow form -(1/N) sum[log D(real) + log(1 - D(fake))],
/// which the discriminator minimizes.
///
/// The generator term -(1/N) sum log D(fake) is the same under both.
enum class LossConvention { paper_equation, standard_gan };

template <typename T>
struct LossValue {
  double value = 0.0;
  BasicTensor<T> grad;
};

template <typename T>
struct DiscriminatorLossValue {
  double value = 0.0;
  BasicTensor<T> grad_fake;  // d value / d D(fake)
  BasicTensor<T> grad_real;  // d value / d D(real)
  bool maximize = true;      // direction the discriminator moves `value`
};

struct LossBreakdown {
  double rec = 0.0;
  double adv_d = 0.0;
  double adv_g = 0.0;
  double total_g = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// Per-pixel, per-class binary cross-entropy averaged over pixels:
/// -(1/N) sum_pixels sum_classes [y log p + (1-y) log(1-p)], with N = batch
/// times height times width (classes are summed, not averaged). The gradient
/// is evaluated at the clamped probability.
template <typename T>
LossValue<T> reconstruction_loss(const BasicTensor<T>& prob_map, const BasicTensor<T>& one_hot);

// -(1/N) sum_pixels sum_classes y log p; pairs with the softmax head.
template <typename T>
LossValue<T> categorical_cross_entropy(const BasicTensor<T>& prob_map, const BasicTensor<T>& one_hot);

// N is the batch size (one score per map).
template <typename T>
DiscriminatorLossValue<T> discriminator_loss(const BasicTensor<T>& d_fake, const BasicTensor<T>& d_real,
                                             LossConvention convention = LossConvention::paper_equation);

// -(1/N) sum log D(fake); the generator descends on it.
template <typename T>
LossValue<T> generator_adversarial_loss(const BasicTensor<T>& d_fake);

// adv_g + lambda * rec; negative lambda is a ConfigError.
double total_generator_objective(double adv_g, double rec, double lambda);

}  // namespace adverseg
