#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adverseg/layers.hpp"

namespace adverseg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global L2 norm clip applied before the update; 0 disables.
  double clip_norm = 0.0;
};

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// Moments are created zero-filled on the first call. Every gradient is
/// checked for finiteness before anything is modified; on failure a
/// NumericError names the parameter and neither params nor state change.
template <typename T>
void adam_step(std::span<const NamedParam<T>> params, AdamState<T>& state, const AdamConfig& cfg);

template <typename T>
void zero_grads(std::span<const NamedParam<T>> params);

}  // namespace adverseg
