#include "adverseg/optim.hpp"

#include <cmath>

namespace adverseg {

template <typename T>
void adam_step(std::span<const NamedParam<T>> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (!(cfg.lr >= 0.0)) throw ConfigError("adam: learning rate must be non-negative");
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.param->value.shape(), T{0});
      state.v.emplace_back(p.param->value.shape(), T{0});
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam: optimizer state does not match parameter list");
  }
  double sq_norm = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param<T>& p = *params[k].param;
    if (p.grad.shape() != p.value.shape() || state.m[k].shape() != p.value.shape()) {
      throw ShapeError("adam: shape mismatch for parameter " + params[k].name);
    }
    for (T g : p.grad.data()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + params[k].name);
      sq_norm += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  double clip_scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double norm = std::sqrt(sq_norm);
    if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k].param;
    auto theta = p.value.data();
    auto grad = p.grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * clip_scale;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

template <typename T>
void zero_grads(std::span<const NamedParam<T>> params) {
  for (const auto& p : params) p.param->grad.fill(T{0});
}

template void adam_step(std::span<const NamedParam<float>>, AdamState<float>&, const AdamConfig&);
template void adam_step(std::span<const NamedParam<double>>, AdamState<double>&, const AdamConfig&);
template void zero_grads(std::span<const NamedParam<float>>);
template void zero_grads(std::span<const NamedParam<double>>);

}  // namespace adverseg
