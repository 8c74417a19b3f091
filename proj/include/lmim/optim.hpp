#pragma once
// AdamW, global-norm gradient clipping and the warmup + cosine learning-rate
// schedule.

#include "lmim/common.hpp"
#include "lmim/nn.hpp"

#include <cmath>
#include <map>
#include <string>

namespace lmim {

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// `floor` at `total`. Steps are 0-based.
inline double lr_at(long step, double peak, long warmup, long total, double floor = 0.0) {
  require(total >= 1, "lr schedule: total steps must be >= 1");
  require(warmup >= 0 && warmup <= total, "lr schedule: warmup must lie in [0, total]");
  if (step < 0) step = 0;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return floor;
  const long span = total - warmup;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <class T>
class AdamW {
public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  struct State {
    Mat<T> m, v;
  };
  using StateMap = std::map<std::string, State>;

  const AdamWConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  const StateMap& state() const { return state_; }
  void restore(long steps, StateMap states) {
    t_ = steps;
    state_ = std::move(states);
  }

  /// One update of every parameter of `module`; decay applies to Param::decay tensors only.
  template <class Module>
  void step(Module& module, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    module.visit(
        [&](const std::string& name, nn::Param<T>& p) {
          auto& st = state_[name];
          if (st.m.size() != p.value.size()) {
            st.m = Mat<T>::Zero(p.value.rows(), p.value.cols());
            st.v = Mat<T>::Zero(p.value.rows(), p.value.cols());
          }
          const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
          st.m = b1 * st.m + (1 - b1) * p.grad;
          st.v = b2 * st.v + (1 - b2) * p.grad.cwiseProduct(p.grad);
          if (p.decay && cfg_.weight_decay > 0) p.value *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
          const T a = static_cast<T>(lr / bc1);
          const T s = static_cast<T>(1.0 / std::sqrt(bc2));
          const T eps = static_cast<T>(cfg_.eps);
          p.value.array() -= a * st.m.array() / ((st.v.array().sqrt() * s) + eps);
        },
        "");
  }

private:
  AdamWConfig cfg_;
  long t_ = 0;
  StateMap state_;
};

/// L2 norm over all gradients of `module`.
template <class Module>
double grad_norm(Module& module) {
  double s = 0.0;
  module.visit([&](const std::string&, auto& p) { s += p.grad.template cast<double>().squaredNorm(); }, "");
  return std::sqrt(s);
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class Module>
double clip_grad_norm(Module& module, double max_norm) {
  const double n = grad_norm(module);
  if (std::isfinite(n) && n > max_norm && max_norm > 0) {
    const double k = max_norm / (n + 1e-12);
    module.visit([&](const std::string&, auto& p) { p.grad *= static_cast<typename std::decay_t<decltype(p.value)>::Scalar>(k); }, "");
  }
  return n;
}

}  // namespace lmim
