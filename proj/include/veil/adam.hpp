#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "veil/common.hpp"
#include "veil/layers.hpp"

namespace veil {

/// Adam with bias-corrected moments. Defaults: beta1=0.9, beta2=0.999,
/// eps=1e-8; the learning rate is the only knob the training protocol sets.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
  }

  double lr() const { return lr_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }
  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  /// One update over all parameters. Rejects non-finite gradients, naming
  /// the offending parameter.
  void step(const std::vector<Param<T>*>& params) {
    for (Param<T>* p : params) {
      for (const T g : p->grad) {
        if (!std::isfinite(static_cast<double>(g))) {
          throw Error("adam: non-finite gradient in " + p->name);
        }
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (Param<T>* p : params) {
      T* w = p->value.data();
      const T* g = p->grad.data();
      T* m = p->m.data();
      T* v = p->v.data();
      const size_t n = p->value.size();
      for (size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
        const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        w[i] = static_cast<T>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
};

}  // namespace veil
