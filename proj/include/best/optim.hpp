#pragma once

#include "best/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace best {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) decay applied as w -= lr * weight_decay * w.
  double weight_decay = 0.0;
};

/// Adaptive-moment optimizer over a fixed parameter list. Parameters whose
/// gradient is absent after backward() are left untouched for that step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ag::Var<T>> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T c1 = T(1) - static_cast<T>(std::pow(opts_.beta1, static_cast<double>(t_)));
    const T c2 = T(1) - static_cast<T>(std::pow(opts_.beta2, static_cast<double>(t_)));
    const T step_size = static_cast<T>(lr);
    const T eps = static_cast<T>(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const Matrix<T>& g = p.grad();
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      Matrix<T>& w = p.mutable_value();
      if (opts_.weight_decay > 0) w *= T(1) - step_size * static_cast<T>(opts_.weight_decay);
      w.array() -= step_size * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<ag::Var<T>> params_;
  AdamOptions opts_;
  std::vector<Matrix<T>> m_, v_;
  long t_ = 0;
};

/// Piecewise-constant decay: base * factor^floor(epoch / every).
inline double step_decay_lr(double base, int epoch, int every, double factor) {
  if (every <= 0) return base;
  return base * std::pow(factor, epoch / every);
}

/// Linear warmup over `warmup` epochs followed by linear decay to zero at
/// `total` epochs. `progress` is measured in (fractional) epochs.
inline double warmup_linear_lr(double base, double progress, int warmup, int total) {
  if (total <= 0) return base;
  if (warmup > 0 && progress < warmup) return base * std::max(progress, 0.0) / warmup;
  const double span = static_cast<double>(total - warmup);
  if (span <= 0) return base;
  return base * std::clamp((static_cast<double>(total) - progress) / span, 0.0, 1.0);
}

}  // namespace best
