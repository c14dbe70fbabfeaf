#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/diffcore/tape.hpp"

namespace seisinv::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double regardless of T.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<T>*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  /// Applies one update with learning rate `lr` using each parameter's grad.
  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto& g = params_[k]->grad;
      if (g.size() != params_[k]->value.size())
        throw ShapeError("adam: gradient shape of '" + params_[k]->name + "' does not match its value");
      for (T x : g.values())
        if (!std::isfinite(static_cast<double>(x)))
          throw NumericalError("non-finite gradient in parameter '" + params_[k]->name + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double upd = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - upd);
      }
    }
  }

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }
  const std::vector<Parameter<T>*>& params() const { return params_; }
  std::vector<double>& first_moment(std::size_t k) { return m_.at(k); }
  std::vector<double>& second_moment(std::size_t k) { return v_.at(k); }
  const std::vector<double>& first_moment(std::size_t k) const { return m_.at(k); }
  const std::vector<double>& second_moment(std::size_t k) const { return v_.at(k); }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

/// base * (1 - iter/max)^power.
inline double poly_lr(std::uint64_t iter, std::uint64_t max_iter, double base, double power = 0.9) {
  if (max_iter == 0 || iter > max_iter)
    throw UsageError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " + std::to_string(max_iter) + "]");
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

/// Multiplies the rate by `factor` every `every` epochs.
inline double step_lr(std::uint64_t epoch, double base, std::uint64_t every = 15, double factor = 0.1) {
  return base * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace seisinv::ad
