#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "biqa/error.hpp"
#include "biqa/net/tensor.hpp"

namespace biqa::net {

/// Step-decay schedule: base_lr * drop_factor^floor(epoch / drop_period).
struct LearningRateSchedule {
  double base_lr = 1e-3;
  double drop_factor = 0.5;
  int drop_period = 10;

  double at(int epoch) const {
    if (drop_period <= 0) fail(ErrorCode::invalid_config, "drop period must be positive");
    return base_lr * std::pow(drop_factor, epoch / drop_period);
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for a fixed list of parameter tensors.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(LearningRateSchedule schedule, AdamConfig config = {}) : schedule_(schedule), config_(config) {}

  const LearningRateSchedule& schedule() const noexcept { return schedule_; }
  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return step_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

  /// Updates params in place from grads (same order and shapes every call).
  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, int epoch) {
    if (params.size() != grads.size()) fail(ErrorCode::shape_mismatch, "adam: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) fail(ErrorCode::shape_mismatch, "adam: parameter list changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k)
      if (params[k]->shape() != grads[k]->shape() || params[k]->shape() != m_[k].shape())
        fail(ErrorCode::shape_mismatch, "adam: shape mismatch for parameter " + std::to_string(k));

    ++step_;
    const double lr = schedule_.at(epoch);
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      T* p = params[k]->data();
      const T* g = grads[k]->data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::size_t i = 0; i < params[k]->size(); ++i) {
        const double gi = g[i];
        const double mi = b1 * m[i] + (1.0 - b1) * gi;
        const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] = static_cast<T>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + config_.epsilon));
      }
    }
  }

 private:
  LearningRateSchedule schedule_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace biqa::net
