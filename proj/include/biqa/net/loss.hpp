#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "biqa/error.hpp"
#include "biqa/net/tensor.hpp"

namespace biqa::net {

enum class LossKind { mse, mae, mape, msle, logcosh, huber, cross_entropy };

inline const char* to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::mse: return "mse";
    case LossKind::mae: return "mae";
    case LossKind::mape: return "mape";
    case LossKind::msle: return "msle";
    case LossKind::logcosh: return "logcosh";
    case LossKind::huber: return "huber";
    case LossKind::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

inline LossKind loss_kind_from_string(const std::string& name) {
  for (auto k : {LossKind::mse, LossKind::mae, LossKind::mape, LossKind::msle, LossKind::logcosh, LossKind::huber,
                 LossKind::cross_entropy})
    if (name == to_string(k)) return k;
  fail(ErrorCode::invalid_config, "unknown loss '" + name + "'");
}

struct LossSpec {
  LossKind kind = LossKind::mse;
  double huber_delta = 1.0;

  void validate() const {
    if (!(huber_delta > 0.0)) fail(ErrorCode::invalid_config, "huber delta must be positive");
  }
};

/// Mean-reduced loss and its gradient with respect to predicted.
///
/// Regression losses compare predicted P with target T elementwise. For
/// cross_entropy, predicted holds logits [N, K] and target holds class
/// probabilities (one-hot rows); the value is the batch mean of
/// -sum_k T_k log softmax(P)_k.
template <class T>
std::pair<double, Tensor<T>> loss_value_and_grad(const LossSpec& spec, const Tensor<T>& predicted,
                                                 const Tensor<T>& target) {
  spec.validate();
  if (predicted.shape() != target.shape())
    fail(ErrorCode::shape_mismatch, "loss shapes differ: " + shape_string(predicted.shape()) + " vs " +
                                        shape_string(target.shape()));
  if (predicted.empty()) fail(ErrorCode::shape_mismatch, "loss of an empty tensor");
  Tensor<T> grad(predicted.shape());
  const std::size_t n = predicted.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double value = 0.0;

  if (spec.kind == LossKind::cross_entropy) {
    if (predicted.rank() != 2) fail(ErrorCode::shape_mismatch, "cross_entropy expects [N, K] logits");
    const std::size_t N = predicted.dim(0), K = predicted.dim(1);
    for (std::size_t b = 0; b < N; ++b) {
      const T* z = predicted.data() + b * K;
      const T* t = target.data() + b * K;
      double mx = z[0];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(z[k]));
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) sum += std::exp(static_cast<double>(z[k]) - mx);
      const double log_sum = mx + std::log(sum);
      double t_total = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        value -= static_cast<double>(t[k]) * (static_cast<double>(z[k]) - log_sum);
        t_total += t[k];
      }
      for (std::size_t k = 0; k < K; ++k) {
        const double p = std::exp(static_cast<double>(z[k]) - log_sum);
        grad[b * K + k] = static_cast<T>((p * t_total - static_cast<double>(t[k])) / static_cast<double>(N));
      }
    }
    return {value / static_cast<double>(N), std::move(grad)};
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double p = predicted[i];
    const double t = target[i];
    const double e = p - t;
    double v = 0.0, d = 0.0;
    switch (spec.kind) {
      case LossKind::mse:
        v = e * e;
        d = 2.0 * e;
        break;
      case LossKind::mae:
        v = std::abs(e);
        d = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
        break;
      case LossKind::mape:
        if (t == 0.0) fail(ErrorCode::invalid_argument, "MAPE is undefined for zero targets");
        v = std::abs(e / t);
        d = (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0)) / std::abs(t);
        break;
      case LossKind::msle: {
        if (!(p > -1.0) || !(t > -1.0)) fail(ErrorCode::invalid_argument, "MSLE needs values greater than -1");
        const double r = std::log1p(p) - std::log1p(t);
        v = r * r;
        d = 2.0 * r / (1.0 + p);
        break;
      }
      case LossKind::logcosh: {
        const double a = std::abs(e);
        v = a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
        d = std::tanh(e);
        break;
      }
      case LossKind::huber: {
        const double a = std::abs(e), delta = spec.huber_delta;
        if (a <= delta) {
          v = 0.5 * e * e;
          d = e;
        } else {
          v = delta * a - 0.5 * delta * delta;
          d = delta * (e > 0 ? 1.0 : -1.0);
        }
        break;
      }
      case LossKind::cross_entropy:
        break;
    }
    value += v;
    grad[i] = static_cast<T>(d * inv_n);
  }
  return {value * inv_n, std::move(grad)};
}

}  // namespace biqa::net
