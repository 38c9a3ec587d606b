#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "biqa/net/layers.hpp"
#include "biqa/net/loss.hpp"
#include "biqa/net/tensor.hpp"
#include "biqa/rng.hpp"

namespace biqa::net {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
  void merge(const GradCheckReport& other, const std::string& prefix = {}) {
    for (auto e : other.entries) {
      e.name = prefix + e.name;
      entries.push_back(std::move(e));
    }
  }
};

inline constexpr double kGradCheckEpsilon = 1e-5;
/// Denominator floor so that entries whose true gradient is zero compare on an
/// absolute scale instead of amplifying finite-difference round-off.
inline constexpr double kGradCheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

/// Central differences of loss() with respect to the elements of x. With
/// max_entries set, an evenly strided subset of at most that many is checked.
inline GradCheckEntry check_tensor(const std::string& name, Tensor<double>& x, const Tensor<double>& analytic,
                                   const std::function<double()>& loss, double eps = kGradCheckEpsilon,
                                   std::size_t max_entries = 0) {
  if (x.shape() != analytic.shape())
    fail(ErrorCode::shape_mismatch, "gradient for '" + name + "' has shape " + shape_string(analytic.shape()));
  const std::size_t step = max_entries && x.size() > max_entries ? (x.size() + max_entries - 1) / max_entries : 1;
  GradCheckEntry entry{name, 0.0, 0};
  for (std::size_t i = 0; i < x.size(); i += step) {
    ++entry.checked;
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss();
    x[i] = saved - eps;
    const double down = loss();
    x[i] = saved;
    entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return entry;
}

inline Tensor<double> random_tensor(const Shape& shape, RngStream& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Projects a unary layer's output on random weights and checks input and
/// parameter gradients. Dropout masks are replayed from a cloned stream.
inline GradCheckReport layer_grad_check(const LayerSpec& spec, const Shape& input_shape, std::uint64_t seed,
                                        Mode mode = Mode::train) {
  RngStream rng(seed, 1);
  auto params = init_params<double>(spec, rng);
  for (auto& b : params.bias.values()) b = 0.1 * rng.normal();
  auto x = random_tensor(input_shape, rng);
  if (spec.kind == LayerKind::relu)
    for (auto& v : x.values())
      if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 : 1e-3;  // keep away from the kink
  const RngStream mask_rng = rng.derive(7);

  auto run = [&] {
    RngStream r = mask_rng;
    return forward(spec, params, x, mode, r);
  };
  auto [y, cache] = run();
  const auto proj = random_tensor(y.shape(), rng);
  auto loss = [&] {
    const auto out = run().first;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += proj[i] * out[i];
    return s;
  };
  auto [dx, grads] = backward(spec, params, cache, proj);

  GradCheckReport report;
  report.entries.push_back(check_tensor("input", x, dx, loss));
  if (spec.has_params()) {
    report.entries.push_back(check_tensor("weight", params.weight, grads.weight, loss));
    report.entries.push_back(check_tensor("bias", params.bias, grads.bias, loss));
  }
  return report;
}

inline GradCheckReport concat_grad_check(const Shape& a_shape, const Shape& b_shape, std::uint64_t seed) {
  RngStream rng(seed, 2);
  auto a = random_tensor(a_shape, rng);
  auto b = random_tensor(b_shape, rng);
  auto [y, cache] = concat_forward(a, b);
  const auto proj = random_tensor(y.shape(), rng);
  auto loss = [&] {
    const auto out = concat_forward(a, b).first;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += proj[i] * out[i];
    return s;
  };
  auto [da, db] = concat_backward(cache, proj);
  GradCheckReport report;
  report.entries.push_back(check_tensor("input_a", a, da, loss));
  report.entries.push_back(check_tensor("input_b", b, db, loss));
  return report;
}

/// Checks d loss / d predicted on random predictions and valid targets.
inline GradCheckReport loss_grad_check(const LossSpec& spec, const Shape& shape, std::uint64_t seed) {
  RngStream rng(seed, 3);
  Tensor<double> predicted(shape), target(shape);
  if (spec.kind == LossKind::cross_entropy) {
    predicted = random_tensor(shape, rng, 2.0);
    const std::size_t K = shape.back();
    for (std::size_t row = 0; row < target.size() / K; ++row) target[row * K + rng.uniform_int(K)] = 1.0;
  } else {
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      // targets in (0.05, 1], errors kept away from the |e| = delta kink
      target[i] = rng.uniform(0.05, 1.0);
      double e = rng.uniform(-1.8, 1.8);
      if (std::abs(std::abs(e) - spec.huber_delta) < 1e-3 || std::abs(e) < 1e-3) e += 0.01;
      predicted[i] = target[i] + e;
      if (spec.kind == LossKind::msle) predicted[i] = std::max(predicted[i], -0.9);
    }
  }
  const auto grad = loss_value_and_grad(spec, predicted, target).second;
  auto loss = [&] { return loss_value_and_grad(spec, predicted, target).first; };
  GradCheckReport report;
  report.entries.push_back(check_tensor(to_string(spec.kind), predicted, grad, loss));
  return report;
}

struct FuzzSummary {
  std::string name;
  int cases = 0;
  int failures = 0;
  double max_rel_error = 0.0;
};

/// Random-shape checks for every layer kind and loss, `cases` each.
inline std::vector<FuzzSummary> fuzz_grad_checks(int cases, std::uint64_t seed, double tolerance) {
  std::vector<FuzzSummary> out;
  RngStream rng(seed, 0xF022);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1))); };
  auto record = [&](FuzzSummary& s, const GradCheckReport& r) {
    ++s.cases;
    s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error());
    if (!r.passed(tolerance)) ++s.failures;
  };
  auto sz = [](int v) { return static_cast<std::size_t>(v); };
  const LayerKind unary[] = {LayerKind::conv2d, LayerKind::relu, LayerKind::gap, LayerKind::fully_connected,
                             LayerKind::dropout, LayerKind::softmax};
  for (LayerKind kind : unary) {
    FuzzSummary s{to_string(kind)};
    for (int c = 0; c < cases; ++c) {
      const std::uint64_t case_seed = rng.next_u64();
      const int n = pick(1, 2);
      LayerSpec spec = LayerSpec::of(kind);
      Shape shape;
      switch (kind) {
        case LayerKind::conv2d: {
          const int k = 2 * pick(0, 2) + 1;
          spec = LayerSpec::conv(pick(1, 3), pick(1, 3), k, pick(1, 2), pick(1, 2),
                                 rng.bernoulli(0.5) ? Padding::same : Padding::valid);
          const int extent = spec.dilation * (k - 1) + 1 + pick(0, 4);
          shape = {sz(n), sz(spec.in_channels), sz(extent), sz(extent)};
          break;
        }
        case LayerKind::fully_connected:
          spec = LayerSpec::fc(pick(1, 6), pick(1, 6));
          shape = {sz(n), sz(spec.in_features)};
          break;
        case LayerKind::dropout:
          spec = LayerSpec::dropout(rng.bernoulli(0.5) ? 0.25 : 0.5);
          shape = {sz(n), sz(pick(1, 3)), sz(pick(1, 5)), sz(pick(1, 5))};
          break;
        case LayerKind::softmax:
          shape = {sz(n), sz(pick(2, 6))};
          break;
        default:
          shape = {sz(n), sz(pick(1, 3)), sz(pick(1, 5)), sz(pick(1, 5))};
      }
      record(s, layer_grad_check(spec, shape, case_seed));
    }
    out.push_back(s);
  }
  {
    FuzzSummary s{"concat"};
    for (int c = 0; c < cases; ++c) {
      const std::uint64_t case_seed = rng.next_u64();
      const std::size_t n = sz(pick(1, 2)), h = sz(pick(1, 4)), w = sz(pick(1, 4));
      const bool maps = rng.bernoulli(0.5);
      const Shape a = maps ? Shape{n, sz(pick(1, 3)), h, w} : Shape{n, sz(pick(1, 5))};
      const Shape b = maps ? Shape{n, sz(pick(1, 3)), h, w} : Shape{n, sz(pick(1, 5))};
      record(s, concat_grad_check(a, b, case_seed));
    }
    out.push_back(s);
  }
  const LossKind losses[] = {LossKind::mse, LossKind::mae, LossKind::mape, LossKind::msle,
                             LossKind::logcosh, LossKind::huber, LossKind::cross_entropy};
  for (LossKind kind : losses) {
    FuzzSummary s{std::string("loss:") + to_string(kind)};
    for (int c = 0; c < cases; ++c) {
      const std::uint64_t case_seed = rng.next_u64();
      const Shape shape = kind == LossKind::cross_entropy ? Shape{sz(pick(1, 4)), sz(pick(2, 6))}
                                                          : Shape{sz(pick(1, 6)), 1};
      record(s, loss_grad_check({kind, rng.bernoulli(0.5) ? 1.0 : 0.5}, shape, case_seed));
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace biqa::net
