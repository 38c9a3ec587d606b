#include "biqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "biqa/csv.hpp"
#include "biqa/error.hpp"

namespace biqa {

void ScorePair::validate() const {
  if (predicted.size() != subjective.size())
    fail(ErrorCode::shape_mismatch, "predicted and subjective score vectors differ in length");
  if (predicted.size() < 2) fail(ErrorCode::invalid_argument, "need at least two score pairs");
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (!std::isfinite(predicted[i]) || !std::isfinite(subjective[i]))
      fail(ErrorCode::numeric, "non-finite score at index " + std::to_string(i));
}

double rmse(const ScorePair& p, RmseDenominator denominator) {
  p.validate();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.predicted.size(); ++i) {
    const double d = p.predicted[i] - p.subjective[i];
    sum += d * d;
  }
  const auto n = static_cast<double>(p.predicted.size());
  return std::sqrt(sum / (denominator == RmseDenominator::n ? n : n - 1.0));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::invalid_argument, "pearson needs equal lengths >= 2");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) fail(ErrorCode::zero_variance, "correlation undefined for a zero-variance vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double plcc(const ScorePair& p) {
  p.validate();
  return pearson(p.predicted, p.subjective);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of 1-based i+1..j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double srocc(const ScorePair& p) {
  p.validate();
  const auto rp = average_ranks(p.predicted);
  const auto rs = average_ranks(p.subjective);
  return pearson(rp, rs);
}

double srocc_closed_form(const ScorePair& p) {
  p.validate();
  const auto rp = average_ranks(p.predicted);
  const auto rs = average_ranks(p.subjective);
  double d2 = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) d2 += (rp[i] - rs[i]) * (rp[i] - rs[i]);
  const auto n = static_cast<double>(rp.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

void PwrcParams::validate() const {
  if (t_steps < 2) fail(ErrorCode::invalid_argument, "PWRC needs t_steps >= 2");
  if (!(importance_beta > 0.0)) fail(ErrorCode::invalid_argument, "PWRC importance_beta must be positive");
  if (t_max && !(t_min < *t_max)) fail(ErrorCode::invalid_argument, "PWRC needs t_min < t_max");
}

PwrcResult pwrc(const ScorePair& p, const PwrcParams& params) {
  p.validate();
  params.validate();
  const auto& s = p.subjective;
  const auto& q = p.predicted;
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  PwrcResult result;
  result.t_min = params.t_min;
  result.t_max = params.t_max.value_or(*hi - *lo);
  if (!(result.t_min < result.t_max)) fail(ErrorCode::degenerate, "PWRC integration range is empty");

  struct PairTerm {
    double gap;
    double weight;
    double agreement;
  };
  std::vector<PairTerm> pairs;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      const double ds = s[i] - s[j];
      if (ds == 0.0) continue;
      const double dp = q[i] - q[j];
      const bool agree = (ds > 0.0 && dp > 0.0) || (ds < 0.0 && dp < 0.0);
      pairs.push_back({std::abs(ds), std::exp(std::max(s[i], s[j]) / params.importance_beta), agree ? 1.0 : -1.0});
    }

  const double step = (result.t_max - result.t_min) / (params.t_steps - 1);
  bool any_active = false;
  result.curve.reserve(static_cast<std::size_t>(params.t_steps));
  for (int k = 0; k < params.t_steps; ++k) {
    const double t = k + 1 == params.t_steps ? result.t_max : result.t_min + k * step;
    double num = 0.0, den = 0.0;
    for (const auto& pr : pairs)
      if (pr.gap >= t) {
        num += pr.weight * pr.agreement;
        den += pr.weight;
      }
    double value = 0.0;
    if (den > 0.0) {
      value = num / den;
      any_active = true;
    }
    result.curve.emplace_back(t, value);
  }
  if (!any_active) fail(ErrorCode::degenerate, "PWRC has no active pairs at any threshold");
  for (std::size_t k = 1; k < result.curve.size(); ++k)
    result.value += 0.5 * (result.curve[k].first - result.curve[k - 1].first) *
                    (result.curve[k].second + result.curve[k - 1].second);
  return result;
}

std::vector<double> normalize_scores(std::span<const double> scores, double src_lo, double src_hi, bool invert) {
  if (!(src_lo < src_hi)) fail(ErrorCode::invalid_argument, "degenerate source score range");
  std::vector<double> out;
  out.reserve(scores.size());
  for (double v : scores) {
    const double u = (v - src_lo) / (src_hi - src_lo);
    out.push_back(invert ? 1.0 - u : u);
  }
  return out;
}

MetricReport evaluate(const ScorePair& p, const PwrcParams& params, RmseDenominator denominator) {
  MetricReport report;
  report.rmse_denominator = denominator;
  report.rmse = rmse(p, denominator);
  report.plcc = plcc(p);
  report.srocc = srocc(p);
  const auto pw = pwrc(p, params);
  report.pwrc = pw.value;
  report.pwrc_params = params;
  report.pwrc_params.t_min = pw.t_min;
  report.pwrc_params.t_max = pw.t_max;
  report.pwrc_curve = pw.curve;
  return report;
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [t, v] : report.pwrc_curve) curve.push_back({t, v});
  return {
      {"rmse", report.rmse},
      {"plcc", report.plcc},
      {"srocc", report.srocc},
      {"pwrc", report.pwrc},
      {"rmse_denominator", report.rmse_denominator == RmseDenominator::n ? "n" : "n_minus_1"},
      {"pwrc_params",
       {{"t_min", report.pwrc_params.t_min},
        {"t_max", report.pwrc_params.t_max.value_or(0.0)},
        {"t_steps", report.pwrc_params.t_steps},
        {"importance_beta", report.pwrc_params.importance_beta}}},
      {"pwrc_curve", std::move(curve)},
  };
}

void write_pwrc_curve(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "T,S\n";
  for (const auto& [t, v] : report.pwrc_curve) out << csv::format_double(t) << ',' << csv::format_double(v) << '\n';
}

}  // namespace biqa
