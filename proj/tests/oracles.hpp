#pragma once

// Reference computations written independently of the library.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace biqa::testing {

// Long-double two-pass Pearson.
inline double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// 1 - 6 sum d^2 / (N (N^2 - 1)) with ranks from a stable sort; tie-free input only.
inline double srocc_closed_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<long long> r(n);
    for (std::size_t k = 0; k < n; ++k) r[order[k]] = static_cast<long long>(k);
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  long long d2 = 0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nd = static_cast<double>(n);
  return 1.0 - 6.0 * static_cast<double>(d2) / (nd * (nd * nd - 1.0));
}

// Enumerates every ordered pair at every grid threshold. A pair is active when
// its subjective gap is nonzero and reaches T; S(T) = 0 with no active pair.
inline double pwrc_oracle(const std::vector<double>& p, const std::vector<double>& s, double beta, int steps) {
  const double t_max = *std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end());
  std::vector<double> ts, vals;
  for (int k = 0; k < steps; ++k) {
    const double t = k == steps - 1 ? t_max : k * (t_max / (steps - 1));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (i == j || s[i] == s[j] || std::fabs(s[i] - s[j]) < t) continue;
        const double m = std::exp(std::max(s[i], s[j]) / beta);
        const bool agree = (s[i] - s[j]) * (p[i] - p[j]) > 0;
        num += m * (agree ? 1 : -1);
        den += m;
      }
    ts.push_back(t);
    vals.push_back(den > 0 ? num / den : 0.0);
  }
  double area = 0;
  for (std::size_t k = 1; k < ts.size(); ++k) area += (ts[k] - ts[k - 1]) * (vals[k] + vals[k - 1]) / 2;
  return area;
}

// Median by full sort.
inline double median_oracle(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace biqa::testing
