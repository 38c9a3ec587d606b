#pragma once

#include <span>
#include <vector>

namespace biqa::stats {

double mean(std::span<const double> v);
/// Sample variance (n - 1) when sample is true, population variance otherwise.
double variance(std::span<const double> v, bool sample = true);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Student t cumulative distribution with df degrees of freedom.
double student_t_cdf(double t, double df);

/// Standard normal quantile (inverse CDF), p in (0, 1).
double normal_quantile(double p);

/// Linear-interpolation quantile (Hyndman-Fan type 7) of unsorted data.
double quantile_type7(std::span<const double> v, double q);

/// Middle order statistic, or the mean of the two middle ones.
double median(std::span<const double> v);

}  // namespace biqa::stats
