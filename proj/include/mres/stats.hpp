#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace mres::stats {

struct KsTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Asymptotic Kolmogorov tail probability Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

/// One-sample KS test against a continuous CDF.
KsTest ks_one_sample(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Two-sample KS test. Ties are handled by evaluating both empirical CDFs
/// after each distinct value, which keeps the p-value conservative for
/// discrete data.
KsTest ks_two_sample(std::vector<double> a, std::vector<double> b);

/// One-sided z statistic of a paired comparison (McNemar): `improved` pairs
/// where only the baseline erred, `worsened` where only the candidate erred.
double mcnemar_z(std::int64_t improved, std::int64_t worsened);

/// Standard normal quantiles used for the confidence gates.
inline constexpr double kZ99OneSided = 2.3263478740408408;
inline constexpr double kZ99TwoSided = 2.5758293035489004;

/// Wilson score interval for a binomial proportion.
struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};
Interval wilson_interval(std::int64_t successes, std::int64_t trials, double z);

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  std::int64_t n = 0;
};
Moments moments(const std::vector<double>& x);

}  // namespace mres::stats
