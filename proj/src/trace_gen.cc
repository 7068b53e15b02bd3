// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <fmt/format.h>

#include <cmath>
#include <random>

#include "nbsim/serving_sim.h"

namespace nbsim {

namespace {

double pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); }
double upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Moments of max(0, Z - a) for standard normal Z.
double excess_mean(double a) { return pdf(a) - a * upper_tail(a); }
double excess_second(double a) {
  return (1 + a * a) * upper_tail(a) - a * pdf(a);
}
double excess_cv(double a) {
  double m = excess_mean(a);
  return std::sqrt(std::max(0.0, excess_second(a) - m * m)) / m;
}

}  // namespace

std::pair<double, double> censored_normal_params(double mean, double stddev,
                                                 double lo) {
  double excess = mean - lo;
  if (excess <= 0 || stddev <= 0) return {std::max(mean, lo), 0.0};
  // max(lo, N(mu, sigma)) - lo = sigma·max(0, Z - a) with a = (lo - mu)/sigma;
  // its coefficient of variation depends on a alone and rises with a.
  double target = stddev / excess;
  // Below this the censored mass is under 1e-15 and the moments are the
  // normal's own.
  if (target <= excess_cv(-8)) return {mean, stddev};
  double a_lo = -8, a_hi = 8;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (a_lo + a_hi);
    (excess_cv(mid) < target ? a_lo : a_hi) = mid;
  }
  double a = 0.5 * (a_lo + a_hi);
  double sigma = excess / excess_mean(a);
  return {lo - a * sigma, sigma};
}

std::vector<TraceRequest> gen_trace(const WorkloadStats& stats, int n,
                                    double rate, std::uint64_t seed) {
  if (n < 0) throw SpecError("gen_trace: n must be >= 0");
  if (!(rate >= 0)) throw SpecError("gen_trace: rate must be >= 0");
  std::mt19937_64 rng(seed);
  auto [in_mu, in_sigma] = censored_normal_params(stats.p_avg, stats.p_std, 1);
  auto [out_mu, out_sigma] =
      censored_normal_params(stats.d_avg, stats.d_std, 1);
  std::normal_distribution<double> z(0.0, 1.0);
  std::exponential_distribution<double> gap(rate > 0 ? rate : 1.0);
  auto sample = [&](double mu, double sigma) {
    double x = mu + sigma * z(rng);
    return std::max<std::int64_t>(1, std::llround(x));
  };

  std::vector<TraceRequest> out;
  out.reserve(n);
  double t = 0;
  for (int i = 0; i < n; ++i) {
    TraceRequest r;
    r.id = fmt::format("r{:06d}", i);
    if (rate > 0 && i > 0) t += gap(rng);
    r.arrival = t;
    r.input_len = sample(in_mu, in_sigma);
    r.output_len = sample(out_mu, out_sigma);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace nbsim
