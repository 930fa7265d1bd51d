#pragma once

// Chi-square tail probabilities for the sampling tests, via the regularized
// incomplete gamma function (series for small x, Lentz continued fraction
// otherwise).

#include <cmath>
#include <vector>

namespace statutil {

inline double gamma_q(double a, double x) {
  if (x <= 0 || a <= 0) return 1.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, del = 1.0 / a, sum = del;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-14) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return std::exp(-x + a * std::log(x) - gln) * h;
}

inline double chi2_p_value(double chi2, int dof) {
  return gamma_q(dof / 2.0, chi2 / 2.0);
}

/// Pearson statistic of observed counts against a uniform expectation.
inline double chi2_uniform(const std::vector<long>& counts, long total) {
  const double expect = static_cast<double>(total) / counts.size();
  double chi2 = 0;
  for (long c : counts) {
    const double d = c - expect;
    chi2 += d * d / expect;
  }
  return chi2;
}

}  // namespace statutil
