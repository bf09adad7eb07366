#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ccrec/error.hpp"

namespace ccrec::stats {

// Regularized lower incomplete gamma P(a, x): series for x < a + 1,
// continued fraction for the complement otherwise.
inline double gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw NumericError("gamma_p domain");
  if (x == 0.0) return 0.0;
  double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  // Lentz continued fraction for Q(a, x).
  double b = x + 1.0 - a, c = 1e308, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  double q = std::exp(-x + a * std::log(x) - lg) * h;
  return 1.0 - q;
}

// Chi-square survival function: P(X > x) with `dof` degrees of freedom.
inline double chi2_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return 1.0 - gamma_p(dof / 2.0, x / 2.0);
}

struct Chi2Result {
  double stat = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

// Pearson chi-square test of independence on a contingency table
// (rows x cols of counts). Rows or columns with zero totals are ignored.
inline Chi2Result chi2_independence(const std::vector<std::vector<int64_t>>& table) {
  size_t R = table.size();
  if (R == 0) throw DataError("empty contingency table");
  size_t C = table[0].size();
  for (const auto& row : table)
    if (row.size() != C) throw DimensionError("ragged contingency table");

  std::vector<double> row_tot(R, 0.0), col_tot(C, 0.0);
  double total = 0.0;
  for (size_t r = 0; r < R; ++r)
    for (size_t c = 0; c < C; ++c) {
      row_tot[r] += static_cast<double>(table[r][c]);
      col_tot[c] += static_cast<double>(table[r][c]);
      total += static_cast<double>(table[r][c]);
    }
  if (total == 0.0) throw DataError("contingency table has no observations");

  size_t r_eff = 0, c_eff = 0;
  for (double t : row_tot)
    if (t > 0) ++r_eff;
  for (double t : col_tot)
    if (t > 0) ++c_eff;

  Chi2Result res;
  for (size_t r = 0; r < R; ++r) {
    if (row_tot[r] == 0) continue;
    for (size_t c = 0; c < C; ++c) {
      if (col_tot[c] == 0) continue;
      double expected = row_tot[r] * col_tot[c] / total;
      double diff = static_cast<double>(table[r][c]) - expected;
      res.stat += diff * diff / expected;
    }
  }
  res.dof = static_cast<double>((r_eff - 1) * (c_eff - 1));
  res.p = res.dof > 0 ? chi2_sf(res.stat, res.dof) : 1.0;
  return res;
}

}  // namespace ccrec::stats
