#pragma once
// Reference statistics computed a different way from the library: long-double two-pass
// moments, O(n^2) rank counting, and the Student t tail by direct quadrature of its density.
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

namespace oracle {

inline long double mean_ld(const std::vector<double>& x) {
  long double s = 0;
  for (double v : x) s += v;
  return s / static_cast<long double>(x.size());
}

inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  const long double mx = mean_ld(x), my = mean_ld(y);
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// Rank = 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) less += 1;
      if (v == x[i]) equal += 1;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double spearman_r(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_r(ranks(x), ranks(y));
}

// P(|T| >= |t|) for Student t with df degrees of freedom. With x = sqrt(df) tan(theta) the
// tail becomes c * sqrt(df) * int_{theta0}^{pi/2} cos^(df-1) theta d theta; composite Simpson.
inline double t_two_sided(double t, double df) {
  const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * std::numbers::pi);
  const double theta0 = std::atan(std::fabs(t) / std::sqrt(df));
  const double hi = std::numbers::pi / 2;
  const int n = 200000;
  const double h = (hi - theta0) / n;
  long double s = 0;
  for (int k = 0; k <= n; ++k) {
    const double th = theta0 + k * h;
    const double f = std::pow(std::max(std::cos(th), 0.0), df - 1);
    s += (k == 0 || k == n ? 1 : (k % 2 ? 4 : 2)) * static_cast<long double>(f);
  }
  const double tail = std::exp(logc) * std::sqrt(df) * static_cast<double>(s * h / 3);
  return 2 * tail;
}

inline double corr_p(double r, std::size_t n) {
  const double df = static_cast<double>(n) - 2;
  return t_two_sided(r * std::sqrt(df / (1 - r * r)), df);
}

struct Welch {
  double t, df, p;
};

inline Welch welch(const std::vector<double>& a, const std::vector<double>& b) {
  auto var = [](const std::vector<double>& x) {
    const long double m = mean_ld(x);
    long double s = 0;
    for (double v : x) s += (v - m) * (v - m);
    return static_cast<double>(s / (x.size() - 1));
  };
  const double na = a.size(), nb = b.size();
  const double qa = var(a) / na, qb = var(b) / nb;
  Welch w;
  w.t = static_cast<double>(mean_ld(a) - mean_ld(b)) / std::sqrt(qa + qb);
  w.df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1) + qb * qb / (nb - 1));
  w.p = t_two_sided(w.t, w.df);
  return w;
}

}  // namespace oracle
