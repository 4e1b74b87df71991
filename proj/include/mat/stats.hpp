#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "mat/error.hpp"

namespace mat::stats {

// Continued-fraction tolerance and iteration cap for the incomplete beta.
// Lentz's method stops once a convergent changes by < kBetaEps relative,
// which keeps the absolute error of I_x(a, b) below 1e-12 for the t-test
// parameter range (a, b in [0.5, 1e6]).
inline constexpr double kBetaEps = 1e-15;
inline constexpr int kBetaMaxIter = 10000;

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kBetaMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kBetaEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta function I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete_beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete_beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// P(T > t) for Student's t with `df` degrees of freedom.
inline double student_t_upper_tail(double t, double df) {
  if (!(df > 0.0)) throw DomainError("degrees of freedom must be positive");
  if (std::isnan(t)) throw NumericError("t statistic is NaN");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0.0 ? tail : 1.0 - tail;
}

inline double student_t_cdf(double t, double df) { return 1.0 - student_t_upper_tail(t, df); }

enum class Degeneracy {
  none,
  equal_constant,   // both samples constant and equal: t undefined, p = 0.5
  separated_constant,  // both constant, means differ: p is 0 or 1
};

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 0.5;  // one-sided, alternative mean(a) > mean(b)
  double mean_a = 0.0, mean_b = 0.0;
  double var_a = 0.0, var_b = 0.0;
  Degeneracy degeneracy = Degeneracy::none;
  bool degenerate() const { return degeneracy != Degeneracy::none; }
};

inline std::string to_string(Degeneracy d) {
  switch (d) {
    case Degeneracy::none: return "none";
    case Degeneracy::equal_constant: return "equal_constant";
    case Degeneracy::separated_constant: return "separated_constant";
  }
  return "?";
}

// Welch's unequal-variance two-sample t-test with Welch-Satterthwaite degrees
// of freedom; one-sided p-value for H1: mean(a) > mean(b).
inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("Welch t-test needs at least two observations per sample");
  auto moments = [](std::span<const double> v, double& mean, double& var) {
    double s = 0.0;
    for (double x : v) s += x;
    mean = s / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    var = ss / static_cast<double>(v.size() - 1);
  };
  WelchResult r;
  moments(a, r.mean_a, r.var_a);
  moments(b, r.mean_b, r.var_b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = r.var_a / na, sb = r.var_b / nb;
  const double se2 = sa + sb;
  if (se2 == 0.0) {
    if (r.mean_a == r.mean_b) {
      r.degeneracy = Degeneracy::equal_constant;
      r.t = 0.0;
      r.p = 0.5;
    } else {
      r.degeneracy = Degeneracy::separated_constant;
      r.t = r.mean_a > r.mean_b ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = r.mean_a > r.mean_b ? 0.0 : 1.0;
    }
    r.df = na + nb - 2.0;
    return r;
  }
  r.t = (r.mean_a - r.mean_b) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_upper_tail(r.t, r.df);
  return r;
}

}  // namespace mat::stats
