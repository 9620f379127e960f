#include "hitl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hitl/error.hpp"

namespace hitl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Continued fraction for I_x(a, b), valid for x < (a + 1) / (a + b + 2).
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-12;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericalError("incomplete_beta: continued fraction did not converge");
}

void require_samples(const std::vector<double>& x, const char* what) {
  if (x.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 samples");
}

double sum_sq_dev(const std::vector<double>& x, double m) {
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s;
}

TTestResult finish_t(double diff, double se2, double df) {
  TTestResult r;
  r.df = df;
  r.mean_diff = diff;
  if (se2 == 0.0) {
    r.zero_variance = true;
    r.t = diff == 0.0 ? 0.0 : std::copysign(kInf, diff);
    r.p = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = diff / std::sqrt(se2);
  r.p = t_two_sided(r.t, df);
  return r;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double f_survival(double f, double d1, double d2) {
  if (std::isinf(f)) return 0.0;
  if (f <= 0.0) return 1.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

double t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double mean(const std::vector<double>& x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double stddev(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  return std::sqrt(sum_sq_dev(x, mean(x)) / static_cast<double>(x.size() - 1));
}

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw std::invalid_argument("anova_oneway: need at least 2 groups");
  std::vector<double> means;
  std::size_t total = 0;
  double grand = 0.0;
  for (const auto& g : groups) {
    require_samples(g, "anova_oneway");
    means.push_back(mean(g));
    total += g.size();
    for (double v : g) grand += v;
  }
  grand /= static_cast<double>(total);

  AnovaResult r;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(total - groups.size());
  const bool equal_means = std::all_of(means.begin(), means.end(), [&](double m) { return m == means[0]; });
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!equal_means) r.ss_between += static_cast<double>(groups[g].size()) * (means[g] - grand) * (means[g] - grand);
    r.ss_within += sum_sq_dev(groups[g], means[g]);
  }
  if (r.ss_between == 0.0) {
    r.F = 0.0;
    r.p = 1.0;
  } else if (r.ss_within == 0.0) {
    r.F = kInf;
    r.p = 0.0;
  } else {
    r.F = (r.ss_between / r.df_between) / (r.ss_within / r.df_within);
    r.p = f_survival(r.F, r.df_between, r.df_within);
  }
  return r;
}

TTestResult paired_t(const std::vector<double>& before, const std::vector<double>& after) {
  if (before.size() != after.size()) throw std::invalid_argument("paired_t: length mismatch");
  require_samples(before, "paired_t");
  std::vector<double> d(before.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = after[i] - before[i];
  const double n = static_cast<double>(d.size());
  const double md = mean(d);
  const double var = sum_sq_dev(d, md) / (n - 1.0);
  return finish_t(md, var / n, n - 1.0);
}

TTestResult student_t(const std::vector<double>& a, const std::vector<double>& b) {
  require_samples(a, "student_t");
  require_samples(b, "student_t");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean(a);
  const double mb = mean(b);
  const double df = na + nb - 2.0;
  const double pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / df;
  return finish_t(mb - ma, pooled * (1.0 / na + 1.0 / nb), df);
}

std::vector<PairwiseComparison> pairwise_bonferroni(const std::vector<std::vector<double>>& groups) {
  std::vector<PairwiseComparison> out;
  const std::size_t m = groups.size() * (groups.size() - 1) / 2;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      PairwiseComparison c{i, j, student_t(groups[i], groups[j]), 1.0};
      c.p_bonferroni = std::min(1.0, c.test.p * static_cast<double>(m));
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace hitl
