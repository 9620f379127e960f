#pragma once

#include <cstddef>
#include <vector>

namespace hitl {

/// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz)
/// to relative tolerance 1e-12.
double incomplete_beta(double a, double b, double x);

/// Upper tail P(F > f) of the F distribution with (d1, d2) degrees of freedom.
double f_survival(double f, double d1, double d2);

/// Two-sided P(|T| > |t|) for Student's t with df degrees of freedom.
double t_two_sided(double t, double df);

struct AnovaResult {
  double F = 0.0;
  double p = 1.0;
  int df_between = 0;
  int df_within = 0;
  double ss_between = 0.0;
  double ss_within = 0.0;
};

/// Classical one-way ANOVA. F = inf, p = 0 when the within-group variance
/// vanishes but the group means differ. Throws std::invalid_argument for
/// fewer than 2 groups or a group with fewer than 2 samples.
AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  double mean_diff = 0.0;
  bool zero_variance = false;
};

/// t on the differences after - before.
TTestResult paired_t(const std::vector<double>& before, const std::vector<double>& after);

/// Pooled-variance two-sample t (mean of b minus mean of a).
TTestResult student_t(const std::vector<double>& a, const std::vector<double>& b);

struct PairwiseComparison {
  std::size_t first = 0;
  std::size_t second = 0;
  TTestResult test;
  double p_bonferroni = 1.0;
};

/// All pairs of groups compared with pooled two-sample t tests, p multiplied
/// by the number of pairs (capped at 1). A stand-in for Tukey's HSD.
std::vector<PairwiseComparison> pairwise_bonferroni(const std::vector<std::vector<double>>& groups);

double mean(const std::vector<double>& x);
/// Sample standard deviation (n - 1); 0 for fewer than 2 samples.
double stddev(const std::vector<double>& x);

}  // namespace hitl
