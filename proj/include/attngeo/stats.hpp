#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace attngeo::stats {

inline constexpr double kAlpha = 0.05;

struct CorrResult {
  double r = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  bool degenerate = false;  // zero variance in either input
};

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  double df = 0.0;
};

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
// Two-sided p-value of Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

double mean(std::span<const double> x);
// Unbiased (n - 1) sample variance.
double sample_variance(std::span<const double> x);

// Throws std::invalid_argument when sizes differ, n < 3, or inputs are non-finite.
CorrResult pearson(std::span<const double> x, std::span<const double> y);
CorrResult spearman(std::span<const double> x, std::span<const double> y);
// Average ranks (1-based), ties share their midrank.
std::vector<double> midranks(std::span<const double> x);

// Welch's unequal-variance t-test, two-sided. Requires |a|, |b| >= 2.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct SignificanceCount {
  std::size_t significant = 0;
  std::size_t total = 0;
  void add(double p_value) {
    ++total;
    if (p_value < kAlpha) ++significant;
  }
  std::string label() const;  // "m/n significant (alpha=0.05)"
};

struct LayerTest {
  std::size_t layer_a = 0, layer_b = 0;
  TTestResult result;
};

// Welch tests between consecutive layers' observation sets (layers with < 2 observations skipped).
std::vector<LayerTest> consecutive_layer_tests(const std::vector<std::vector<double>>& per_layer);

}  // namespace attngeo::stats
