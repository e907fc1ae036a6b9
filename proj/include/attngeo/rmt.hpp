#pragma once

// Random-matrix statistics of attention spectra.

#include <map>
#include <string>
#include <vector>

#include "attngeo/attention.hpp"
#include "attngeo/dumpio.hpp"
#include "attngeo/sinks.hpp"

namespace attngeo::rmt {

// Marchenko-Pastur law with aspect ratio gamma in (0, 1] and unit variance.
class MarchenkoPastur {
 public:
  explicit MarchenkoPastur(double gamma = 1.0);
  double gamma() const { return gamma_; }
  double lower() const { return a_; }
  double upper() const { return b_; }
  double density(double x) const;
  // Mass of [x0, x1] by adaptive Simpson quadrature.
  double mass(double x0, double x1, double tol = 1e-12) const;

 private:
  double gamma_, a_, b_;
};

// Eigenvalues of A A^T, zeroed below n * machine epsilon * lambda_max, scaled by 1 / mean, descending.
std::vector<double> attention_spectrum(const AttentionMatrix& a);

// lambda_1 / lambda_2 on a descending spectrum; +inf when lambda_2 <= 1e-12 lambda_1.
double spectral_gap(const std::vector<double>& lambda);
// (sum lambda)^2 / sum lambda^2.
double participation_ratio(const std::vector<double>& lambda);
// Discrete KL between the epsilon-smoothed eigenvalue histogram on [0, max(4, lambda_max)]
// and the MP cell masses. Throws std::invalid_argument on an empty spectrum or bins < 10.
double mp_kl(const std::vector<double>& lambda, std::size_t bins = 50, double epsilon = 1e-12,
             const MarchenkoPastur& mp = MarchenkoPastur(1.0));

// ||A - A_k||_F / ||A||_F with A_k the rank-k truncated SVD. Requires 1 <= k <= n.
double low_rank_error(const AttentionMatrix& a, std::size_t k);

struct RmtConfig {
  std::size_t bins = 50;
  double epsilon = 1e-12;
  std::vector<std::size_t> ranks{1, 2, 4};
};

struct SpectrumStats {
  std::vector<double> eigenvalues;
  double spectral_gap = 0;
  double participation_ratio = 0;
  double mp_kl = 0;
  std::map<std::size_t, double> low_rank_error;
};

SpectrumStats spectrum_stats(const AttentionMatrix& a, const RmtConfig& cfg);

struct RmtRow {
  std::size_t layer = 0, head = 0;
  double spectral_gap = 0;  // mean over samples with a finite gap; +inf when none is finite
  double participation_ratio = 0;
  double mp_kl = 0;
  std::map<std::size_t, double> low_rank_error;
};

// One row per (layer, head), layer-major, averaged over samples.
std::vector<RmtRow> rmt_rows(const dumpio::ModelDump& dump, const RmtConfig& cfg, unsigned threads = 0);

struct LayerDelta {
  std::size_t layer = 0;
  double early_gap = 0, late_gap = 0;
  double early_pr = 0, late_pr = 0;
  double early_entropy = 0, late_entropy = 0;
  double early_concentration = 0, late_concentration = 0;
  double spectral_gap() const { return late_gap - early_gap; }
  double participation_ratio() const { return late_pr - early_pr; }
  double entropy() const { return late_entropy - early_entropy; }
  double concentration() const { return late_concentration - early_concentration; }
};

struct MetricExtremes {
  std::string metric;
  double mean_delta = 0;
  std::size_t largest_increase_layer = 0;
  double largest_increase = 0;
  std::size_t largest_decrease_layer = 0;
  double largest_decrease = 0;
};

struct Comparison {
  std::string early_label, late_label;
  std::vector<LayerDelta> layers;
  std::vector<MetricExtremes> extremes;  // spectral_gap, participation_ratio, entropy, concentration
};

// Head-averaged per-layer deltas (late - early). Sink concentration uses, per
// (sample, layer, head), the union of the sink sets detected in both dumps.
// Throws dumpio::DumpError (kShape) when the dumps differ in layers, heads, samples or lengths.
Comparison compare_dumps(const dumpio::ModelDump& early, const dumpio::ModelDump& late,
                         const sinks::SinkConfig& sink_cfg, unsigned threads = 0);

}  // namespace attngeo::rmt
