#pragma once

// Thresholded attention graphs and Laplacian spectral metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "attngeo/attention.hpp"
#include "attngeo/dumpio.hpp"
#include "attngeo/stats.hpp"

namespace attngeo::spectral {

inline const std::vector<double> kDefaultThresholds{0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2};

// Undirected graph on n vertices. Edge (i, j) exists iff max(a_ij, a_ji) >= tau.
// With `weighted`, an edge carries max(a_ij, a_ji) instead of 1.
struct ThresholdGraph {
  std::size_t n = 0;
  double tau = 0;
  bool weighted = false;
  std::vector<double> adjacency;  // n*n, symmetric, zero diagonal
  std::vector<double> degree;     // row sums of adjacency
  std::size_t edges = 0;
  double density = 0;

  bool has_edge(std::size_t i, std::size_t j) const { return adjacency[i * n + j] != 0.0; }
  // Graph from an explicit edge list (unweighted).
  static ThresholdGraph from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);
};

ThresholdGraph build_graph(const AttentionMatrix& a, double tau, bool weighted = false);

// Ascending eigenvalues of L = D - A.
std::vector<double> laplacian_spectrum(const ThresholdGraph& g);
bool is_connected(const ThresholdGraph& g);

double fiedler_value(const ThresholdGraph& g);
// Cosine between the ascending Laplacian spectrum of g and that of the star K_{1,n-1}.
// 0 for the empty graph.
double star_likeness(const ThresholdGraph& g);
// Freeman: sum_i (d_max - d_i) / ((n-1)(n-2)), on binary degrees.
double degree_centralization(const ThresholdGraph& g);
// Population variance of the degree sequence.
double degree_variance(const ThresholdGraph& g);

// Sorted-formula Gini of non-negative values; 0 when they sum to 0.
double gini(std::vector<double> values);
double gini_received(const AttentionMatrix& a);

struct SpectralRow {
  std::size_t layer = 0;
  double tau = 0;
  double fiedler = 0;
  double star_likeness = 0;
  double centralization = 0;
  double degree_variance = 0;
  double gini_received = 0;
  double density = 0;
  double connected_fraction = 0;  // share of (sample, head) graphs that are connected
  bool connected = false;         // connected_fraction >= 0.5
};

struct SpectralConfig {
  std::vector<double> thresholds = kDefaultThresholds;
  bool weighted = false;
  // Build one graph per layer from the head-mean matrix instead of averaging per-head metrics.
  bool average_heads_first = false;
};

// One row per (layer, tau), layer-major, metrics averaged over samples and heads.
std::vector<SpectralRow> spectral_rows(const dumpio::ModelDump& dump, const SpectralConfig& cfg, unsigned threads = 0);

struct MetricCorrelation {
  std::string metric;  // centralization, star_likeness, degree_variance, density
  stats::CorrResult pearson;
  stats::CorrResult spearman;
};

struct TauCorrelations {
  double tau = 0;
  double threshold_effectiveness = 0;  // fraction of layers whose graph is connected
  bool fiedler_constant = false;       // no variation across layers: correlations undefined
  std::vector<MetricCorrelation> metrics;
};

struct SignFlip {
  std::string metric;
  bool flip = false;
  double low_tau = 0, high_tau = 0;
  double low_r = 0, high_r = 0;
  bool defined = false;  // two distinct non-degenerate thresholds exist
};

struct SignatureTable {
  std::vector<TauCorrelations> per_tau;
  std::vector<SignFlip> flips;
  const SignFlip* flip_for(const std::string& metric) const;
};

inline const std::vector<std::string> kCorrelatedMetrics{"centralization", "star_likeness", "degree_variance",
                                                         "density"};

// Correlations across layers between fiedler and each metric in kCorrelatedMetrics, per tau.
// A sign flip compares the lowest and highest thresholds at which the Pearson correlation is
// non-degenerate. Throws std::invalid_argument with fewer than 3 layers.
SignatureTable signature_correlations(const std::vector<SpectralRow>& rows);

}  // namespace attngeo::spectral
