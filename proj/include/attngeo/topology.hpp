#pragma once

// Persistent homology (H0, H1) of the Vietoris-Rips filtration on attention-derived
// dissimilarities.

#include <cstddef>
#include <limits>
#include <vector>

#include "attngeo/attention.hpp"
#include "attngeo/dumpio.hpp"
#include "json.hpp"

namespace attngeo::topology {

inline constexpr std::size_t kMaxPoints = 128;

enum class Symmetrization { kMax, kMin, kMean };

// Symmetric, zero diagonal, entries in [0, 1].
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  // Throws std::invalid_argument when the invariants do not hold (tolerance 1e-9).
  DistanceMatrix(std::size_t n, std::vector<double> d);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  const std::vector<double>& data() const { return d_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

// d_ij = 1 - sym(a_ij, a_ji) for i != j, clamped to [0, 1].
DistanceMatrix attention_to_distance(const AttentionMatrix& a, Symmetrization sym = Symmetrization::kMax);

struct PersistencePair {
  double birth = 0.0;
  double death = std::numeric_limits<double>::infinity();
  double persistence() const { return death - birth; }
  bool finite() const { return death != std::numeric_limits<double>::infinity(); }
  friend bool operator==(const PersistencePair&, const PersistencePair&) = default;
};

struct PersistenceDiagram {
  std::vector<PersistencePair> dim0;  // births are 0; exactly one infinite pair
  std::vector<PersistencePair> dim1;  // finite, death > birth
};

// H0 by union-find over edges in filtration order; H1 by Z/2 reduction of the triangle
// boundary matrix, with edges paired to triangles cleared from the H0 pass.
// Ties are broken by lexicographic simplex order. Zero-length H1 pairs are dropped.
PersistenceDiagram rips_persistence(const DistanceMatrix& d, int max_dim = 1);

struct BettiNumbers {
  std::size_t b0 = 0, b1 = 0;
  friend bool operator==(const BettiNumbers&, const BettiNumbers&) = default;
};

// Pairs alive at scale t: birth <= t < death.
BettiNumbers betti_at(const PersistenceDiagram& diag, double t);

std::size_t significant_count(const std::vector<PersistencePair>& pairs, double epsilon);
// Mean persistence over finite pairs (0 when there are none).
double mean_finite_persistence(const std::vector<PersistencePair>& pairs);

struct TopologyConfig {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double epsilon = 0.01;
  Symmetrization symmetrization = Symmetrization::kMax;
};

struct LayerTopology {
  std::size_t layer = 0;
  std::vector<double> betti0_at;  // parallel to thresholds, mean over (sample, head)
  std::vector<double> betti1_at;
  double mean_dim0_persistence = 0;
  double mean_dim1_persistence = 0;
  double significant_h0 = 0;  // mean count of H0 features with persistence > epsilon
  double significant_h1 = 0;
  // Per-(sample, head) observations, for between-layer tests.
  std::vector<double> dim0_persistence_obs;
  std::vector<double> significant_h1_obs;
};

struct TopologySummary {
  std::vector<double> thresholds;
  double epsilon = 0;
  std::vector<LayerTopology> layers;
  // diagrams[s][l][h]
  std::vector<std::vector<std::vector<PersistenceDiagram>>> diagrams;
};

TopologySummary summarize_topology(const dumpio::ModelDump& dump, const TopologyConfig& cfg, unsigned threads = 0);

nlohmann::json diagram_to_json(const PersistenceDiagram& diag);

}  // namespace attngeo::topology
