#pragma once

// Value-space geometry: reference-token key magnitude and value influence, structural KL,
// reference counts, hidden-state transformation magnitudes and geometric-semantic alignment.

#include <optional>
#include <span>
#include <vector>

#include "attngeo/attention.hpp"
#include "attngeo/dumpio.hpp"
#include "attngeo/sinks.hpp"
#include "json.hpp"

namespace attngeo::valuespace {

// ||k_ref|| / mean_i ||k_i|| for one head. `keys` is [T, dh] row-major.
// Throws std::invalid_argument when the mean key norm is 0.
double relative_magnitude(std::span<const float> keys, std::size_t dh, std::size_t ref);

// mean_i cos(v_ref, t_i) with t_i = (A V)_i - v_i; cos with a zero vector is 0.
double directional_influence(const AttentionMatrix& a, std::span<const float> values, std::size_t dh,
                             std::size_t ref);

// mean_i D_KL(a_i || a_i with `refs` epsilon-floored and renormalized).
double structural_kl(const AttentionMatrix& a, const IndexSet& refs, double epsilon = 1e-12);

struct Correlation {
  double r = 0;
  bool degenerate = false;
};

// Pearson over valid (i, j), i != j, between a_ij and cos(v_i, v_j).
Correlation geom_semantic_alignment(const AttentionMatrix& a, std::span<const float> values, std::size_t dh);

struct TransformLayer {
  std::size_t layer = 0;
  double mean_magnitude = 0;  // mean over (sample, row) of ||h'_i - h_i||
  Correlation entropy_magnitude;
};

// Uses hidden[l + 1] - hidden[l]; entropy is the head-averaged row entropy of layer l.
// Throws CapabilityError without hidden states.
std::vector<TransformLayer> transform_stats(const dumpio::ModelDump& dump, unsigned threads = 0);

enum class ReferencePolicy { kMeanOverSinks, kDominant };

struct LayerReferences {
  IndexSet positions;            // union of per-head sink sets
  std::optional<std::size_t> dominant;  // highest head-mean concentration
};

// Reference structure of (sample, layer) from per-head detections.
LayerReferences layer_references(const dumpio::ModelDump& dump, const sinks::SinkReport& report, std::size_t sample,
                                 std::size_t layer);

struct ValueSpaceRow {
  std::size_t layer = 0;
  double relative_magnitude = 0;      // NaN when keys are absent or no reference exists
  double directional_influence = 0;   // NaN when values are absent or no reference exists
  double structural_kl = 0;
  std::size_t ref_count = 0;          // modal head-union sink count over samples
  double mean_entropy = 0;
  double mean_transform_magnitude = 0;  // NaN without hidden states
  double entropy_magnitude_corr = 0;    // NaN without hidden states
  bool entropy_magnitude_degenerate = false;
  double geom_semantic_alignment = 0;  // NaN without values
  bool has_reference = false;
};

struct ValueSpaceConfig {
  ReferencePolicy policy = ReferencePolicy::kMeanOverSinks;
  double epsilon = 1e-12;
};

struct ValueSpaceReport {
  std::vector<ValueSpaceRow> rows;
  bool has_qkv = false;
  bool has_hidden = false;
  double mean_ref_count = 0;
  std::size_t max_ref_count = 0;
  // First, middle (L/2) and last layer values per metric.
  nlohmann::json summary() const;
};

ValueSpaceReport value_space_report(const dumpio::ModelDump& dump, const sinks::SinkReport& sink_report,
                                    const ValueSpaceConfig& cfg, unsigned threads = 0);

}  // namespace attngeo::valuespace
