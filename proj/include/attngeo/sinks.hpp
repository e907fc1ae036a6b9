#pragma once

// Attention-sink detection: a position j is a sink when at least a fraction gamma of the
// source rows give it a weight at or above tau, where tau is a percentile of the
// attention weights.

#include <string>
#include <vector>

#include "attngeo/attention.hpp"
#include "attngeo/dumpio.hpp"

namespace attngeo::sinks {

// Population over which the tau percentile is taken.
enum class TauScope { kHead, kLayer, kModel };

struct SinkConfig {
  double tau_percentile = 90.0;  // in (0, 100)
  double gamma = 0.4;            // in (0, 1]
  std::vector<double> concentration_percentiles{0.8, 0.9, 0.95};
  TauScope tau_scope = TauScope::kHead;
  // A head is "specialized" when its top column's mean received attention is at least
  // this multiple of the uniform share 1/T.
  double specialization_factor = 5.0;

  void validate() const;
};

struct SinkDetection {
  IndexSet positions;
  double tau = 0.0;
  bool degenerate = false;  // all valid entries equal: percentile thresholds carry no signal
};

// Lower order statistic: the sorted value at index floor(pct / 100 * (N - 1)), pct in [0, 100].
// Always an attained weight, so a threshold never falls strictly between tied sink entries.
double percentile(std::vector<double> values, double pct);

SinkDetection detect_sinks(const AttentionMatrix& a, const SinkConfig& cfg);
SinkDetection detect_sinks_at(const AttentionMatrix& a, double tau, double gamma);

// Fraction of the matrix's total mass that lands on `positions`.
double sink_concentration(const AttentionMatrix& a, const IndexSet& positions);

struct RowEntropy {
  std::vector<double> rows;  // natural log, 0 log 0 := 0
  double mean = 0.0;
};
RowEntropy attention_entropy(const AttentionMatrix& a);

// Per-head mean received attention per column (column sum / T) and the argmax column.
struct HeadFocus {
  std::size_t top_position = 0;
  double top_share = 0.0;
  bool specialized = false;
};
HeadFocus head_focus(const AttentionMatrix& a, double specialization_factor);

struct LayerSpecialization {
  std::size_t layer = 0;
  std::string top_token;       // modal top token over (sample, head)
  double top_token_share = 0;  // share of (sample, head) pairs whose top token is top_token
  std::size_t specialized_heads = 0;  // heads specialized in the majority of samples
};

struct TokenSpecialization {
  std::vector<LayerSpecialization> layers;
  std::string top_token;  // model-wide modal token
  double top_token_share = 0;
  std::size_t specialized_heads = 0;
  std::size_t top_layer = 0;  // layer with the most specialized heads
};

TokenSpecialization token_specialization(const dumpio::ModelDump& dump, const SinkConfig& cfg,
                                         unsigned threads = 0);

struct HeadSinkRow {
  std::size_t layer = 0, head = 0;
  IndexSet sink_positions;  // union over samples
  double concentration = 0;  // mean over samples
  double mean_entropy = 0;
  std::string top_token;
  double top_token_share = 0;  // share of samples whose top token is top_token
  bool degenerate = false;     // degenerate in every sample
};

struct LayerSinkRow {
  std::size_t layer = 0;
  double concentration = 0;
  double mean_entropy = 0;
  std::string top_token;
  double top_token_share = 0;  // share of heads
  std::size_t sink_count = 0;  // head-union size, max over samples
};

struct SinkReport {
  std::vector<HeadSinkRow> heads;  // layer-major
  std::vector<LayerSinkRow> layers;
  // sinks[s][l][h]: detections per sample, layer and head.
  std::vector<std::vector<std::vector<SinkDetection>>> detections;
};

SinkReport sink_report(const dumpio::ModelDump& dump, const SinkConfig& cfg, unsigned threads = 0);

// tau per (sample, layer, head) under cfg.tau_scope, at percentile `pct`.
std::vector<std::vector<std::vector<double>>> scoped_taus(const dumpio::ModelDump& dump, double pct,
                                                          TauScope scope, unsigned threads = 0);

}  // namespace attngeo::sinks
