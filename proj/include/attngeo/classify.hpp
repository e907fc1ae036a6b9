#pragma once

// Rule-based reference-frame classification from module summaries.

#include <optional>
#include <string>
#include <vector>

#include "attngeo/dumpio.hpp"
#include "attngeo/infogeo.hpp"
#include "attngeo/sinks.hpp"
#include "attngeo/spectral.hpp"
#include "attngeo/topology.hpp"
#include "attngeo/valuespace.hpp"
#include "json.hpp"

namespace attngeo::classify {

enum class Frame { kCentralized, kDistributed, kBidirectional, kInconclusive };
std::string to_string(Frame f);

// Absent (std::nullopt) features are excluded from voting.
struct FrameFeatures {
  std::optional<double> bos_sink_share;  // fraction of sink-bearing layers whose dominant sink is position 0
  std::optional<bool> dual_anchor;       // position-0 layers all precede position-(T-1) layers
  std::optional<double> betti0_change;   // late - early mean count of persistent H0 features
  std::optional<double> betti1_early_mean;
  std::optional<int> persistence_trend;  // sign of late - early mean H0 persistence
  std::optional<bool> corr_sign_flip;    // fiedler vs centralization
  std::optional<infogeo::Shape> kl_shape;
  std::optional<double> mean_ref_count;

  nlohmann::json to_json() const;
};

struct ClassifierConfig {
  double bos_share_min = 0.8;
  double betti1_min = 1.0;  // strictly greater fires
  double betti0_change_max = 0.5;
  double ref_count_split = 1.5;
  double weight_bidirectional = 2.0;
  double weight_centralized = 1.0;
  double weight_distributed = 1.0;
  double kl_percentile = 0.8;
};

struct RuleTrace {
  std::string id;  // R1, R2, R3
  Frame vote = Frame::kInconclusive;
  double weight = 0;
  bool fired = false;
  std::string condition;
  nlohmann::json inputs;
};

struct FrameVerdict {
  Frame frame = Frame::kInconclusive;
  double confidence = 0;
  std::vector<RuleTrace> rules;  // every rule, fired or not

  nlohmann::json to_json() const;
};

struct ModuleSummaries {
  const dumpio::ModelDump* dump = nullptr;
  const sinks::SinkReport* sinks = nullptr;
  const topology::TopologySummary* topology = nullptr;
  const spectral::SignatureTable* signatures = nullptr;
  const infogeo::KLProfile* kl = nullptr;
  const valuespace::ValueSpaceReport* valuespace = nullptr;
};

// Throws std::invalid_argument when no summary is present.
FrameFeatures extract_features(const ModuleSummaries& m, const ClassifierConfig& cfg = {});

FrameVerdict classify(const FrameFeatures& f, const ClassifierConfig& cfg = {});

}  // namespace attngeo::classify
