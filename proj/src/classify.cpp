#include "attngeo/classify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace attngeo::classify {

std::string to_string(Frame f) {
  switch (f) {
    case Frame::kCentralized: return "centralized";
    case Frame::kDistributed: return "distributed";
    case Frame::kBidirectional: return "bidirectional";
    case Frame::kInconclusive: return "inconclusive";
  }
  return "inconclusive";
}

namespace {

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

double band_mean(const std::vector<topology::LayerTopology>& layers, std::size_t begin, std::size_t end,
                 double topology::LayerTopology::*field) {
  if (end <= begin) return 0.0;
  double sum = 0.0;
  for (std::size_t l = begin; l < end; ++l) sum += layers[l].*field;
  return sum / static_cast<double>(end - begin);
}

// Dominant-sink label of one (sample, layer): "first", "last" or "pos:<j>".
std::optional<std::string> dominant_label(const dumpio::ModelDump& dump, const sinks::SinkReport& report,
                                          std::size_t s, std::size_t l) {
  const auto refs = valuespace::layer_references(dump, report, s, l);
  if (!refs.dominant) return std::nullopt;
  const std::size_t T = dump.samples[s].seq_len();
  if (*refs.dominant == 0) return "first";
  if (*refs.dominant + 1 == T) return "last";
  return "pos:" + std::to_string(*refs.dominant);
}

}  // namespace

nlohmann::json FrameFeatures::to_json() const {
  return {{"bos_sink_share", opt(bos_sink_share)},
          {"dual_anchor", opt(dual_anchor)},
          {"betti0_change", opt(betti0_change)},
          {"betti1_early_mean", opt(betti1_early_mean)},
          {"persistence_trend", opt(persistence_trend)},
          {"corr_sign_flip", opt(corr_sign_flip)},
          {"kl_shape", kl_shape ? nlohmann::json(infogeo::to_string(*kl_shape)) : nlohmann::json(nullptr)},
          {"mean_ref_count", opt(mean_ref_count)}};
}

FrameFeatures extract_features(const ModuleSummaries& m, const ClassifierConfig& cfg) {
  if (!m.sinks && !m.topology && !m.signatures && !m.kl && !m.valuespace) {
    throw std::invalid_argument("extract_features: no module summaries");
  }
  FrameFeatures f;

  if (m.dump && m.sinks) {
    const std::size_t S = m.dump->samples.size(), L = m.dump->num_layers();
    std::vector<std::size_t> first_layers, last_layers;
    std::size_t with_dominant = 0;
    for (std::size_t l = 0; l < L; ++l) {
      std::map<std::string, std::size_t> counts;
      for (std::size_t s = 0; s < S; ++s) {
        if (auto label = dominant_label(*m.dump, *m.sinks, s, l)) ++counts[*label];
      }
      if (counts.empty()) continue;
      ++with_dominant;
      std::string modal;
      std::size_t best = 0;
      for (const auto& [label, c] : counts) {
        if (c > best) {
          best = c;
          modal = label;
        }
      }
      if (modal == "first") first_layers.push_back(l);
      if (modal == "last") last_layers.push_back(l);
    }
    if (with_dominant > 0) {
      f.bos_sink_share = static_cast<double>(first_layers.size()) / static_cast<double>(with_dominant);
      f.dual_anchor = !first_layers.empty() && !last_layers.empty() && first_layers.back() < last_layers.front();
    }
  }

  if (m.valuespace && m.valuespace->max_ref_count > 0) f.mean_ref_count = m.valuespace->mean_ref_count;

  if (m.topology && !m.topology->layers.empty()) {
    const auto& layers = m.topology->layers;
    const auto bands = infogeo::layer_bands(layers.size());
    const std::size_t L = layers.size();
    f.betti0_change = band_mean(layers, bands.late_begin, L, &topology::LayerTopology::significant_h0) -
                      band_mean(layers, 0, bands.early_end, &topology::LayerTopology::significant_h0);
    f.betti1_early_mean = band_mean(layers, 0, bands.early_end, &topology::LayerTopology::significant_h1);
    const double trend = band_mean(layers, bands.late_begin, L, &topology::LayerTopology::mean_dim0_persistence) -
                         band_mean(layers, 0, bands.early_end, &topology::LayerTopology::mean_dim0_persistence);
    f.persistence_trend = infogeo::sign_of(trend, 1e-12);
  }

  if (m.signatures) {
    const auto* flip = m.signatures->flip_for("centralization");
    if (flip && flip->defined) f.corr_sign_flip = flip->flip;
  }

  if (m.kl && !m.kl->shapes.empty()) f.kl_shape = m.kl->shape_at(cfg.kl_percentile);
  return f;
}

FrameVerdict classify(const FrameFeatures& f, const ClassifierConfig& cfg) {
  FrameVerdict v;

  RuleTrace r1;
  r1.id = "R1";
  r1.vote = Frame::kBidirectional;
  r1.weight = cfg.weight_bidirectional;
  r1.condition = "betti1_early_mean > " + std::to_string(cfg.betti1_min) + " OR dual_anchor";
  r1.inputs = {{"betti1_early_mean", opt(f.betti1_early_mean)}, {"dual_anchor", opt(f.dual_anchor)}};
  r1.fired = (f.betti1_early_mean && *f.betti1_early_mean > cfg.betti1_min) || (f.dual_anchor && *f.dual_anchor);

  RuleTrace r2;
  r2.id = "R2";
  r2.vote = Frame::kCentralized;
  r2.weight = cfg.weight_centralized;
  r2.condition = "bos_sink_share >= " + std::to_string(cfg.bos_share_min) + " AND |betti0_change| <= " +
                 std::to_string(cfg.betti0_change_max) + " AND mean_ref_count <= " +
                 std::to_string(cfg.ref_count_split);
  r2.inputs = {{"bos_sink_share", opt(f.bos_sink_share)},
               {"betti0_change", opt(f.betti0_change)},
               {"mean_ref_count", opt(f.mean_ref_count)}};
  r2.fired = f.bos_sink_share && f.betti0_change && f.mean_ref_count && *f.bos_sink_share >= cfg.bos_share_min &&
             std::abs(*f.betti0_change) <= cfg.betti0_change_max && *f.mean_ref_count <= cfg.ref_count_split;

  RuleTrace r3;
  r3.id = "R3";
  r3.vote = Frame::kDistributed;
  r3.weight = cfg.weight_distributed;
  r3.condition = "mean_ref_count > " + std::to_string(cfg.ref_count_split) +
                 " OR (corr_sign_flip AND kl_shape = three_phase)";
  r3.inputs = {{"mean_ref_count", opt(f.mean_ref_count)},
               {"corr_sign_flip", opt(f.corr_sign_flip)},
               {"kl_shape", f.kl_shape ? nlohmann::json(infogeo::to_string(*f.kl_shape)) : nlohmann::json(nullptr)}};
  r3.fired = (f.mean_ref_count && *f.mean_ref_count > cfg.ref_count_split) ||
             (f.corr_sign_flip && *f.corr_sign_flip && f.kl_shape && *f.kl_shape == infogeo::Shape::kThreePhase);

  v.rules = {r1, r2, r3};

  std::map<Frame, double> tally;
  double total = 0.0;
  for (const auto& r : v.rules) {
    if (!r.fired) continue;
    tally[r.vote] += r.weight;
    total += r.weight;
  }
  if (total <= 0.0) return v;
  Frame winner = Frame::kInconclusive;
  double best = -1.0;
  bool tie = false;
  for (const auto& [frame, w] : tally) {
    if (w > best) {
      best = w;
      winner = frame;
      tie = false;
    } else if (w == best) {
      tie = true;
    }
  }
  v.confidence = best / total;
  v.frame = (tie || v.confidence < 0.5) ? Frame::kInconclusive : winner;
  return v;
}

nlohmann::json FrameVerdict::to_json() const {
  nlohmann::json rules_json = nlohmann::json::array();
  for (const auto& r : rules) {
    rules_json.push_back({{"id", r.id},
                          {"vote", to_string(r.vote)},
                          {"weight", r.weight},
                          {"fired", r.fired},
                          {"condition", r.condition},
                          {"inputs", r.inputs}});
  }
  return {{"frame_type", to_string(frame)},
          {"confidence", confidence},
          {"rules", rules_json},
          {"method", "rule-based reconstruction; thresholds are configuration"}};
}

}  // namespace attngeo::classify
