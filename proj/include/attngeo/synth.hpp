#pragma once

// Synthetic attention dumps with planted reference-frame structure.
//
// Each attention row gives a fixed share to the reference positions and spreads the
// remainder over the other attendable positions with a Dirichlet draw whose concentration
// is (1 - noise) / noise, so noise = 0 yields an exactly uniform remainder and noise = 0.5
// a Dirichlet(1) remainder.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attngeo/dumpio.hpp"

namespace attngeo::synth {

enum class FrameType { kCentralized, kDistributed, kBidirectional, kUniform, kRandom };

const char* to_string(FrameType t);
FrameType frame_type_from_string(const std::string& s);

struct SynthSpec {
  FrameType frame_type = FrameType::kCentralized;
  std::size_t seq_len = 16;
  std::size_t num_layers = 6;
  std::size_t num_heads = 4;
  std::size_t head_dim = 8;
  std::size_t num_samples = 1;
  // Share of each row given to each reference position. Default: min(0.35, 0.7 / slots), where
  // bidirectional frames have two slots.
  std::optional<double> sink_mass;
  // Defaults: {0} centralized, {0, T/3, 2T/3} distributed; bidirectional always uses {0, T-1}.
  std::vector<std::size_t> ref_positions;
  // Per-layer start weight for bidirectional frames; default decays linearly 0.9 -> 0.1.
  std::optional<std::vector<double>> layer_shift;
  // Per-layer override of sink_mass.
  std::optional<std::vector<double>> mass_by_layer;
  double noise = 0.0;
  std::uint64_t seed = 0;
  // Defaults: causal for centralized, non-causal otherwise.
  std::optional<bool> causal;
  // ||k_ref|| / mean_i ||k_i|| planted in every head.
  double key_norm_ratio = 0.6;
  // Disjoint attention rings planted among non-reference tokens in the first ceil(L/3) layers.
  std::size_t rings = 0;
  double ring_mass = 0.45;
  bool with_qkv = true;
  bool with_hidden = true;
  std::string model_id;
};

// Reference positions actually used for `spec` (after defaults).
std::vector<std::size_t> resolved_refs(const SynthSpec& spec);
bool resolved_causal(const SynthSpec& spec);
// Per-reference share in layer l (after defaults and mass_by_layer).
double resolved_mass(const SynthSpec& spec, std::size_t layer);
// Start weight per layer for bidirectional frames.
std::vector<double> start_schedule(const SynthSpec& spec);

// Deterministic in `spec`; throws std::invalid_argument for infeasible specs.
dumpio::ModelDump generate(const SynthSpec& spec);

nlohmann::json ground_truth(const SynthSpec& spec);
void write_ground_truth(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace attngeo::synth
