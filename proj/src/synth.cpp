#include "attngeo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace attngeo::synth {

const char* to_string(FrameType t) {
  switch (t) {
    case FrameType::kCentralized: return "centralized";
    case FrameType::kDistributed: return "distributed";
    case FrameType::kBidirectional: return "bidirectional";
    case FrameType::kUniform: return "uniform";
    case FrameType::kRandom: return "random";
  }
  return "unknown";
}

FrameType frame_type_from_string(const std::string& s) {
  for (FrameType t : {FrameType::kCentralized, FrameType::kDistributed, FrameType::kBidirectional,
                      FrameType::kUniform, FrameType::kRandom}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown frame type '" + s + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t v : {a, b, c, d}) s = splitmix64(s ^ v);
  return std::mt19937_64(s);
}

// Dirichlet(kappa) over `count` cells; kappa = +inf gives the exact uniform vector.
std::vector<double> dirichlet(std::size_t count, double kappa, std::mt19937_64& rng) {
  std::vector<double> w(count, 1.0 / static_cast<double>(count));
  if (!std::isfinite(kappa) || count <= 1) return w;
  std::gamma_distribution<double> gamma(kappa, 1.0);
  double total = 0.0;
  for (double& x : w) {
    x = gamma(rng);
    total += x;
  }
  if (!(total > 0.0)) return std::vector<double>(count, 1.0 / static_cast<double>(count));
  for (double& x : w) x /= total;
  return w;
}

double concentration_for(double noise) { return noise <= 0.0 ? INFINITY : (1.0 - noise) / noise; }

std::vector<double> unit_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::size_t early_band(std::size_t layers) { return (layers + 2) / 3; }

// Ring successor of each token in a ring layer, or npos.
std::vector<std::size_t> ring_successors(const SynthSpec& spec, const std::vector<std::size_t>& refs) {
  constexpr auto npos = static_cast<std::size_t>(-1);
  const std::size_t T = spec.seq_len;
  std::vector<std::size_t> next(T, npos);
  if (spec.rings == 0) return next;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < T; ++i) {
    if (!std::binary_search(refs.begin(), refs.end(), i)) members.push_back(i);
  }
  const std::size_t per_ring = members.size() / spec.rings;
  std::size_t start = 0;
  for (std::size_t r = 0; r < spec.rings; ++r) {
    const std::size_t size = per_ring + (r < members.size() % spec.rings ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k) next[members[start + k]] = members[start + (k + 1) % size];
    start += size;
  }
  return next;
}

void check_spec(const SynthSpec& spec) {
  if (spec.seq_len < 1 || spec.num_layers < 1 || spec.num_heads < 1 || spec.head_dim < 1 || spec.num_samples < 1) {
    throw std::invalid_argument("synth: seq_len, layers, heads, head_dim and samples must be >= 1");
  }
  if (!(spec.noise >= 0.0 && spec.noise < 1.0)) throw std::invalid_argument("synth: noise must lie in [0, 1)");
  if (!(spec.key_norm_ratio >= 0.0)) throw std::invalid_argument("synth: key_norm_ratio must be >= 0");
  if (spec.mass_by_layer && spec.mass_by_layer->size() != spec.num_layers) {
    throw std::invalid_argument("synth: mass_by_layer needs one entry per layer");
  }
  if (spec.layer_shift) {
    if (spec.layer_shift->size() != spec.num_layers) {
      throw std::invalid_argument("synth: layer_shift needs one entry per layer");
    }
    for (double b : *spec.layer_shift) {
      if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("synth: layer_shift entries must lie in [0, 1]");
    }
  }
  const auto refs = resolved_refs(spec);
  for (std::size_t r : refs) {
    if (r >= spec.seq_len) {
      throw std::invalid_argument("synth: reference position " + std::to_string(r) + " out of range for T=" +
                                  std::to_string(spec.seq_len));
    }
  }
  const double ref_slots = spec.frame_type == FrameType::kBidirectional ? 2.0 : static_cast<double>(refs.size());
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const double m = resolved_mass(spec, l);
    if (!(m >= 0.0)) throw std::invalid_argument("synth: sink mass must be >= 0");
    if (m * ref_slots > 1.0 + 1e-12) {
      throw std::invalid_argument("synth: infeasible mass allocation, sink_mass x |refs| = " +
                                  std::to_string(m * ref_slots) + " > 1");
    }
  }
  if (spec.rings > 0) {
    if (resolved_causal(spec)) throw std::invalid_argument("synth: rings require non-causal attention");
    if (!(spec.ring_mass > 0.0 && spec.ring_mass < 1.0)) throw std::invalid_argument("synth: ring_mass in (0, 1)");
    const std::size_t members = spec.seq_len - refs.size();
    if (members / spec.rings < 4) throw std::invalid_argument("synth: each ring needs at least 4 tokens");
  }
}

}  // namespace

std::vector<std::size_t> resolved_refs(const SynthSpec& spec) {
  const std::size_t T = spec.seq_len;
  switch (spec.frame_type) {
    case FrameType::kCentralized:
      return spec.ref_positions.empty() ? std::vector<std::size_t>{0} : make_index_set(spec.ref_positions);
    case FrameType::kDistributed:
      if (!spec.ref_positions.empty()) return make_index_set(spec.ref_positions);
      return make_index_set({0, T / 3, 2 * T / 3});
    case FrameType::kBidirectional:
      return make_index_set({0, T - 1});
    case FrameType::kUniform:
    case FrameType::kRandom:
      return {};
  }
  return {};
}

bool resolved_causal(const SynthSpec& spec) {
  if (spec.causal) return *spec.causal;
  return spec.frame_type == FrameType::kCentralized;
}

double resolved_mass(const SynthSpec& spec, std::size_t layer) {
  if (spec.mass_by_layer) return (*spec.mass_by_layer)[layer];
  if (spec.sink_mass) return *spec.sink_mass;
  const std::size_t slots = spec.frame_type == FrameType::kBidirectional ? 2 : resolved_refs(spec).size();
  return slots == 0 ? 0.0 : std::min(0.35, 0.7 / static_cast<double>(slots));
}

std::vector<double> start_schedule(const SynthSpec& spec) {
  if (spec.layer_shift) return *spec.layer_shift;
  const std::size_t L = spec.num_layers;
  std::vector<double> beta(L, 0.9);
  for (std::size_t l = 0; l < L && L > 1; ++l) {
    beta[l] = 0.9 - 0.8 * static_cast<double>(l) / static_cast<double>(L - 1);
  }
  return beta;
}

dumpio::ModelDump generate(const SynthSpec& spec) {
  check_spec(spec);
  const std::size_t T = spec.seq_len, L = spec.num_layers, H = spec.num_heads, dh = spec.head_dim;
  const std::size_t D = H * dh;
  const bool causal = resolved_causal(spec);
  const auto refs = resolved_refs(spec);
  const auto beta = start_schedule(spec);
  const auto successor = ring_successors(spec, refs);
  const double kappa = concentration_for(spec.noise);
  constexpr auto npos = static_cast<std::size_t>(-1);

  dumpio::ModelDump dump;
  auto& m = dump.manifest;
  m.model_id = spec.model_id.empty() ? std::string("synth-") + to_string(spec.frame_type) : spec.model_id;
  m.num_layers = L;
  m.num_heads = H;
  m.head_dim = dh;
  m.hidden_dim = D;
  m.causal = causal;
  m.metadata = {{"generator", "synth"}, {"frame_type", to_string(spec.frame_type)}, {"seed", spec.seed}};

  for (std::size_t s = 0; s < spec.num_samples; ++s) {
    dumpio::Sample sample;
    sample.id = "s" + std::to_string(s);
    sample.tokens.resize(T);
    for (std::size_t i = 0; i < T; ++i) {
      if (i == 0) {
        sample.tokens[i] = "<s>";
      } else if (spec.frame_type == FrameType::kBidirectional && i == T - 1) {
        sample.tokens[i] = "</s>";
      } else if (std::binary_search(refs.begin(), refs.end(), i)) {
        sample.tokens[i] = ",";
      } else {
        sample.tokens[i] = "t" + std::to_string(i);
      }
    }
    sample.attention.assign(L * H * T * T, 0.0f);
    std::vector<float> q(L * H * T * dh), k(L * H * T * dh), v(L * H * T * dh);

    for (std::size_t l = 0; l < L; ++l) {
      const double mass = resolved_mass(spec, l);
      const bool ring_layer = spec.rings > 0 && l < early_band(L);
      for (std::size_t h = 0; h < H; ++h) {
        auto rng = stream_rng(spec.seed, s, l, h, 0);
        float* A = sample.attention.data() + (l * H + h) * T * T;
        for (std::size_t i = 0; i < T; ++i) {
          const std::size_t valid = causal ? i + 1 : T;
          std::vector<double> row(T, 0.0);
          if (spec.frame_type == FrameType::kUniform) {
            for (std::size_t j = 0; j < valid; ++j) row[j] = 1.0 / static_cast<double>(valid);
          } else if (spec.frame_type == FrameType::kRandom) {
            const auto w = dirichlet(valid, 1.0, rng);
            for (std::size_t j = 0; j < valid; ++j) row[j] = w[j];
          } else {
            const std::size_t ring_target = ring_layer ? successor[i] : npos;
            // Reference shares for this row.
            std::vector<std::pair<std::size_t, double>> shares;
            for (std::size_t r : refs) {
              if (r >= valid) continue;
              double share = mass;
              if (spec.frame_type == FrameType::kBidirectional) {
                share = 2.0 * mass * (r == 0 ? beta[l] : 1.0 - beta[l]);
              }
              shares.emplace_back(r, share);
            }
            std::vector<std::size_t> rest;
            for (std::size_t j = 0; j < valid; ++j) {
              if (j == ring_target || std::binary_search(refs.begin(), refs.end(), j)) continue;
              rest.push_back(j);
            }
            double ref_total = 0.0;
            for (const auto& [r, a] : shares) ref_total += a;
            if (rest.empty()) {
              // Only reference positions are attendable: split the row among them.
              for (const auto& [r, a] : shares) {
                row[r] = ref_total > 0.0 ? a / ref_total : 1.0 / static_cast<double>(shares.size());
              }
            } else {
              for (const auto& [r, a] : shares) row[r] = a;
              const auto w = dirichlet(rest.size(), kappa, rng);
              for (std::size_t k2 = 0; k2 < rest.size(); ++k2) row[rest[k2]] = (1.0 - ref_total) * w[k2];
            }
            if (ring_target != npos) {
              for (double& a : row) a *= 1.0 - spec.ring_mass;
              row[ring_target] = spec.ring_mass;
            }
          }
          for (std::size_t j = 0; j < T; ++j) A[i * T + j] = static_cast<float>(row[j]);
        }

        // Keys: unit directions, reference keys rescaled so ||k_ref|| / mean ||k|| = key_norm_ratio.
        auto vrng = stream_rng(spec.seed, s, l, h, 1);
        const double n_ref = static_cast<double>(refs.size());
        const double ref_norm =
            refs.empty() ? 1.0
                         : spec.key_norm_ratio * (static_cast<double>(T) - n_ref) /
                               (static_cast<double>(T) - spec.key_norm_ratio * n_ref);
        const std::size_t base = (l * H + h) * T * dh;
        for (std::size_t i = 0; i < T; ++i) {
          const bool is_ref = std::binary_search(refs.begin(), refs.end(), i);
          const auto kd = unit_vector(dh, vrng);
          const auto qd = unit_vector(dh, vrng);
          const auto vd = unit_vector(dh, vrng);
          for (std::size_t c = 0; c < dh; ++c) {
            k[base + i * dh + c] = static_cast<float>(kd[c] * (is_ref ? ref_norm : 1.0));
            q[base + i * dh + c] = static_cast<float>(qd[c]);
            v[base + i * dh + c] = static_cast<float>(vd[c]);
          }
        }
      }
    }

    if (spec.with_hidden) {
      // h_{l+1} = h_l + concat_h(A_{l,h} V_{l,h}) computed from the stored float tensors.
      std::vector<float> hidden((L + 1) * T * D);
      auto hrng = stream_rng(spec.seed, s, 0, 0, 2);
      std::normal_distribution<double> normal(0.0, 0.1);
      for (std::size_t k2 = 0; k2 < T * D; ++k2) hidden[k2] = static_cast<float>(normal(hrng));
      for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < T; ++i) {
          for (std::size_t h = 0; h < H; ++h) {
            const float* A = sample.attention.data() + (l * H + h) * T * T;
            const float* V = v.data() + (l * H + h) * T * dh;
            for (std::size_t c = 0; c < dh; ++c) {
              double lift = 0.0;
              for (std::size_t j = 0; j < T; ++j) lift += static_cast<double>(A[i * T + j]) * V[j * dh + c];
              const std::size_t col = h * dh + c;
              hidden[((l + 1) * T + i) * D + col] =
                  static_cast<float>(static_cast<double>(hidden[(l * T + i) * D + col]) + lift);
            }
          }
        }
      }
      sample.hidden = std::move(hidden);
    }
    if (spec.with_qkv) {
      sample.q = std::move(q);
      sample.k = std::move(k);
      sample.v = std::move(v);
    }
    dump.samples.push_back(std::move(sample));
  }
  if (!spec.with_qkv) dump.manifest.head_dim.reset();
  return dump;
}

nlohmann::json ground_truth(const SynthSpec& spec) {
  nlohmann::json j;
  j["frame_type"] = to_string(spec.frame_type);
  j["ref_positions"] = resolved_refs(spec);
  std::vector<double> masses;
  for (std::size_t l = 0; l < spec.num_layers; ++l) masses.push_back(resolved_mass(spec, l));
  j["sink_mass_by_layer"] = masses;
  j["noise"] = spec.noise;
  j["seed"] = spec.seed;
  j["causal"] = resolved_causal(spec);
  j["rings"] = spec.rings;
  if (spec.frame_type == FrameType::kBidirectional) j["start_schedule"] = start_schedule(spec);
  return j;
}

void write_ground_truth(const SynthSpec& spec, const std::filesystem::path& dir) {
  std::ofstream out(dir / "ground_truth.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "ground_truth.json").string());
  out << ground_truth(spec).dump(2) << '\n';
}

}  // namespace attngeo::synth
