#include "attngeo/infogeo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "attngeo/parallel.hpp"

namespace attngeo::infogeo {

void KLConfig::validate() const {
  if (sink_percentiles.empty()) throw std::invalid_argument("kl config: no percentiles");
  for (double p : sink_percentiles) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("kl config: percentiles must lie in (0, 1)");
  }
  if (!(epsilon > 0.0 && epsilon < 1e-3)) throw std::invalid_argument("kl config: epsilon must lie in (0, 1e-3)");
}

namespace {

std::vector<bool> membership(const IndexSet& s, std::size_t n) {
  std::vector<bool> in(n, false);
  for (std::size_t j : s) {
    if (j < n) in[j] = true;
  }
  return in;
}

double non_sink_mass(const AttentionMatrix& a, std::size_t i, const std::vector<bool>& in) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.valid_count(i); ++j) {
    if (!in[j]) m += a(i, j);
  }
  return m;
}

constexpr double kFlagMass = 1e-9;

}  // namespace

double kl_to_uniform(const AttentionMatrix& a) {
  const std::size_t n = a.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = a.valid_count(i);
    double kl = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double p = a(i, j);
      if (p > 0.0) kl += p * std::log(p * static_cast<double>(m));
    }
    total += std::max(kl, 0.0);
  }
  return total / static_cast<double>(n);
}

std::size_t Removal::kept_rows() const {
  return static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), false));
}

Removal remove_sinks(const AttentionMatrix& a, const IndexSet& removed, double epsilon) {
  const std::size_t n = a.size();
  const auto in = membership(removed, n);
  if (n > 0 && std::all_of(in.begin(), in.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("remove_sinks: cannot remove every column");
  }
  Removal out;
  out.flagged.assign(n, false);
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = a.valid_count(i);
    std::size_t k = 0;
    for (std::size_t j = 0; j < m; ++j) k += in[j] ? 1 : 0;
    const double mass = non_sink_mass(a, i, in);
    out.flagged[i] = mass < kFlagMass;
    if (k == 0 || k == m || out.flagged[i]) {
      // Nothing to remove, nothing left, or no mass left to rescale: keep the row as is.
      for (std::size_t j = 0; j < m; ++j) w[i * n + j] = a(i, j);
      continue;
    }
    const double scale = (1.0 - static_cast<double>(k) * epsilon) / mass;
    for (std::size_t j = 0; j < m; ++j) w[i * n + j] = in[j] ? epsilon : a(i, j) * scale;
  }
  out.matrix = AttentionMatrix(n, std::move(w), a.causal());
  return out;
}

double kl_without_sinks(const AttentionMatrix& a, const IndexSet& removed) {
  const std::size_t n = a.size();
  const auto in = membership(removed, n);
  double total = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = a.valid_count(i);
    std::size_t support = 0;
    for (std::size_t j = 0; j < m; ++j) support += in[j] ? 0 : 1;
    const double mass = non_sink_mass(a, i, in);
    if (support == 0 || mass < kFlagMass) continue;
    double kl = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (in[j]) continue;
      const double q = a(i, j) / mass;
      if (q > 0.0) kl += q * std::log(q * static_cast<double>(support));
    }
    total += std::max(kl, 0.0);
    ++kept;
  }
  return kept ? total / static_cast<double>(kept) : 0.0;
}

double row_conditional_kl(const AttentionMatrix& a, const IndexSet& removed, double epsilon) {
  if (removed.empty()) return 0.0;
  const Removal r = remove_sinks(a, removed, epsilon);
  const auto in = membership(removed, a.size());
  double total = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (r.flagged[i]) continue;
    ++kept;
    // No mass on the removed set: the rows agree up to the epsilon floor.
    bool touches = false;
    for (std::size_t j = 0; j < a.valid_count(i); ++j) touches = touches || (in[j] && a(i, j) > 0.0);
    if (!touches) continue;
    double kl = 0.0;
    for (std::size_t j = 0; j < a.valid_count(i); ++j) {
      const double p = a(i, j);
      if (p > 0.0) kl += p * std::log(p / r.matrix(i, j));
    }
    total += std::max(kl, 0.0);
  }
  return kept ? total / static_cast<double>(kept) : 0.0;
}

std::string to_string(Shape s) {
  switch (s) {
    case Shape::kFlat: return "flat";
    case Shape::kConsistentlyNegative: return "consistently_negative";
    case Shape::kThreePhase: return "three_phase";
    case Shape::kUShaped: return "u_shaped";
    case Shape::kOther: return "other";
  }
  return "other";
}

Bands layer_bands(std::size_t num_layers) {
  const std::size_t third = (num_layers + 2) / 3;
  Bands b;
  b.early_end = std::min(third, num_layers);
  b.late_begin = num_layers >= third ? num_layers - third : 0;
  return b;
}

int sign_of(double v, double tol) { return v > tol ? 1 : (v < -tol ? -1 : 0); }

std::vector<int> band_signs(const std::vector<int>& signs) {
  const Bands b = layer_bands(signs.size());
  auto majority = [&](std::size_t begin, std::size_t end) {
    int sum = 0;
    for (std::size_t l = begin; l < end; ++l) sum += signs[l];
    return sign_of(static_cast<double>(sum), 0.0);
  };
  const std::size_t mid_begin = b.early_end, mid_end = std::max(b.late_begin, b.early_end);
  return {majority(0, b.early_end), majority(mid_begin, mid_end), majority(b.late_begin, signs.size())};
}

Shape classify_shape(const std::vector<int>& signs) {
  if (std::all_of(signs.begin(), signs.end(), [](int s) { return s == 0; })) return Shape::kFlat;
  const auto band = band_signs(signs);
  if (band[0] < 0 && band[1] < 0 && band[2] < 0) return Shape::kConsistentlyNegative;
  if (band[0] > 0 && band[1] < 0 && band[2] > 0) return Shape::kUShaped;
  if (band[0] > 0 && band[1] < 0) return Shape::kThreePhase;
  return Shape::kOther;
}

Shape KLProfile::shape_at(double p) const {
  if (shapes.empty()) return Shape::kFlat;
  std::size_t best = 0;
  for (std::size_t k = 1; k < percentiles.size(); ++k) {
    if (std::abs(percentiles[k] - p) < std::abs(percentiles[best] - p)) best = k;
  }
  return shapes[best];
}

KLProfile kl_reduction_profile(const dumpio::ModelDump& dump, const KLConfig& cfg, const sinks::SinkConfig& sink_cfg,
                               unsigned threads) {
  cfg.validate();
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  const std::size_t P = cfg.sink_percentiles.size();
  if (S == 0) throw CapabilityError("kl_reduction_profile: dump has no attention samples");

  std::vector<std::vector<std::vector<std::vector<double>>>> taus;
  for (double p : cfg.sink_percentiles) {
    taus.push_back(sinks::scoped_taus(dump, 100.0 * p, sink_cfg.tau_scope, threads));
  }

  struct Cell {
    std::vector<KLLayerRow> per_pct;
  };
  std::vector<Cell> cells(S * L * H);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    const AttentionMatrix a = dump.attention(s, l, h);
    Cell& c = cells[idx];
    for (std::size_t k = 0; k < P; ++k) {
      KLLayerRow r;
      const auto det = sinks::detect_sinks_at(a, taus[k][s][l][h], sink_cfg.gamma);
      if (det.positions.size() >= a.size()) {
        r.saturated = 1;
        c.per_pct.push_back(r);
        continue;
      }
      const Removal rem = remove_sinks(a, det.positions, cfg.epsilon);
      // kl_original over the same rows that survive removal
      double orig = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (rem.flagged[i]) continue;
        const std::size_t m = a.valid_count(i);
        double kl = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double p = a(i, j);
          if (p > 0.0) kl += p * std::log(p * static_cast<double>(m));
        }
        orig += std::max(kl, 0.0);
      }
      const std::size_t kept = rem.kept_rows();
      r.kl_original = kept ? orig / static_cast<double>(kept) : 0.0;
      r.kl_without = kl_without_sinks(a, det.positions);
      r.kl_reduction = r.kl_original - r.kl_without;
      r.row_conditional = row_conditional_kl(a, det.positions, cfg.epsilon);
      r.sink_concentration = sinks::sink_concentration(a, det.positions);
      r.flagged_rows = a.size() - kept;
      c.per_pct.push_back(r);
    }
  });

  KLProfile out;
  out.percentiles = cfg.sink_percentiles;
  out.reference = cfg.reference;
  std::vector<std::vector<int>> signs(P);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t k = 0; k < P; ++k) {
      KLLayerRow acc;
      acc.layer = l;
      acc.percentile = cfg.sink_percentiles[k];
      std::size_t used = 0;
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t h = 0; h < H; ++h) {
          const KLLayerRow& r = cells[(s * L + l) * H + h].per_pct[k];
          acc.saturated += r.saturated;
          if (r.saturated) continue;
          ++used;
          acc.kl_original += r.kl_original;
          acc.kl_without += r.kl_without;
          acc.kl_reduction += r.kl_reduction;
          acc.row_conditional += r.row_conditional;
          acc.sink_concentration += r.sink_concentration;
          acc.flagged_rows += r.flagged_rows;
        }
      }
      if (used) {
        const double inv = 1.0 / static_cast<double>(used);
        acc.kl_original *= inv;
        acc.kl_without *= inv;
        acc.kl_reduction *= inv;
        acc.row_conditional *= inv;
        acc.sink_concentration *= inv;
      }
      const double signal = cfg.reference == Reference::kUniform ? acc.kl_reduction : acc.row_conditional;
      signs[k].push_back(sign_of(signal));
      out.rows.push_back(acc);
    }
  }
  for (std::size_t k = 0; k < P; ++k) {
    out.shapes.push_back(classify_shape(signs[k]));
    double sum = 0.0;
    for (std::size_t l = 0; l < L; ++l) sum += out.rows[l * P + k].kl_reduction;
    out.mean_reduction.push_back(L ? sum / static_cast<double>(L) : 0.0);
  }
  return out;
}

}  // namespace attngeo::infogeo
