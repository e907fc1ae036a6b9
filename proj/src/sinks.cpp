#include "attngeo/sinks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "attngeo/parallel.hpp"

namespace attngeo::sinks {

void SinkConfig::validate() const {
  if (!(tau_percentile > 0.0 && tau_percentile < 100.0)) {
    throw std::invalid_argument("sink config: tau_percentile must lie in (0, 100)");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("sink config: gamma must lie in (0, 1]");
  for (double p : concentration_percentiles) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("sink config: percentiles must lie in (0, 1)");
  }
  if (!(specialization_factor > 0.0)) throw std::invalid_argument("sink config: specialization_factor must be > 0");
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto k = std::min(static_cast<std::size_t>(std::floor(pos + 1e-9)), values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

namespace {

bool is_degenerate(const AttentionMatrix& a) {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.valid_count(i); ++j) {
      lo = std::min(lo, a(i, j));
      hi = std::max(hi, a(i, j));
    }
  }
  return hi - lo <= 1e-9;
}

template <class Key>
std::pair<Key, std::size_t> modal(const std::map<Key, std::size_t>& counts) {
  std::pair<Key, std::size_t> best{};
  for (const auto& [k, c] : counts) {
    if (c > best.second) best = {k, c};
  }
  return best;
}

}  // namespace

SinkDetection detect_sinks_at(const AttentionMatrix& a, double tau, double gamma) {
  SinkDetection out;
  out.tau = tau;
  const std::size_t n = a.size();
  if (n == 0) return out;
  if (is_degenerate(a)) {
    out.degenerate = true;
    return out;
  }
  const double needed = gamma * static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (a.valid(i, j) && a(i, j) >= tau) ++hits;
    }
    if (static_cast<double>(hits) >= needed - 1e-12) out.positions.push_back(j);
  }
  return out;
}

SinkDetection detect_sinks(const AttentionMatrix& a, const SinkConfig& cfg) {
  if (a.size() == 0) return {};
  return detect_sinks_at(a, percentile(a.valid_entries(), cfg.tau_percentile), cfg.gamma);
}

double sink_concentration(const AttentionMatrix& a, const IndexSet& positions) {
  double total = 0.0, on_sinks = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) total += a(i, j);
    for (std::size_t j : positions) {
      if (j < n) on_sinks += a(i, j);
    }
  }
  return total > 0.0 ? std::clamp(on_sinks / total, 0.0, 1.0) : 0.0;
}

RowEntropy attention_entropy(const AttentionMatrix& a) {
  RowEntropy out;
  out.rows.resize(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double h = 0.0;
    for (double p : a.row(i)) {
      if (p > 0.0) h -= p * std::log(p);
    }
    out.rows[i] = std::max(h, 0.0);
  }
  if (!out.rows.empty()) {
    double sum = 0.0;
    for (double h : out.rows) sum += h;
    out.mean = sum / static_cast<double>(out.rows.size());
  }
  return out;
}

HeadFocus head_focus(const AttentionMatrix& a, double specialization_factor) {
  HeadFocus out;
  const std::size_t n = a.size();
  if (n == 0) return out;
  const auto sums = a.column_sums();
  out.top_position = static_cast<std::size_t>(std::max_element(sums.begin(), sums.end()) - sums.begin());
  out.top_share = sums[out.top_position] / static_cast<double>(n);
  out.specialized = out.top_share >= specialization_factor / static_cast<double>(n) - 1e-12;
  return out;
}

TokenSpecialization token_specialization(const dumpio::ModelDump& dump, const SinkConfig& cfg, unsigned threads) {
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  std::vector<HeadFocus> focus(S * L * H);
  parallel_for(focus.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    focus[idx] = head_focus(dump.attention(s, l, h), cfg.specialization_factor);
  });

  TokenSpecialization out;
  std::map<std::string, std::size_t> model_counts;
  for (std::size_t l = 0; l < L; ++l) {
    LayerSpecialization row;
    row.layer = l;
    std::map<std::string, std::size_t> counts;
    for (std::size_t h = 0; h < H; ++h) {
      std::size_t specialized_in = 0;
      for (std::size_t s = 0; s < S; ++s) {
        const HeadFocus& f = focus[(s * L + l) * H + h];
        const std::string& tok = dump.samples[s].tokens[f.top_position];
        ++counts[tok];
        ++model_counts[tok];
        if (f.specialized) ++specialized_in;
      }
      if (2 * specialized_in > S) ++row.specialized_heads;
    }
    const auto [tok, c] = modal(counts);
    row.top_token = tok;
    row.top_token_share = static_cast<double>(c) / static_cast<double>(S * H);
    out.specialized_heads += row.specialized_heads;
    if (!out.layers.empty() && row.specialized_heads > out.layers[out.top_layer].specialized_heads) {
      out.top_layer = l;
    }
    out.layers.push_back(std::move(row));
  }
  const auto [tok, c] = modal(model_counts);
  out.top_token = tok;
  out.top_token_share = static_cast<double>(c) / static_cast<double>(S * L * H);
  return out;
}

std::vector<std::vector<std::vector<double>>> scoped_taus(const dumpio::ModelDump& dump, double pct, TauScope scope,
                                                          unsigned threads) {
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  std::vector<std::vector<std::vector<double>>> taus(S, std::vector<std::vector<double>>(L, std::vector<double>(H)));
  switch (scope) {
    case TauScope::kHead:
      parallel_for(S * L * H, threads, [&](std::size_t idx) {
        const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
        taus[s][l][h] = percentile(dump.attention(s, l, h).valid_entries(), pct);
      });
      break;
    case TauScope::kLayer:
      parallel_for(S * L, threads, [&](std::size_t idx) {
        const std::size_t s = idx / L, l = idx % L;
        std::vector<double> pool;
        for (std::size_t h = 0; h < H; ++h) {
          const auto e = dump.attention(s, l, h).valid_entries();
          pool.insert(pool.end(), e.begin(), e.end());
        }
        const double tau = percentile(std::move(pool), pct);
        for (std::size_t h = 0; h < H; ++h) taus[s][l][h] = tau;
      });
      break;
    case TauScope::kModel: {
      std::vector<double> pool;
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t l = 0; l < L; ++l) {
          for (std::size_t h = 0; h < H; ++h) {
            const auto e = dump.attention(s, l, h).valid_entries();
            pool.insert(pool.end(), e.begin(), e.end());
          }
        }
      }
      const double tau = percentile(std::move(pool), pct);
      for (auto& per_sample : taus) {
        for (auto& per_layer : per_sample) std::fill(per_layer.begin(), per_layer.end(), tau);
      }
      break;
    }
  }
  return taus;
}

SinkReport sink_report(const dumpio::ModelDump& dump, const SinkConfig& cfg, unsigned threads) {
  cfg.validate();
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  const auto taus = scoped_taus(dump, cfg.tau_percentile, cfg.tau_scope, threads);

  struct Cell {
    SinkDetection detection;
    double concentration = 0, entropy = 0;
    HeadFocus focus;
  };
  std::vector<Cell> cells(S * L * H);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    const AttentionMatrix a = dump.attention(s, l, h);
    Cell& c = cells[idx];
    c.detection = detect_sinks_at(a, taus[s][l][h], cfg.gamma);
    c.concentration = sink_concentration(a, c.detection.positions);
    c.entropy = attention_entropy(a).mean;
    c.focus = head_focus(a, cfg.specialization_factor);
  });

  SinkReport report;
  report.detections.assign(S, std::vector<std::vector<SinkDetection>>(L, std::vector<SinkDetection>(H)));
  for (std::size_t idx = 0; idx < cells.size(); ++idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    report.detections[s][l][h] = cells[idx].detection;
  }
  const double inv_s = 1.0 / static_cast<double>(S);
  for (std::size_t l = 0; l < L; ++l) {
    LayerSinkRow lrow;
    lrow.layer = l;
    std::map<std::string, std::size_t> layer_tokens;
    for (std::size_t h = 0; h < H; ++h) {
      HeadSinkRow row;
      row.layer = l;
      row.head = h;
      row.degenerate = true;
      std::map<std::string, std::size_t> tokens;
      for (std::size_t s = 0; s < S; ++s) {
        const Cell& c = cells[(s * L + l) * H + h];
        row.sink_positions.insert(row.sink_positions.end(), c.detection.positions.begin(),
                                  c.detection.positions.end());
        row.concentration += c.concentration * inv_s;
        row.mean_entropy += c.entropy * inv_s;
        row.degenerate = row.degenerate && c.detection.degenerate;
        const std::string& tok = dump.samples[s].tokens[c.focus.top_position];
        ++tokens[tok];
        ++layer_tokens[tok];
      }
      row.sink_positions = make_index_set(std::move(row.sink_positions));
      const auto [tok, cnt] = modal(tokens);
      row.top_token = tok;
      row.top_token_share = static_cast<double>(cnt) * inv_s;
      lrow.concentration += row.concentration / static_cast<double>(H);
      lrow.mean_entropy += row.mean_entropy / static_cast<double>(H);
      report.heads.push_back(std::move(row));
    }
    for (std::size_t s = 0; s < S; ++s) {
      IndexSet head_union;
      for (std::size_t h = 0; h < H; ++h) {
        const auto& p = cells[(s * L + l) * H + h].detection.positions;
        head_union.insert(head_union.end(), p.begin(), p.end());
      }
      lrow.sink_count = std::max(lrow.sink_count, make_index_set(std::move(head_union)).size());
    }
    const auto [tok, cnt] = modal(layer_tokens);
    lrow.top_token = tok;
    lrow.top_token_share = static_cast<double>(cnt) / static_cast<double>(S * H);
    report.layers.push_back(std::move(lrow));
  }
  return report;
}

}  // namespace attngeo::sinks
