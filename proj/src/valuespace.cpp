#include "attngeo/valuespace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "attngeo/infogeo.hpp"
#include "attngeo/parallel.hpp"
#include "attngeo/stats.hpp"

namespace attngeo::valuespace {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

Correlation safe_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 3) return {0.0, true};
  const auto c = stats::pearson(x, y);
  return {c.r, c.degenerate};
}

}  // namespace

double relative_magnitude(std::span<const float> keys, std::size_t dh, std::size_t ref) {
  if (dh == 0 || keys.size() % dh != 0) throw std::invalid_argument("relative_magnitude: bad key shape");
  const std::size_t T = keys.size() / dh;
  if (ref >= T) throw std::invalid_argument("relative_magnitude: reference out of range");
  double mean = 0.0;
  for (std::size_t i = 0; i < T; ++i) mean += norm(keys.subspan(i * dh, dh));
  mean /= static_cast<double>(T);
  if (mean <= 0.0) throw std::invalid_argument("relative_magnitude: mean key norm is zero");
  return norm(keys.subspan(ref * dh, dh)) / mean;
}

double directional_influence(const AttentionMatrix& a, std::span<const float> values, std::size_t dh,
                             std::size_t ref) {
  const std::size_t T = a.size();
  if (dh == 0 || values.size() != T * dh) throw std::invalid_argument("directional_influence: bad value shape");
  if (ref >= T) throw std::invalid_argument("directional_influence: reference out of range");
  const auto v = to_double(values);
  const std::span<const double> vref(v.data() + ref * dh, dh);
  std::vector<double> t(dh);
  double total = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    std::fill(t.begin(), t.end(), 0.0);
    for (std::size_t j = 0; j < a.valid_count(i); ++j) {
      const double w = a(i, j);
      if (w == 0.0) continue;
      for (std::size_t k = 0; k < dh; ++k) t[k] += w * v[j * dh + k];
    }
    for (std::size_t k = 0; k < dh; ++k) t[k] -= v[i * dh + k];
    total += cosine(vref, t);
  }
  return T ? total / static_cast<double>(T) : 0.0;
}

double structural_kl(const AttentionMatrix& a, const IndexSet& refs, double epsilon) {
  return infogeo::row_conditional_kl(a, refs, epsilon);
}

Correlation geom_semantic_alignment(const AttentionMatrix& a, std::span<const float> values, std::size_t dh) {
  const std::size_t T = a.size();
  if (dh == 0 || values.size() != T * dh) throw std::invalid_argument("geom_semantic_alignment: bad value shape");
  const auto v = to_double(values);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < a.valid_count(i); ++j) {
      if (i == j) continue;
      x.push_back(a(i, j));
      y.push_back(cosine(std::span<const double>(v.data() + i * dh, dh), std::span<const double>(v.data() + j * dh, dh)));
    }
  }
  return safe_pearson(x, y);
}

std::vector<TransformLayer> transform_stats(const dumpio::ModelDump& dump, unsigned threads) {
  if (!dump.has_hidden()) throw CapabilityError("transform_stats: dump has no hidden states");
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  const std::size_t D = dump.hidden_dim();

  struct Cell {
    std::vector<double> entropy, magnitude;
  };
  std::vector<Cell> cells(S * L);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / L, l = idx % L;
    const std::size_t T = dump.samples[s].seq_len();
    Cell& c = cells[idx];
    c.entropy.assign(T, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const auto e = sinks::attention_entropy(dump.attention(s, l, h));
      for (std::size_t i = 0; i < T; ++i) c.entropy[i] += e.rows[i] / static_cast<double>(H);
    }
    const auto before = dump.hidden(s, l), after = dump.hidden(s, l + 1);
    for (std::size_t i = 0; i < T; ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double d = static_cast<double>(after[i * D + k]) - static_cast<double>(before[i * D + k]);
        sq += d * d;
      }
      c.magnitude.push_back(std::sqrt(sq));
    }
  });

  std::vector<TransformLayer> out;
  for (std::size_t l = 0; l < L; ++l) {
    TransformLayer row;
    row.layer = l;
    std::vector<double> ent, mag;
    for (std::size_t s = 0; s < S; ++s) {
      const Cell& c = cells[s * L + l];
      ent.insert(ent.end(), c.entropy.begin(), c.entropy.end());
      mag.insert(mag.end(), c.magnitude.begin(), c.magnitude.end());
    }
    row.mean_magnitude = stats::mean(mag);
    row.entropy_magnitude = safe_pearson(ent, mag);
    out.push_back(row);
  }
  return out;
}

LayerReferences layer_references(const dumpio::ModelDump& dump, const sinks::SinkReport& report, std::size_t sample,
                                 std::size_t layer) {
  LayerReferences out;
  const std::size_t H = dump.num_heads();
  for (std::size_t h = 0; h < H; ++h) {
    const auto& p = report.detections[sample][layer][h].positions;
    out.positions.insert(out.positions.end(), p.begin(), p.end());
  }
  out.positions = make_index_set(std::move(out.positions));
  if (out.positions.empty()) return out;
  std::vector<double> share(out.positions.size(), 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    const AttentionMatrix a = dump.attention(sample, layer, h);
    const auto sums = a.column_sums();
    for (std::size_t k = 0; k < out.positions.size(); ++k) share[k] += sums[out.positions[k]];
  }
  const auto best = std::max_element(share.begin(), share.end()) - share.begin();
  out.dominant = out.positions[static_cast<std::size_t>(best)];
  return out;
}

ValueSpaceReport value_space_report(const dumpio::ModelDump& dump, const sinks::SinkReport& sink_report,
                                    const ValueSpaceConfig& cfg, unsigned threads) {
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  if (S == 0) throw CapabilityError("value_space_report: dump has no attention samples");
  ValueSpaceReport out;
  out.has_qkv = dump.has_qkv();
  out.has_hidden = dump.has_hidden();
  const std::size_t dh = dump.head_dim();

  struct Cell {
    std::size_t ref_count = 0;
    bool has_reference = false;
    double rel_mag = 0, influence = 0, skl = 0, entropy = 0;
    double alignment = 0;
    std::size_t alignment_n = 0;
  };
  std::vector<Cell> cells(S * L);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / L, l = idx % L;
    Cell& c = cells[idx];
    const LayerReferences refs = layer_references(dump, sink_report, s, l);
    c.ref_count = refs.positions.size();
    c.has_reference = !refs.positions.empty();
    IndexSet used = refs.positions;
    if (cfg.policy == ReferencePolicy::kDominant && refs.dominant) used = {*refs.dominant};
    for (std::size_t h = 0; h < H; ++h) {
      const AttentionMatrix a = dump.attention(s, l, h);
      c.entropy += sinks::attention_entropy(a).mean / static_cast<double>(H);
      if (c.has_reference) {
        c.skl += structural_kl(a, used, cfg.epsilon) / static_cast<double>(H);
        if (out.has_qkv) {
          const auto k = dump.keys(s, l, h), v = dump.values(s, l, h);
          double rm = 0.0, inf = 0.0;
          for (std::size_t r : used) {
            rm += relative_magnitude(k, dh, r);
            inf += directional_influence(a, v, dh, r);
          }
          c.rel_mag += rm / static_cast<double>(used.size() * H);
          c.influence += inf / static_cast<double>(used.size() * H);
        }
      }
      if (out.has_qkv) {
        const Correlation al = geom_semantic_alignment(a, dump.values(s, l, h), dh);
        if (!al.degenerate) {
          c.alignment += al.r;
          ++c.alignment_n;
        }
      }
    }
  });

  std::vector<TransformLayer> transforms;
  if (out.has_hidden) transforms = transform_stats(dump, threads);

  double ref_sum = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    ValueSpaceRow row;
    row.layer = l;
    std::map<std::size_t, std::size_t> count_freq;
    std::size_t with_ref = 0, align_n = 0;
    double rm = 0, inf = 0, skl = 0, ent = 0, align = 0;
    for (std::size_t s = 0; s < S; ++s) {
      const Cell& c = cells[s * L + l];
      ++count_freq[c.ref_count];
      ent += c.entropy;
      align += c.alignment;
      align_n += c.alignment_n;
      if (!c.has_reference) continue;
      ++with_ref;
      rm += c.rel_mag;
      inf += c.influence;
      skl += c.skl;
    }
    std::size_t best = 0;
    for (const auto& [count, freq] : count_freq) {
      if (freq > best) {
        best = freq;
        row.ref_count = count;
      }
    }
    row.has_reference = with_ref > 0;
    row.mean_entropy = ent / static_cast<double>(S);
    row.structural_kl = with_ref ? skl / static_cast<double>(with_ref) : 0.0;
    row.relative_magnitude = out.has_qkv && with_ref ? rm / static_cast<double>(with_ref) : kNaN;
    row.directional_influence = out.has_qkv && with_ref ? inf / static_cast<double>(with_ref) : kNaN;
    row.geom_semantic_alignment = out.has_qkv ? (align_n ? align / static_cast<double>(align_n) : 0.0) : kNaN;
    if (out.has_hidden) {
      row.mean_transform_magnitude = transforms[l].mean_magnitude;
      row.entropy_magnitude_corr = transforms[l].entropy_magnitude.r;
      row.entropy_magnitude_degenerate = transforms[l].entropy_magnitude.degenerate;
    } else {
      row.mean_transform_magnitude = kNaN;
      row.entropy_magnitude_corr = kNaN;
    }
    ref_sum += static_cast<double>(row.ref_count);
    out.max_ref_count = std::max(out.max_ref_count, row.ref_count);
    out.rows.push_back(row);
  }
  out.mean_ref_count = L ? ref_sum / static_cast<double>(L) : 0.0;
  return out;
}

nlohmann::json ValueSpaceReport::summary() const {
  nlohmann::json j = nlohmann::json::object();
  if (rows.empty()) return j;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  auto pick = [&](std::size_t l) {
    const ValueSpaceRow& r = rows[l];
    return nlohmann::json{{"layer", r.layer},
                          {"relative_magnitude", num(r.relative_magnitude)},
                          {"directional_influence", num(r.directional_influence)},
                          {"structural_kl", num(r.structural_kl)},
                          {"ref_count", r.ref_count},
                          {"mean_entropy", num(r.mean_entropy)},
                          {"mean_transform_magnitude", num(r.mean_transform_magnitude)},
                          {"entropy_magnitude_corr", num(r.entropy_magnitude_corr)},
                          {"geom_semantic_alignment", num(r.geom_semantic_alignment)}};
  };
  j["first"] = pick(0);
  j["middle"] = pick(rows.size() / 2);
  j["last"] = pick(rows.size() - 1);
  j["mean_ref_count"] = mean_ref_count;
  j["max_ref_count"] = max_ref_count;
  j["has_qkv"] = has_qkv;
  j["has_hidden"] = has_hidden;
  return j;
}

}  // namespace attngeo::valuespace
