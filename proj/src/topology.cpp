#include "attngeo/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "attngeo/parallel.hpp"

namespace attngeo::topology {

DistanceMatrix::DistanceMatrix(std::size_t n, std::vector<double> d) : n_(n), d_(std::move(d)) {
  if (d_.size() != n_ * n_) throw std::invalid_argument("distance matrix: wrong element count");
  for (std::size_t i = 0; i < n_; ++i) {
    if (std::abs(d_[i * n_ + i]) > 1e-9) throw std::invalid_argument("distance matrix: non-zero diagonal");
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double a = d_[i * n_ + j], b = d_[j * n_ + i];
      if (!std::isfinite(a) || std::abs(a - b) > 1e-9) throw std::invalid_argument("distance matrix: not symmetric");
      if (a < -1e-9 || a > 1.0 + 1e-9) throw std::invalid_argument("distance matrix: entry outside [0, 1]");
    }
  }
}

DistanceMatrix attention_to_distance(const AttentionMatrix& a, Symmetrization sym) {
  const std::size_t n = a.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double x = a(i, j), y = a(j, i);
      double s = 0.0;
      switch (sym) {
        case Symmetrization::kMax: s = std::max(x, y); break;
        case Symmetrization::kMin: s = std::min(x, y); break;
        case Symmetrization::kMean: s = 0.5 * (x + y); break;
      }
      const double v = std::clamp(1.0 - s, 0.0, 1.0);
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  }
  return DistanceMatrix(n, std::move(d));
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<unsigned char> rank_;
};

struct Edge {
  double value;
  std::uint32_t i, j;
};

struct Triangle {
  double value;
  std::uint32_t i, j, k;
};

// Symmetric difference of two ascending index lists.
void xor_into(std::vector<std::uint32_t>& target, const std::vector<std::uint32_t>& other,
              std::vector<std::uint32_t>& scratch) {
  scratch.clear();
  std::set_symmetric_difference(target.begin(), target.end(), other.begin(), other.end(), std::back_inserter(scratch));
  target.swap(scratch);
}

bool pair_less(const PersistencePair& a, const PersistencePair& b) {
  return a.birth != b.birth ? a.birth < b.birth : a.death < b.death;
}

}  // namespace

PersistenceDiagram rips_persistence(const DistanceMatrix& d, int max_dim) {
  const std::size_t n = d.size();
  if (n > kMaxPoints) {
    throw std::invalid_argument("rips_persistence: " + std::to_string(n) + " points exceeds the limit of " +
                                std::to_string(kMaxPoints));
  }
  PersistenceDiagram diag;
  if (n == 0) return diag;

  std::vector<Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) edges.push_back({d(i, j), i, j});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.value != b.value) return a.value < b.value;
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  std::vector<std::uint32_t> edge_rank(n * n, 0);
  for (std::uint32_t r = 0; r < edges.size(); ++r) {
    edge_rank[edges[r].i * n + edges[r].j] = r;
    edge_rank[edges[r].j * n + edges[r].i] = r;
  }

  // H1: reduce the triangle boundary matrix; a column's pivot edge is the cycle it kills.
  std::vector<bool> paired_edge(edges.size(), false);
  if (max_dim >= 1 && n >= 3) {
    std::vector<Triangle> tris;
    tris.reserve(n * (n - 1) * (n - 2) / 6);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        for (std::uint32_t k = j + 1; k < n; ++k) {
          tris.push_back({std::max({d(i, j), d(i, k), d(j, k)}), i, j, k});
        }
      }
    }
    std::sort(tris.begin(), tris.end(), [](const Triangle& a, const Triangle& b) {
      if (a.value != b.value) return a.value < b.value;
      if (a.i != b.i) return a.i < b.i;
      return a.j != b.j ? a.j < b.j : a.k < b.k;
    });
    std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> reduced_by_pivot;
    std::vector<std::uint32_t> column, scratch;
    for (const Triangle& t : tris) {
      column = {edge_rank[t.i * n + t.j], edge_rank[t.i * n + t.k], edge_rank[t.j * n + t.k]};
      std::sort(column.begin(), column.end());
      while (!column.empty()) {
        auto it = reduced_by_pivot.find(column.back());
        if (it == reduced_by_pivot.end()) break;
        xor_into(column, it->second, scratch);
      }
      if (column.empty()) continue;
      const std::uint32_t pivot = column.back();
      paired_edge[pivot] = true;
      const double birth = edges[pivot].value;
      if (t.value > birth) diag.dim1.push_back({birth, t.value});
      reduced_by_pivot.emplace(pivot, column);
    }
  }

  // H0: every vertex is born at 0; merging edges are the minimum spanning forest.
  UnionFind uf(n);
  for (std::uint32_t r = 0; r < edges.size(); ++r) {
    if (paired_edge[r]) continue;  // cleared: closes a cycle, never merges components
    if (uf.unite(edges[r].i, edges[r].j)) diag.dim0.push_back({0.0, edges[r].value});
  }
  std::size_t components = 0;
  for (std::size_t v = 0; v < n; ++v) {
    if (uf.find(v) == v) ++components;
  }
  for (std::size_t c = 0; c < components; ++c) diag.dim0.push_back({0.0, std::numeric_limits<double>::infinity()});

  std::sort(diag.dim0.begin(), diag.dim0.end(), pair_less);
  std::sort(diag.dim1.begin(), diag.dim1.end(), pair_less);
  return diag;
}

BettiNumbers betti_at(const PersistenceDiagram& diag, double t) {
  BettiNumbers b;
  for (const auto& p : diag.dim0) {
    if (p.birth <= t && t < p.death) ++b.b0;
  }
  for (const auto& p : diag.dim1) {
    if (p.birth <= t && t < p.death) ++b.b1;
  }
  return b;
}

std::size_t significant_count(const std::vector<PersistencePair>& pairs, double epsilon) {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [&](const PersistencePair& p) { return p.persistence() > epsilon; }));
}

double mean_finite_persistence(const std::vector<PersistencePair>& pairs) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    if (!p.finite()) continue;
    sum += p.persistence();
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TopologySummary summarize_topology(const dumpio::ModelDump& dump, const TopologyConfig& cfg, unsigned threads) {
  if (!std::is_sorted(cfg.thresholds.begin(), cfg.thresholds.end())) {
    throw std::invalid_argument("summarize_topology: thresholds must be sorted");
  }
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  if (S == 0) throw CapabilityError("summarize_topology: dump has no attention samples");
  std::vector<PersistenceDiagram> diagrams(S * L * H);
  parallel_for(diagrams.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    diagrams[idx] = rips_persistence(attention_to_distance(dump.attention(s, l, h), cfg.symmetrization));
  });

  TopologySummary out;
  out.thresholds = cfg.thresholds;
  out.epsilon = cfg.epsilon;
  out.diagrams.assign(S, std::vector<std::vector<PersistenceDiagram>>(L, std::vector<PersistenceDiagram>(H)));
  const double inv = 1.0 / static_cast<double>(S * H);
  for (std::size_t l = 0; l < L; ++l) {
    LayerTopology row;
    row.layer = l;
    row.betti0_at.assign(cfg.thresholds.size(), 0.0);
    row.betti1_at.assign(cfg.thresholds.size(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t h = 0; h < H; ++h) {
        const PersistenceDiagram& diag = diagrams[(s * L + l) * H + h];
        for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
          const BettiNumbers b = betti_at(diag, cfg.thresholds[t]);
          row.betti0_at[t] += static_cast<double>(b.b0) * inv;
          row.betti1_at[t] += static_cast<double>(b.b1) * inv;
        }
        const double p0 = mean_finite_persistence(diag.dim0);
        const double h1 = static_cast<double>(significant_count(diag.dim1, cfg.epsilon));
        row.mean_dim0_persistence += p0 * inv;
        row.mean_dim1_persistence += mean_finite_persistence(diag.dim1) * inv;
        row.significant_h0 += static_cast<double>(significant_count(diag.dim0, cfg.epsilon)) * inv;
        row.significant_h1 += h1 * inv;
        row.dim0_persistence_obs.push_back(p0);
        row.significant_h1_obs.push_back(h1);
        out.diagrams[s][l][h] = diag;
      }
    }
    out.layers.push_back(std::move(row));
  }
  return out;
}

nlohmann::json diagram_to_json(const PersistenceDiagram& diag) {
  nlohmann::json pairs = nlohmann::json::array();
  auto emit = [&](int dim, const PersistencePair& p) {
    pairs.push_back({{"dim", dim}, {"birth", p.birth}, {"death", p.finite() ? nlohmann::json(p.death) : nullptr}});
  };
  for (const auto& p : diag.dim0) emit(0, p);
  for (const auto& p : diag.dim1) emit(1, p);
  return pairs;
}

}  // namespace attngeo::topology
