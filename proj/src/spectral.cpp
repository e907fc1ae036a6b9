#include "attngeo/spectral.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "attngeo/parallel.hpp"

namespace attngeo::spectral {

namespace {

void finalize(ThresholdGraph& g) {
  const std::size_t n = g.n;
  g.degree.assign(n, 0.0);
  g.edges = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      g.degree[i] += g.adjacency[i * n + j];
      if (j > i && g.adjacency[i * n + j] != 0.0) ++g.edges;
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  g.density = n >= 2 ? static_cast<double>(g.edges) / pairs : 0.0;
}

std::vector<double> binary_degrees(const ThresholdGraph& g) {
  std::vector<double> d(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) d[i] += g.has_edge(i, j) ? 1.0 : 0.0;
  }
  return d;
}

}  // namespace

ThresholdGraph ThresholdGraph::from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  ThresholdGraph g;
  g.n = n;
  g.adjacency.assign(n * n, 0.0);
  for (const auto& [i, j] : edges) {
    if (i >= n || j >= n || i == j) throw std::invalid_argument("from_edges: bad edge");
    g.adjacency[i * n + j] = 1.0;
    g.adjacency[j * n + i] = 1.0;
  }
  finalize(g);
  return g;
}

ThresholdGraph build_graph(const AttentionMatrix& a, double tau, bool weighted) {
  if (!(tau > 0.0)) throw std::invalid_argument("build_graph: tau must be > 0");
  ThresholdGraph g;
  g.n = a.size();
  g.tau = tau;
  g.weighted = weighted;
  g.adjacency.assign(g.n * g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = i + 1; j < g.n; ++j) {
      const double w = std::max(a(i, j), a(j, i));
      if (w >= tau) {
        const double v = weighted ? w : 1.0;
        g.adjacency[i * g.n + j] = v;
        g.adjacency[j * g.n + i] = v;
      }
    }
  }
  finalize(g);
  return g;
}

std::vector<double> laplacian_spectrum(const ThresholdGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.n);
  Eigen::MatrixXd lap(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) lap(i, j) = -g.adjacency[static_cast<std::size_t>(i * n + j)];
    lap(i, i) = g.degree[static_cast<std::size_t>(i)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& ev = solver.eigenvalues();
  std::vector<double> out(ev.data(), ev.data() + ev.size());
  std::sort(out.begin(), out.end());
  return out;
}

bool is_connected(const ThresholdGraph& g) {
  if (g.n <= 1) return true;
  std::vector<bool> seen(g.n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t u = 0; u < g.n; ++u) {
      if (!seen[u] && g.has_edge(v, u)) {
        seen[u] = true;
        ++count;
        stack.push_back(u);
      }
    }
  }
  return count == g.n;
}

double fiedler_value(const ThresholdGraph& g) {
  if (g.n < 2) throw std::invalid_argument("fiedler_value: need n >= 2");
  const double v = laplacian_spectrum(g)[1];
  return v < 1e-9 && v >= -1e-9 ? 0.0 : std::max(v, 0.0);
}

double star_likeness(const ThresholdGraph& g) {
  if (g.n < 3) throw std::invalid_argument("star_likeness: need n >= 3");
  const auto spec = laplacian_spectrum(g);
  std::vector<double> star(g.n, 1.0);
  star.front() = 0.0;
  star.back() = static_cast<double>(g.n);
  double dot = 0.0, ns = 0.0, nt = 0.0;
  for (std::size_t i = 0; i < g.n; ++i) {
    const double v = std::abs(spec[i]) < 1e-12 ? 0.0 : spec[i];
    dot += v * star[i];
    ns += v * v;
    nt += star[i] * star[i];
  }
  if (ns <= 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(ns * nt), -1.0, 1.0);
}

double degree_centralization(const ThresholdGraph& g) {
  if (g.n < 3) throw std::invalid_argument("degree_centralization: need n >= 3");
  const auto d = binary_degrees(g);
  const double dmax = *std::max_element(d.begin(), d.end());
  double sum = 0.0;
  for (double v : d) sum += dmax - v;
  const double n = static_cast<double>(g.n);
  return std::clamp(sum / ((n - 1.0) * (n - 2.0)), 0.0, 1.0);
}

double degree_variance(const ThresholdGraph& g) {
  if (g.n == 0) return 0.0;
  double mean = 0.0;
  for (double v : g.degree) mean += v;
  mean /= static_cast<double>(g.n);
  double var = 0.0;
  for (double v : g.degree) var += (v - mean) * (v - mean);
  return var / static_cast<double>(g.n);
}

double gini(std::vector<double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  std::sort(values.begin(), values.end());
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (values[i] < 0.0) throw std::invalid_argument("gini: negative value");
    total += values[i];
    weighted += (2.0 * static_cast<double>(i + 1) - static_cast<double>(n) - 1.0) * values[i];
  }
  if (total <= 0.0) return 0.0;
  return std::clamp(weighted / (static_cast<double>(n) * total), 0.0, 1.0);
}

double gini_received(const AttentionMatrix& a) {
  auto sums = a.column_sums();
  for (double& v : sums) v = std::max(v, 0.0);
  return gini(std::move(sums));
}

std::vector<SpectralRow> spectral_rows(const dumpio::ModelDump& dump, const SpectralConfig& cfg, unsigned threads) {
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  const std::size_t K = cfg.thresholds.size();
  if (S == 0) throw CapabilityError("spectral_rows: dump has no attention samples");
  for (const auto& sample : dump.samples) {
    if (sample.seq_len() < 3) throw std::invalid_argument("spectral_rows: need at least 3 tokens");
  }
  const std::size_t G = cfg.average_heads_first ? 1 : H;  // graphs per (sample, layer)

  struct Cell {
    std::vector<SpectralRow> per_tau;
  };
  std::vector<Cell> cells(S * L * G);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * G), l = (idx / G) % L, h = idx % G;
    AttentionMatrix a;
    if (cfg.average_heads_first) {
      std::vector<AttentionMatrix> heads;
      for (std::size_t k = 0; k < H; ++k) heads.push_back(dump.attention(s, l, k));
      a = mean_matrix(heads);
    } else {
      a = dump.attention(s, l, h);
    }
    const double g_recv = gini_received(a);
    Cell& c = cells[idx];
    for (double tau : cfg.thresholds) {
      const ThresholdGraph g = build_graph(a, tau, cfg.weighted);
      SpectralRow r;
      r.layer = l;
      r.tau = tau;
      r.fiedler = fiedler_value(g);
      r.star_likeness = star_likeness(g);
      r.centralization = degree_centralization(g);
      r.degree_variance = degree_variance(g);
      r.gini_received = g_recv;
      r.density = g.density;
      r.connected = is_connected(g);
      r.connected_fraction = r.connected ? 1.0 : 0.0;
      c.per_tau.push_back(r);
    }
  });

  std::vector<SpectralRow> out;
  const double inv = 1.0 / static_cast<double>(S * G);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t t = 0; t < K; ++t) {
      SpectralRow acc;
      acc.layer = l;
      acc.tau = cfg.thresholds[t];
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t h = 0; h < G; ++h) {
          const SpectralRow& r = cells[(s * L + l) * G + h].per_tau[t];
          acc.fiedler += r.fiedler * inv;
          acc.star_likeness += r.star_likeness * inv;
          acc.centralization += r.centralization * inv;
          acc.degree_variance += r.degree_variance * inv;
          acc.gini_received += r.gini_received * inv;
          acc.density += r.density * inv;
          acc.connected_fraction += r.connected_fraction * inv;
        }
      }
      acc.connected = acc.connected_fraction >= 0.5;
      out.push_back(acc);
    }
  }
  return out;
}

const SignFlip* SignatureTable::flip_for(const std::string& metric) const {
  for (const auto& f : flips) {
    if (f.metric == metric) return &f;
  }
  return nullptr;
}

SignatureTable signature_correlations(const std::vector<SpectralRow>& rows) {
  std::map<double, std::vector<const SpectralRow*>> by_tau;
  for (const auto& r : rows) by_tau[r.tau].push_back(&r);
  SignatureTable table;
  for (auto& [tau, group] : by_tau) {
    if (group.size() < 3) {
      throw std::invalid_argument("signature_correlations: need at least 3 layers per threshold");
    }
    std::stable_sort(group.begin(), group.end(),
                     [](const SpectralRow* a, const SpectralRow* b) { return a->layer < b->layer; });
    TauCorrelations tc;
    tc.tau = tau;
    std::vector<double> fiedler;
    std::size_t connected = 0;
    for (const SpectralRow* r : group) {
      fiedler.push_back(r->fiedler);
      if (r->connected) ++connected;
    }
    tc.threshold_effectiveness = static_cast<double>(connected) / static_cast<double>(group.size());
    tc.fiedler_constant = std::all_of(fiedler.begin(), fiedler.end(), [&](double v) { return v == fiedler[0]; });
    for (const auto& metric : kCorrelatedMetrics) {
      std::vector<double> y;
      for (const SpectralRow* r : group) {
        if (metric == "centralization") y.push_back(r->centralization);
        else if (metric == "star_likeness") y.push_back(r->star_likeness);
        else if (metric == "degree_variance") y.push_back(r->degree_variance);
        else y.push_back(r->density);
      }
      tc.metrics.push_back({metric, stats::pearson(fiedler, y), stats::spearman(fiedler, y)});
    }
    table.per_tau.push_back(std::move(tc));
  }

  for (std::size_t m = 0; m < kCorrelatedMetrics.size(); ++m) {
    SignFlip f;
    f.metric = kCorrelatedMetrics[m];
    const TauCorrelations* low = nullptr;
    const TauCorrelations* high = nullptr;
    for (const auto& tc : table.per_tau) {
      if (tc.metrics[m].pearson.degenerate) continue;
      if (!low) low = &tc;
      high = &tc;
    }
    if (low && high && low != high) {
      f.defined = true;
      f.low_tau = low->tau;
      f.high_tau = high->tau;
      f.low_r = low->metrics[m].pearson.r;
      f.high_r = high->metrics[m].pearson.r;
      f.flip = f.low_r * f.high_r < 0.0;
    }
    table.flips.push_back(f);
  }
  return table;
}

}  // namespace attngeo::spectral
