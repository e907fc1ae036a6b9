#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>

#include "attngeo/spectral.hpp"
#include "attngeo/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace attngeo;
using spectral::ThresholdGraph;

namespace {

using Edges = std::vector<std::pair<std::size_t, std::size_t>>;

Edges star_edges(std::size_t n) {
  Edges e;
  for (std::size_t i = 1; i < n; ++i) e.emplace_back(0, i);
  return e;
}

Edges complete_edges(std::size_t n) {
  Edges e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
  return e;
}

// Exact integer determinant by fraction-free Bareiss elimination.
std::int64_t bareiss_det(std::vector<std::vector<std::int64_t>> m) {
  const std::size_t n = m.size();
  std::int64_t sign = 1, prev = 1;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (m[k][k] == 0) {
      std::size_t r = k + 1;
      while (r < n && m[r][k] == 0) ++r;
      if (r == n) return 0;
      std::swap(m[k], m[r]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < n; ++i)
      for (std::size_t j = k + 1; j < n; ++j) m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
    prev = m[k][k];
  }
  return sign * m[n - 1][n - 1];
}

// det(x I - L) for the unweighted Laplacian of g.
std::int64_t char_poly_at(const ThresholdGraph& g, std::int64_t x) {
  std::vector<std::vector<std::int64_t>> m(g.n, std::vector<std::int64_t>(g.n, 0));
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      const auto lij = static_cast<std::int64_t>(i == j ? g.degree[i] : -g.adjacency[i * g.n + j]);
      m[i][j] = (i == j ? x : 0) - lij;
    }
  }
  return bareiss_det(m);
}

std::int64_t ipow(std::int64_t b, std::size_t e) {
  std::int64_t r = 1;
  while (e--) r *= b;
  return r;
}

bool uf_connected(const ThresholdGraph& g) {
  std::vector<std::size_t> parent(g.n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = i + 1; j < g.n; ++j)
      if (g.has_edge(i, j)) parent[find(i)] = find(j);
  for (std::size_t i = 0; i < g.n; ++i)
    if (find(i) != find(0)) return false;
  return true;
}

}  // namespace

TEST_CASE("uniform 8-token attention: complete at tau 0.1, empty at 0.2") {
  const auto u = AttentionMatrix::uniform(8, false);
  const auto k8 = spectral::build_graph(u, 0.1);
  CHECK(k8.edges == 28);
  CHECK(k8.density == doctest::Approx(1.0));
  const auto none = spectral::build_graph(u, 0.2);
  CHECK(none.edges == 0);
  CHECK(none.density == 0.0);
}

TEST_CASE("centralized synthetic between residual and sink mass thresholds to an exact star") {
  synth::SynthSpec spec;
  spec.causal = false;
  const auto a = synth::generate(spec).attention(0, 0, 0);
  const auto g = spectral::build_graph(a, 0.2);
  CHECK(g.edges == a.size() - 1);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) CHECK(g.has_edge(i, j) == (i == 0));
}

TEST_CASE("characteristic polynomial oracle for star and complete graphs at n = 5") {
  const std::size_t n = 5;
  const auto star = ThresholdGraph::from_edges(n, star_edges(n));
  const auto kn = ThresholdGraph::from_edges(n, complete_edges(n));
  // A monic degree-n polynomial is fixed by n + 1 values.
  for (std::int64_t x = 0; x <= static_cast<std::int64_t>(n); ++x) {
    CHECK(char_poly_at(star, x) == x * ipow(x - 1, n - 2) * (x - static_cast<std::int64_t>(n)));
    CHECK(char_poly_at(kn, x) == x * ipow(x - static_cast<std::int64_t>(n), n - 1));
  }
  CHECK(spectral::fiedler_value(star) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(spectral::fiedler_value(kn) == doctest::Approx(5.0).epsilon(1e-12));
  const auto spec = spectral::laplacian_spectrum(star);
  const std::vector<double> want{0, 1, 1, 1, 5};
  for (std::size_t k = 0; k < n; ++k) CHECK(spec[k] == doctest::Approx(want[k]).scale(1.0).epsilon(1e-12));
}

TEST_CASE("disconnected graphs have zero Fiedler value") {
  const auto g = ThresholdGraph::from_edges(4, {{0, 1}, {2, 3}});
  CHECK(spectral::fiedler_value(g) == 0.0);
  CHECK_FALSE(spectral::is_connected(g));
}

TEST_CASE("star-likeness") {
  CHECK(spectral::star_likeness(ThresholdGraph::from_edges(7, star_edges(7))) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(spectral::star_likeness(ThresholdGraph::from_edges(7, {})) == 0.0);
  // Regression constant: K5 spectrum {0,5,5,5,5} against {0,1,1,1,5}.
  CHECK(spectral::star_likeness(ThresholdGraph::from_edges(5, complete_edges(5))) ==
        doctest::Approx(0.755928946).epsilon(1e-9));
}

TEST_CASE("Freeman centralization") {
  CHECK(spectral::degree_centralization(ThresholdGraph::from_edges(6, star_edges(6))) == doctest::Approx(1.0));
  CHECK(spectral::degree_centralization(ThresholdGraph::from_edges(6, complete_edges(6))) == 0.0);
  CHECK(spectral::degree_centralization(ThresholdGraph::from_edges(6, {})) == 0.0);
  CHECK(spectral::degree_centralization(ThresholdGraph::from_edges(4, {{0, 1}, {1, 2}, {2, 3}})) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("Gini of received attention") {
  CHECK(spectral::gini_received(AttentionMatrix::uniform(9, false)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  std::vector<double> w(100, 0.0);
  for (std::size_t i = 0; i < 10; ++i) w[i * 10 + 3] = 1.0;
  CHECK(spectral::gini_received(AttentionMatrix(10, w, false)) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(spectral::gini({1, 2, 3}) == doctest::Approx(2.0 / 9.0).epsilon(1e-12));
  CHECK(spectral::gini({3, 1, 2}) == doctest::Approx(2.0 / 9.0).epsilon(1e-12));
  CHECK(spectral::gini({0, 0, 0}) == 0.0);
}

TEST_CASE("Fiedler value is positive exactly on connected graphs") {
  std::mt19937_64 rng(101);
  std::bernoulli_distribution coin(0.25);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 3 + static_cast<std::size_t>(t % 14);
    Edges e;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (coin(rng)) e.emplace_back(i, j);
    const auto g = ThresholdGraph::from_edges(n, e);
    const bool connected = uf_connected(g);
    CHECK(connected == spectral::is_connected(g));
    CHECK((spectral::fiedler_value(g) > 0.0) == connected);
    const double c = spectral::degree_centralization(g);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("relabeling vertices leaves every metric unchanged") {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = testing::random_attention(11, false, seed, 0.4);
    std::vector<std::size_t> p(a.size());
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    const auto b = testing::permuted(a, p);
    CHECK(spectral::gini_received(a) == doctest::Approx(spectral::gini_received(b)).epsilon(1e-12));
    for (double tau : spectral::kDefaultThresholds) {
      const auto ga = spectral::build_graph(a, tau), gb = spectral::build_graph(b, tau);
      CHECK(ga.edges == gb.edges);
      CHECK(spectral::fiedler_value(ga) == doctest::Approx(spectral::fiedler_value(gb)).scale(1.0).epsilon(1e-9));
      CHECK(spectral::star_likeness(ga) == doctest::Approx(spectral::star_likeness(gb)).epsilon(1e-9));
      CHECK(spectral::degree_centralization(ga) == doctest::Approx(spectral::degree_centralization(gb)).epsilon(1e-12));
      CHECK(spectral::degree_variance(ga) == doctest::Approx(spectral::degree_variance(gb)).epsilon(1e-12));
    }
  }
}

TEST_CASE("raising tau only removes edges") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = testing::random_attention(15, seed % 2 == 0, seed, 0.5);
    ThresholdGraph prev = spectral::build_graph(a, spectral::kDefaultThresholds.front());
    for (double tau : spectral::kDefaultThresholds) {
      const auto g = spectral::build_graph(a, tau);
      for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j)
          if (g.has_edge(i, j)) CHECK(prev.has_edge(i, j));
      CHECK(g.density <= prev.density);
      prev = g;
    }
  }
}

TEST_CASE("weighted graphs carry the symmetrized weight") {
  const auto a = AttentionMatrix::from_rows({{0.5, 0.3, 0.2}, {0.6, 0.3, 0.1}, {0.05, 0.15, 0.8}}, false);
  const auto g = spectral::build_graph(a, 0.1, true);
  CHECK(g.adjacency[0 * 3 + 1] == doctest::Approx(0.6));
  CHECK(g.adjacency[0 * 3 + 2] == doctest::Approx(0.2));
  CHECK(g.adjacency[1 * 3 + 2] == doctest::Approx(0.15));
  CHECK(g.degree[0] == doctest::Approx(0.8));
}

TEST_CASE("spectral rows are layer-major with one row per threshold") {
  synth::SynthSpec spec;
  spec.noise = 0.3;
  const auto d = synth::generate(spec);
  const auto rows = spectral::spectral_rows(d, {}, 1);
  REQUIRE(rows.size() == d.num_layers() * spectral::kDefaultThresholds.size());
  CHECK(rows[0].layer == 0);
  CHECK(rows[1].tau == spectral::kDefaultThresholds[1]);
  CHECK(rows.back().layer == d.num_layers() - 1);
  spectral::SpectralConfig head_mean;
  head_mean.average_heads_first = true;
  CHECK(spectral::spectral_rows(d, head_mean, 1).size() == rows.size());
}

TEST_CASE("signature correlations: proportional metrics give r = 1") {
  std::vector<spectral::SpectralRow> rows;
  for (std::size_t l = 0; l < 6; ++l) {
    for (double tau : {0.01, 0.1}) {
      spectral::SpectralRow r;
      r.layer = l;
      r.tau = tau;
      r.centralization = 0.1 * static_cast<double>(l + 1);
      r.fiedler = tau < 0.05 ? 3.0 * r.centralization : 1.0 - r.centralization;
      r.star_likeness = 0.5;
      r.degree_variance = static_cast<double>(l * l);
      r.density = 0.2;
      rows.push_back(r);
    }
  }
  const auto table = spectral::signature_correlations(rows);
  REQUIRE(table.per_tau.size() == 2);
  const auto& low = table.per_tau[0];
  for (const auto& m : low.metrics) {
    if (m.metric == "centralization") CHECK(m.pearson.r == doctest::Approx(1.0).epsilon(1e-12));
    if (m.metric == "star_likeness") CHECK(m.pearson.degenerate);
  }
  const auto* flip = table.flip_for("centralization");
  REQUIRE(flip != nullptr);
  CHECK(flip->defined);
  CHECK(flip->flip);
  CHECK(flip->low_r > 0);
  CHECK(flip->high_r < 0);
  rows.resize(4);
  CHECK_THROWS_AS(spectral::signature_correlations(rows), std::invalid_argument);
}
