#include <algorithm>
#include <cmath>
#include <random>

#include "attngeo/synth.hpp"
#include "attngeo/topology.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles/boundary_reduction.hpp"

using namespace attngeo;
using topology::DistanceMatrix;

namespace {

DistanceMatrix from_fn(std::size_t n, double (*f)(std::size_t, std::size_t)) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) d[i * n + j] = f(std::min(i, j), std::max(i, j));
  return DistanceMatrix(n, d);
}

DistanceMatrix square() {
  // Corners 0-1-2-3 in order: sides 0.3, diagonals 0.5.
  return from_fn(4, [](std::size_t i, std::size_t j) { return (j - i == 2) ? 0.5 : 0.3; });
}

std::vector<double> random_distances(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = u(rng);
  return d;
}

}  // namespace

TEST_CASE("distance from symmetric attention is 1 - a off the diagonal") {
  const auto a = AttentionMatrix::from_rows({{0.5, 0.3, 0.2}, {0.3, 0.4, 0.3}, {0.2, 0.3, 0.5}}, false);
  const auto d = topology::attention_to_distance(a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(d(i, j) == doctest::Approx(i == j ? 0.0 : 1.0 - a(i, j)).epsilon(1e-15));
}

TEST_CASE("causal distance uses the attended direction") {
  const auto a = AttentionMatrix::from_rows({{1, 0, 0}, {0.6, 0.4, 0}, {0.1, 0.7, 0.2}}, true);
  const auto d = topology::attention_to_distance(a);
  CHECK(d(0, 1) == doctest::Approx(0.4));
  CHECK(d(1, 0) == doctest::Approx(0.4));
  CHECK(d(0, 2) == doctest::Approx(0.9));
  CHECK(d(1, 2) == doctest::Approx(0.3));
  CHECK(d(2, 1) == doctest::Approx(0.3));
}

TEST_CASE("identity attention puts every pair at distance 1") {
  std::vector<double> w(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) w[i * 5 + i] = 1.0;
  const auto d = topology::attention_to_distance(AttentionMatrix(5, w, false));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(d(i, j) == (i == j ? 0.0 : 1.0));
}

TEST_CASE("min and mean symmetrization") {
  const auto a = AttentionMatrix::from_rows({{0.2, 0.8}, {0.4, 0.6}}, false);
  CHECK(topology::attention_to_distance(a, topology::Symmetrization::kMin)(0, 1) == doctest::Approx(0.6));
  CHECK(topology::attention_to_distance(a, topology::Symmetrization::kMean)(0, 1) == doctest::Approx(0.4));
  CHECK(topology::attention_to_distance(a, topology::Symmetrization::kMax)(0, 1) == doctest::Approx(0.2));
}

TEST_CASE("invalid distance matrices are rejected") {
  CHECK_THROWS_AS(DistanceMatrix(2, {0, 0.5, 0.4, 0}), std::invalid_argument);
  CHECK_THROWS_AS(DistanceMatrix(2, {0.1, 0.5, 0.5, 0}), std::invalid_argument);
  CHECK_THROWS_AS(DistanceMatrix(2, {0, 1.5, 1.5, 0}), std::invalid_argument);
  CHECK_THROWS_AS(DistanceMatrix(3, {0, 1, 1, 0}), std::invalid_argument);
}

TEST_CASE("square has one loop born at the side and filled at the diagonal") {
  const auto diag = topology::rips_persistence(square());
  REQUIRE(diag.dim1.size() == 1);
  CHECK(diag.dim1[0].birth == 0.3);
  CHECK(diag.dim1[0].death == 0.5);
  CHECK(diag.dim0.size() == 4);
  CHECK(topology::betti_at(diag, 0.4) == topology::BettiNumbers{1, 1});
  CHECK(topology::betti_at(diag, 0.0) == topology::BettiNumbers{4, 0});
  CHECK(topology::betti_at(diag, 1.0) == topology::BettiNumbers{1, 0});
}

TEST_CASE("equidistant points: n - 1 components die at 1 and no loops survive") {
  for (std::size_t n : {2, 3, 5, 8}) {
    const auto diag = topology::rips_persistence(from_fn(n, [](std::size_t, std::size_t) { return 1.0; }));
    std::size_t finite = 0;
    for (const auto& p : diag.dim0) {
      if (p.finite()) {
        ++finite;
        CHECK(p.death == 1.0);
      }
    }
    CHECK(finite == n - 1);
    CHECK(diag.dim1.empty());
  }
}

TEST_CASE("hexagon loop matches the full-reduction oracle") {
  const std::size_t n = 6;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) d[i * n + j] = ((j + n - i) % n == 1 || (i + n - j) % n == 1) ? 0.2 : 1.0;
  const auto diag = topology::rips_persistence(DistanceMatrix(n, d));
  REQUIRE(diag.dim1.size() == 1);
  CHECK(diag.dim1[0].birth == 0.2);
  std::vector<oracle::Pair> loops;
  for (const auto& p : oracle::full_reduction(n, d))
    if (p.dim == 1 && p.death > p.birth) loops.push_back(p);
  REQUIRE(loops.size() == 1);
  CHECK(diag.dim1[0].death == loops[0].death);
  CHECK(loops[0].death == 1.0);
}

TEST_CASE("matches the oracle on matrices with many ties") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> level(1, 3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + static_cast<std::size_t>(t % 6);
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = 0.25 * level(rng);
    const auto diag = topology::rips_persistence(DistanceMatrix(n, d));
    std::vector<std::pair<double, double>> got, want;
    for (const auto& p : diag.dim1) got.emplace_back(p.birth, p.death);
    for (const auto& p : oracle::full_reduction(n, d))
      if (p.dim == 1 && p.death > p.birth) want.emplace_back(p.birth, p.death);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
  }
}

TEST_CASE("small perturbations move diagram points by at most the perturbation") {
  std::mt19937_64 rng(23);
  const double delta = 1e-3;
  std::uniform_real_distribution<double> jitter(-delta, delta);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 4 + static_cast<std::size_t>(t % 9);
    auto d = random_distances(n, rng);
    auto e = d;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) e[i * n + j] = e[j * n + i] = d[i * n + j] + jitter(rng);
    const auto a = topology::rips_persistence(DistanceMatrix(n, d));
    const auto b = topology::rips_persistence(DistanceMatrix(n, e));
    // H0 deaths are the sorted minimum spanning tree weights.
    REQUIRE(a.dim0.size() == b.dim0.size());
    for (std::size_t k = 0; k + 1 < a.dim0.size(); ++k)
      CHECK(std::fabs(a.dim0[k].death - b.dim0[k].death) <= delta + 1e-15);
    // Every loop living longer than 2 delta has a partner within delta.
    for (const auto* pair : {&a, &b}) {
      const auto& mine = pair == &a ? a.dim1 : b.dim1;
      const auto& other = pair == &a ? b.dim1 : a.dim1;
      for (const auto& p : mine) {
        if (p.persistence() <= 2 * delta) continue;
        const bool matched = std::any_of(other.begin(), other.end(), [&](const auto& q) {
          return std::fabs(p.birth - q.birth) <= delta + 1e-15 && std::fabs(p.death - q.death) <= delta + 1e-15;
        });
        CHECK(matched);
      }
    }
  }
}

TEST_CASE("betti0 is non-increasing in t and changes only at diagram values") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 6;
    const auto diag = topology::rips_persistence(DistanceMatrix(n, random_distances(n, rng)));
    std::vector<double> events;
    for (const auto& p : diag.dim0)
      if (p.finite()) events.push_back(p.death);
    for (const auto& p : diag.dim1) {
      events.push_back(p.birth);
      events.push_back(p.death);
    }
    std::size_t prev = n + 1;
    auto last = topology::betti_at(diag, 0.0);
    for (int k = 0; k <= 1000; ++k) {
      const double s = k / 1000.0;
      const auto b = topology::betti_at(diag, s);
      CHECK(b.b0 <= prev);
      prev = b.b0;
      if (!(b == last)) {
        const double lo = (k - 1) / 1000.0;
        CHECK(std::any_of(events.begin(), events.end(), [&](double v) { return v > lo && v <= s; }));
      }
      last = b;
    }
  }
}

TEST_CASE("diagram invariants on random attention") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = testing::random_attention(12, seed % 2 == 0, seed);
    const auto diag = topology::rips_persistence(topology::attention_to_distance(a));
    CHECK(std::count_if(diag.dim0.begin(), diag.dim0.end(), [](const auto& p) { return !p.finite(); }) == 1);
    for (const auto& p : diag.dim0) CHECK(p.birth == 0.0);
    for (const auto& p : diag.dim1) {
      CHECK(p.finite());
      CHECK(p.death > p.birth);
    }
  }
}

TEST_CASE("too many points is rejected") {
  const std::size_t n = topology::kMaxPoints + 1;
  std::vector<double> d(n * n, 0.5);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 0.0;
  CHECK_THROWS_AS(topology::rips_persistence(DistanceMatrix(n, d)), std::invalid_argument);
}

TEST_CASE("uniform dump gives identical summaries for every layer") {
  synth::SynthSpec spec;
  spec.frame_type = synth::FrameType::kUniform;
  const auto s = topology::summarize_topology(synth::generate(spec), {}, 1);
  for (const auto& l : s.layers) {
    CHECK(l.betti0_at == s.layers[0].betti0_at);
    CHECK(l.betti1_at == s.layers[0].betti1_at);
    CHECK(l.significant_h1 == s.layers[0].significant_h1);
  }
}

TEST_CASE("planted rings show up as early-layer loops, one per ring") {
  for (std::size_t rings : {1, 2, 3}) {
    synth::SynthSpec spec;
    spec.frame_type = synth::FrameType::kBidirectional;
    spec.rings = rings;
    const auto s = topology::summarize_topology(synth::generate(spec), {}, 1);
    CHECK(s.layers[0].significant_h1 == doctest::Approx(static_cast<double>(rings)));
    CHECK(s.layers[1].significant_h1 == doctest::Approx(static_cast<double>(rings)));
    CHECK(s.layers.back().significant_h1 < static_cast<double>(rings));
  }
}

TEST_CASE("diagram JSON uses dim, birth, death with null for infinity") {
  const auto j = topology::diagram_to_json(topology::rips_persistence(square()));
  REQUIRE(j.is_array());
  std::size_t inf = 0, loops = 0;
  for (const auto& p : j) {
    if (p["death"].is_null()) ++inf;
    if (p["dim"] == 1) ++loops;
  }
  CHECK(inf == 1);
  CHECK(loops == 1);
}
