#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "attngeo/rmt.hpp"
#include "attngeo/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles/mp_sampler.hpp"

using namespace attngeo;

namespace {

// Rank-1 residual ||A - s1 u1 v1^T||_F / ||A||_F via power iteration on A^T A.
double power_iteration_rank1_error(const AttentionMatrix& a) {
  const std::size_t n = a.size();
  std::vector<double> v(n, 1.0), w(n);
  double sigma2 = 0;
  for (int it = 0; it < 5000; ++it) {
    std::vector<double> av(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) av[i] += a(i, j) * v[j];
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) w[j] += a(i, j) * av[i];
    const double len = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / len;
    sigma2 = len;
  }
  double fro2 = 0;
  for (double x : a.data()) fro2 += x * x;
  return std::sqrt(std::max(fro2 - sigma2, 0.0) / fro2);
}

}  // namespace

TEST_CASE("rank-one attention: one nonzero eigenvalue n and participation ratio 1") {
  for (std::size_t n : {3, 8, 17}) {
    const auto lambda = rmt::attention_spectrum(AttentionMatrix::uniform(n, false));
    CHECK(lambda[0] == doctest::Approx(static_cast<double>(n)));
    for (std::size_t k = 1; k < n; ++k) CHECK(lambda[k] == 0.0);
    CHECK(rmt::participation_ratio(lambda) == 1.0);
    CHECK(std::isinf(rmt::spectral_gap(lambda)));
  }
}

TEST_CASE("identity attention: flat spectrum") {
  const std::size_t n = 9;
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  const auto lambda = rmt::attention_spectrum(AttentionMatrix(n, w, false));
  for (double l : lambda) CHECK(l == doctest::Approx(1.0));
  CHECK(rmt::participation_ratio(lambda) == doctest::Approx(static_cast<double>(n)));
  CHECK(rmt::spectral_gap(lambda) == doctest::Approx(1.0));
}

TEST_CASE("MP samples at gamma 1 lie in [0, 4] and carry the expected mass") {
  const rmt::MarchenkoPastur mp(1.0);
  CHECK(mp.lower() == 0.0);
  CHECK(mp.upper() == doctest::Approx(4.0));
  const auto s = oracle::mp_samples_gamma1(20000, 2);
  CHECK(*std::max_element(s.begin(), s.end()) <= 4.0);
  CHECK(*std::min_element(s.begin(), s.end()) >= 0.0);
  const double below_one = static_cast<double>(std::count_if(s.begin(), s.end(), [](double x) { return x < 1.0; }));
  CHECK(below_one / 20000.0 == doctest::Approx(mp.mass(0.0, 1.0)).epsilon(0.03));
}

TEST_CASE("MP law: support, unit mass, unit mean") {
  for (double gamma : {0.25, 0.5, 1.0}) {
    const rmt::MarchenkoPastur mp(gamma);
    CHECK(mp.lower() == doctest::Approx(std::pow(1 - std::sqrt(gamma), 2)));
    CHECK(mp.upper() == doctest::Approx(std::pow(1 + std::sqrt(gamma), 2)));
    CHECK(mp.mass(mp.lower(), mp.upper()) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(mp.density(mp.upper() + 0.1) == 0.0);
  }
  CHECK_THROWS_AS(rmt::MarchenkoPastur(0.0), std::invalid_argument);
  CHECK_THROWS_AS(rmt::MarchenkoPastur(1.5), std::invalid_argument);
}

TEST_CASE("mp_kl: small for MP samples, large outside the bulk, never negative") {
  CHECK(rmt::mp_kl(oracle::mp_samples_gamma1(10000, 5)) <= 0.05);
  CHECK(rmt::mp_kl(std::vector<double>(64, 4.5)) > 1.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CHECK(rmt::mp_kl(rmt::attention_spectrum(testing::random_attention(20, false, seed))) >= 0.0);
  }
  CHECK_THROWS_AS(rmt::mp_kl({}), std::invalid_argument);
  CHECK_THROWS_AS(rmt::mp_kl({1.0}, 5), std::invalid_argument);
}

TEST_CASE("low-rank error") {
  const auto u = AttentionMatrix::uniform(6, false);
  CHECK(rmt::low_rank_error(u, 1) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = testing::random_attention(10, seed % 2 == 0, seed);
    CHECK(rmt::low_rank_error(a, 10) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(rmt::low_rank_error(a, 1) == doctest::Approx(power_iteration_rank1_error(a)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(rmt::low_rank_error(u, 0), std::invalid_argument);
  CHECK_THROWS_AS(rmt::low_rank_error(u, 7), std::invalid_argument);
}

TEST_CASE("centralized attention is closer to rank one than noise") {
  synth::SynthSpec spec;
  spec.causal = false;
  spec.noise = 0.1;
  const auto sink = synth::generate(spec).attention(0, 0, 0);
  const auto noise = testing::random_attention(16, false, 3, 1.0);
  const double es = power_iteration_rank1_error(sink), en = power_iteration_rank1_error(noise);
  CHECK(rmt::low_rank_error(sink, 1) == doctest::Approx(es).epsilon(1e-6));
  CHECK(rmt::low_rank_error(noise, 1) == doctest::Approx(en).epsilon(1e-6));
  CHECK(es < en);
}

TEST_CASE("spectrum is invariant under row and column permutations") {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = testing::random_attention(12, false, seed);
    std::vector<std::size_t> p(12);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    const auto la = rmt::attention_spectrum(a), lb = rmt::attention_spectrum(testing::permuted(a, p));
    for (std::size_t k = 0; k < la.size(); ++k) CHECK(std::fabs(la[k] - lb[k]) <= 1e-9);
  }
}

TEST_CASE("participation ratio stays within [1, n]") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 4 + seed % 20;
    const double pr = rmt::participation_ratio(rmt::attention_spectrum(testing::random_attention(n, seed % 3 == 0, seed)));
    CHECK(pr >= 1.0);
    CHECK(pr <= static_cast<double>(n));
  }
}

TEST_CASE("rmt rows average over samples per head") {
  synth::SynthSpec spec;
  spec.noise = 0.2;
  spec.num_samples = 2;
  const auto d = synth::generate(spec);
  const auto rows = rmt::rmt_rows(d, {}, 1);
  REQUIRE(rows.size() == d.num_layers() * d.num_heads());
  CHECK(rows[1].head == 1);
  for (const auto& r : rows) {
    CHECK(r.low_rank_error.size() == 3);
    CHECK(r.low_rank_error.at(1) >= r.low_rank_error.at(2));
    CHECK(r.low_rank_error.at(2) >= r.low_rank_error.at(4));
  }
}

TEST_CASE("comparing a dump with itself gives zero deltas") {
  synth::SynthSpec spec;
  spec.noise = 0.2;
  const auto d = synth::generate(spec);
  const auto c = rmt::compare_dumps(d, d, {}, 1);
  REQUIRE(c.layers.size() == d.num_layers());
  for (const auto& l : c.layers) {
    CHECK(l.participation_ratio() == 0.0);
    CHECK(l.entropy() == 0.0);
    CHECK(l.concentration() == 0.0);
  }
}

TEST_CASE("raising the sink share from 0.1 to 0.35 raises concentration by 0.25") {
  synth::SynthSpec early;
  early.causal = false;
  early.sink_mass = 0.1;
  auto late = early;
  late.sink_mass = 0.35;
  late.seed = 1;
  // Noise-free residual columns tie; the 95th percentile puts tau on the planted column.
  sinks::SinkConfig cfg;
  cfg.tau_percentile = 95.0;
  const auto c = rmt::compare_dumps(synth::generate(early), synth::generate(late), cfg, 1);
  for (const auto& l : c.layers) CHECK(l.concentration() == doctest::Approx(0.25).epsilon(1e-6));
  REQUIRE(c.extremes.size() == 4);
}

TEST_CASE("mismatched dumps are rejected") {
  synth::SynthSpec a;
  auto b = a;
  b.num_layers = 4;
  CHECK_THROWS_AS(rmt::compare_dumps(synth::generate(a), synth::generate(b), {}, 1), dumpio::DumpError);
}
