#include <cmath>

#include "attngeo/infogeo.hpp"
#include "attngeo/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace attngeo;
using infogeo::Shape;

TEST_CASE("KL to uniform closed forms") {
  CHECK(infogeo::kl_to_uniform(AttentionMatrix::uniform(8, false)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  std::vector<double> w(64, 0.0);
  for (std::size_t i = 0; i < 8; ++i) w[i * 8 + 2] = 1.0;
  CHECK(infogeo::kl_to_uniform(AttentionMatrix(8, w, false)) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  const auto half = AttentionMatrix::from_rows({{0.5, 0.5, 0, 0}, {0, 0.5, 0.5, 0}, {0.5, 0, 0, 0.5}, {0, 0, 0.5, 0.5}},
                                               false);
  CHECK(infogeo::kl_to_uniform(half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Causal rows compare against the uniform over their own prefix.
  CHECK(infogeo::kl_to_uniform(AttentionMatrix::uniform(6, true)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("removing nothing leaves the matrix unchanged") {
  const auto a = testing::random_attention(7, false, 2);
  const auto r = infogeo::remove_sinks(a, {});
  for (std::size_t k = 0; k < a.data().size(); ++k) CHECK(r.matrix.data()[k] == doctest::Approx(a.data()[k]).epsilon(1e-12));
  CHECK(r.kept_rows() == a.size());
  CHECK(infogeo::kl_without_sinks(a, {}) == doctest::Approx(infogeo::kl_to_uniform(a)).epsilon(1e-12));
}

TEST_CASE("removing the planted sink leaves uniform rows") {
  synth::SynthSpec spec;
  spec.causal = false;
  const auto a = synth::generate(spec).attention(0, 0, 0);
  const auto r = infogeo::remove_sinks(a, {0});
  const double rest = 1.0 / static_cast<double>(a.size() - 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(r.matrix(i, 0) < 1e-11);
    CHECK(r.matrix(i, 1) == doctest::Approx(rest).epsilon(1e-6));
  }
  CHECK(infogeo::kl_without_sinks(a, {0}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(infogeo::kl_to_uniform(a) > 0.1);
}

TEST_CASE("rows with all their mass on removed columns are flagged") {
  const auto a = AttentionMatrix::from_rows({{1, 0, 0}, {0.2, 0.5, 0.3}, {1, 0, 0}}, false);
  const auto r = infogeo::remove_sinks(a, {0});
  CHECK(r.flagged == std::vector<bool>{true, false, true});
  CHECK(r.kept_rows() == 1);
  CHECK_THROWS_AS(infogeo::remove_sinks(a, {0, 1, 2}), std::invalid_argument);
}

TEST_CASE("KL terms are non-negative and the reduction is bounded") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = testing::random_attention(10, seed % 2 == 1, seed, 0.4);
    const IndexSet s{0, 3};
    const double orig = infogeo::kl_to_uniform(a);
    const double without = infogeo::kl_without_sinks(a, s);
    CHECK(orig >= 0.0);
    CHECK(without >= 0.0);
    CHECK(std::fabs(orig - without) <= orig + without + 1e-15);
    CHECK(infogeo::row_conditional_kl(a, s) >= 0.0);
  }
}

TEST_CASE("removing columns of a uniform matrix is a no-op") {
  const auto u = AttentionMatrix::uniform(9, false);
  for (const IndexSet& s : {IndexSet{0}, IndexSet{2, 5}, IndexSet{0, 1, 2, 3}}) {
    CHECK(infogeo::kl_to_uniform(u) - infogeo::kl_without_sinks(u, s) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  }
}

TEST_CASE("row-conditional KL is zero exactly when rows put no mass on the removed set") {
  const auto a = AttentionMatrix::from_rows({{0, 0.5, 0.5}, {0, 0.2, 0.8}, {0, 1, 0}}, false);
  CHECK(infogeo::row_conditional_kl(a, {0}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  const auto b = AttentionMatrix::from_rows({{0.1, 0.45, 0.45}, {0, 0.2, 0.8}, {0, 1, 0}}, false);
  CHECK(infogeo::row_conditional_kl(b, {0}) > 0.0);
}

TEST_CASE("band signs and shapes from hand-built sequences") {
  CHECK(infogeo::classify_shape({0, 0, 0, 0, 0, 0}) == Shape::kFlat);
  CHECK(infogeo::classify_shape({-1, -1, -1, -1, -1, -1}) == Shape::kConsistentlyNegative);
  CHECK(infogeo::classify_shape({1, 1, -1, -1, 1, 1}) == Shape::kUShaped);
  CHECK(infogeo::classify_shape({1, 1, -1, -1, -1, -1}) == Shape::kThreePhase);
  CHECK(infogeo::classify_shape({1, 1, -1, -1, 0, 0}) == Shape::kThreePhase);
  CHECK(infogeo::classify_shape({1, 1, 1, 1, 1, 1}) == Shape::kOther);
  CHECK(infogeo::classify_shape({-1, -1, 1, 1, -1, -1}) == Shape::kOther);
  CHECK(infogeo::band_signs({1, 1, -1, 0, 1, 1}) == std::vector<int>{1, -1, 1});
  const auto b = infogeo::layer_bands(7);
  CHECK(b.early_end == 3);
  CHECK(b.late_begin == 4);
  CHECK(infogeo::to_string(Shape::kThreePhase) == "three_phase");
  CHECK(infogeo::sign_of(1e-12) == 0);
  CHECK(infogeo::sign_of(-0.5) == -1);
}

TEST_CASE("uniform dump: zero reduction and a flat profile") {
  synth::SynthSpec spec;
  spec.frame_type = synth::FrameType::kUniform;
  const auto p = infogeo::kl_reduction_profile(synth::generate(spec), {}, {}, 1);
  for (const auto& r : p.rows) CHECK(r.kl_reduction == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  for (auto s : p.shapes) CHECK(s == Shape::kFlat);
}

TEST_CASE("centralized dump: removing the sink reduces KL in every layer") {
  synth::SynthSpec spec;
  spec.causal = false;
  spec.noise = 0.05;
  const auto d = synth::generate(spec);
  const auto p = infogeo::kl_reduction_profile(d, {}, {}, 1);
  REQUIRE(p.rows.size() == d.num_layers() * 3);
  std::vector<int> signs;
  for (const auto& r : p.rows) {
    if (r.percentile != 0.9) continue;
    CHECK(r.kl_reduction > 0.0);
    CHECK(r.kl_original >= 0.0);
    CHECK(r.kl_without >= 0.0);
    signs.push_back(infogeo::sign_of(r.kl_reduction));
  }
  CHECK(infogeo::band_signs(signs) == std::vector<int>{1, 1, 1});
}

TEST_CASE("row-conditional reference is reported when requested") {
  synth::SynthSpec spec;
  spec.noise = 0.1;
  infogeo::KLConfig cfg;
  cfg.reference = infogeo::Reference::kRowConditional;
  const auto p = infogeo::kl_reduction_profile(synth::generate(spec), cfg, {}, 1);
  CHECK(p.reference == infogeo::Reference::kRowConditional);
  for (const auto& r : p.rows) CHECK(r.row_conditional >= 0.0);
}

TEST_CASE("config validation") {
  infogeo::KLConfig cfg;
  cfg.sink_percentiles = {0.9, 1.2};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.sink_percentiles = {};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
