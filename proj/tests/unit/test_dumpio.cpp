#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <random>

#include "attngeo/dumpio.hpp"
#include "attngeo/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace attngeo;
using dumpio::DumpErrorKind;

namespace {

dumpio::ModelDump tiny_dump() {
  dumpio::ModelDump d;
  d.manifest.model_id = "tiny";
  d.manifest.num_layers = 1;
  d.manifest.num_heads = 1;
  d.manifest.hidden_dim = 2;
  d.manifest.causal = true;
  dumpio::Sample s;
  s.id = "s0";
  s.tokens = {"<s>", "hi"};
  s.attention = {1.0f, 0.0f, 0.5f, 0.5f};
  d.samples.push_back(s);
  return d;
}

DumpErrorKind error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const dumpio::DumpError& e) {
    return e.kind();
  }
  FAIL("no DumpError thrown");
  return DumpErrorKind::kIo;
}

}  // namespace

TEST_CASE("two-token dump round-trips bit-equal with a 16-byte blob") {
  const auto dir = testing::scratch("dump_tiny");
  const auto d = tiny_dump();
  dumpio::write_dump(d, dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::file_size(dir / "s0" / "attention.bin") == 16);
  const auto back = dumpio::read_dump(dir);
  CHECK(back == d);
  CHECK(back.attention(0, 0, 0)(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("declared length disagreeing with the attention block is a shape error") {
  auto d = tiny_dump();
  d.samples[0].tokens.push_back("extra");
  CHECK(error_kind([&] { dumpio::validate(d); }) == DumpErrorKind::kShape);
}

TEST_CASE("a row summing to 0.8 is rejected with its coordinates") {
  auto d = tiny_dump();
  d.samples[0].attention = {1.0f, 0.0f, 0.4f, 0.4f};
  try {
    dumpio::validate(d);
    FAIL("expected simplex violation");
  } catch (const dumpio::DumpError& e) {
    CHECK(e.kind() == DumpErrorKind::kSimplex);
    const std::string what = e.what();
    CHECK(what.find("s0") != std::string::npos);
    CHECK(what.find("row 1") != std::string::npos);
  }
}

TEST_CASE("causal mask violations are detected") {
  auto d = tiny_dump();
  d.samples[0].attention = {0.5f, 0.5f, 0.5f, 0.5f};
  CHECK(error_kind([&] { dumpio::validate(d); }) == DumpErrorKind::kCausalMask);
}

TEST_CASE("non-finite values are rejected") {
  auto d = tiny_dump();
  d.manifest.causal = false;
  d.samples[0].attention = {std::nanf(""), 0.5f, 0.5f, 0.5f};
  CHECK(error_kind([&] { dumpio::validate(d); }) == DumpErrorKind::kNonFinite);
}

TEST_CASE("truncated blob is a byte-length error") {
  const auto dir = testing::scratch("dump_trunc");
  dumpio::write_dump(tiny_dump(), dir);
  std::filesystem::resize_file(dir / "s0" / "attention.bin", 12);
  CHECK(error_kind([&] { dumpio::read_dump(dir); }) == DumpErrorKind::kByteLength);
}

TEST_CASE("missing files and manifests are reported") {
  const auto dir = testing::scratch("dump_missing");
  CHECK(error_kind([&] { dumpio::read_dump(dir); }) == DumpErrorKind::kMissingFile);
  dumpio::write_dump(tiny_dump(), dir);
  std::filesystem::remove(dir / "s0" / "tokens.json");
  CHECK(error_kind([&] { dumpio::read_dump(dir); }) == DumpErrorKind::kMissingFile);
}

TEST_CASE("unsupported format version is rejected") {
  const auto dir = testing::scratch("dump_version");
  dumpio::write_dump(tiny_dump(), dir);
  auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  j["format_version"] = 99;
  std::ofstream(dir / "manifest.json") << j.dump();
  CHECK(error_kind([&] { dumpio::read_dump(dir); }) == DumpErrorKind::kVersion);
}

TEST_CASE("synthetic L=4 H=2 T=16 dump reads back exactly, including Q/K/V and hidden") {
  synth::SynthSpec spec;
  spec.num_layers = 4;
  spec.num_heads = 2;
  spec.seq_len = 16;
  spec.num_samples = 2;
  spec.noise = 0.2;
  const auto d = synth::generate(spec);
  REQUIRE(d.has_qkv());
  REQUIRE(d.has_hidden());
  const auto dir = testing::scratch("dump_synth");
  dumpio::write_dump(d, dir);
  CHECK(dumpio::read_dump(dir) == d);
}

TEST_CASE("round-trip property over randomized small dumps") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    synth::SynthSpec spec;
    spec.frame_type = static_cast<synth::FrameType>(trial % 5);
    spec.num_layers = 1 + rng() % 4;
    spec.num_heads = 1 + rng() % 3;
    spec.head_dim = 1 + rng() % 5;
    spec.seq_len = 6 + rng() % 10;
    spec.num_samples = 1 + rng() % 3;
    spec.noise = 0.3;
    spec.seed = rng();
    spec.with_qkv = trial % 3 != 0;
    spec.with_hidden = trial % 4 != 0;
    const auto d = synth::generate(spec);
    const auto dir = testing::scratch("dump_prop");
    dumpio::write_dump(d, dir);
    CHECK(dumpio::read_dump(dir) == d);
  }
}

TEST_CASE("absent blocks raise capability errors on access") {
  synth::SynthSpec spec;
  spec.with_qkv = false;
  spec.with_hidden = false;
  const auto d = synth::generate(spec);
  CHECK_FALSE(d.has_qkv());
  CHECK_FALSE(d.has_hidden());
  CHECK_THROWS_AS(d.keys(0, 0, 0), CapabilityError);
  CHECK_THROWS_AS(d.hidden(0, 0), CapabilityError);
}
