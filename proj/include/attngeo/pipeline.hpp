#pragma once

// Runs every analysis module over a dump and serializes the products.

#include <filesystem>
#include <vector>

#include "attngeo/classify.hpp"
#include "attngeo/dumpio.hpp"
#include "attngeo/infogeo.hpp"
#include "attngeo/rmt.hpp"
#include "attngeo/sinks.hpp"
#include "attngeo/spectral.hpp"
#include "attngeo/stats.hpp"
#include "attngeo/topology.hpp"
#include "attngeo/valuespace.hpp"
#include "json.hpp"

namespace attngeo::pipeline {

struct AnalysisConfig {
  sinks::SinkConfig sinks;
  topology::TopologyConfig topology;
  spectral::SpectralConfig spectral;
  infogeo::KLConfig kl;
  valuespace::ValueSpaceConfig valuespace;
  rmt::RmtConfig rmt;
  classify::ClassifierConfig classifier;
  unsigned threads = 0;  // 0: ATTNGEO_THREADS or hardware concurrency

  nlohmann::json to_json() const;
};

struct LayerTests {
  std::vector<stats::LayerTest> dim0_persistence;
  std::vector<stats::LayerTest> significant_h1;
  stats::SignificanceCount dim0_count, h1_count;
};

struct ModelAnalysis {
  sinks::SinkReport sinks;
  sinks::TokenSpecialization specialization;
  topology::TopologySummary topology;
  std::vector<spectral::SpectralRow> spectral;
  spectral::SignatureTable signatures;
  bool signatures_available = false;  // fewer than 3 layers leaves them empty
  infogeo::KLProfile kl;
  valuespace::ValueSpaceReport valuespace;
  std::vector<rmt::RmtRow> rmt;
  LayerTests layer_tests;
  classify::FrameFeatures features;
  classify::FrameVerdict verdict;
};

ModelAnalysis analyze(const dumpio::ModelDump& dump, const AnalysisConfig& cfg);

// Runs only the modules the classifier consumes.
classify::FrameVerdict classify_dump(const dumpio::ModelDump& dump, const AnalysisConfig& cfg,
                                     classify::FrameFeatures* features = nullptr);

// Writes the CSV/JSON products and summary.json into `dir` (created if needed).
void write_analysis(const ModelAnalysis& a, const dumpio::ModelDump& dump, const AnalysisConfig& cfg,
                    const std::filesystem::path& dir);

nlohmann::json comparison_to_json(const rmt::Comparison& c);
void write_comparison(const rmt::Comparison& c, const std::filesystem::path& dir);

}  // namespace attngeo::pipeline
