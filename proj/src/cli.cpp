#include "attngeo/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <optional>

#include "attngeo/dumpio.hpp"
#include "attngeo/output.hpp"
#include "attngeo/pipeline.hpp"
#include "attngeo/report.hpp"
#include "attngeo/rmt.hpp"
#include "attngeo/synth.hpp"

namespace attngeo::cli {

namespace {

// Settings shared by analyze, classify and compare.
struct Common {
  unsigned threads = 0;
  double tau_percentile = 90.0;
  double gamma = 0.4;
  std::string tau_scope = "head";
  std::vector<double> thresholds = spectral::kDefaultThresholds;
  std::vector<double> kl_percentiles{0.8, 0.9, 0.95};
  std::string kl_reference = "uniform";
  bool weighted = false;
  bool average_heads_first = false;
  std::string reference_policy = "mean_over_sinks";
  std::string symmetrization = "max";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--threads", c.threads, "Worker threads (default: ATTNGEO_THREADS or all cores)");
  cmd->add_option("--tau-percentile", c.tau_percentile, "Sink threshold percentile in (0, 100)");
  cmd->add_option("--gamma", c.gamma, "Minimum fraction of rows at or above tau");
  cmd->add_option("--tau-scope", c.tau_scope, "Population for the tau percentile")
      ->check(CLI::IsMember({"head", "layer", "model"}));
  cmd->add_option("--thresholds", c.thresholds, "Graph thresholds")->delimiter(',');
  cmd->add_option("--kl-percentiles", c.kl_percentiles, "Sink percentiles for KL analysis")->delimiter(',');
  cmd->add_option("--kl-reference", c.kl_reference, "KL reference measure")
      ->check(CLI::IsMember({"uniform", "row_conditional"}));
  cmd->add_flag("--weighted", c.weighted, "Weighted adjacency after thresholding");
  cmd->add_flag("--average-heads-first", c.average_heads_first, "Build graphs from head-mean attention");
  cmd->add_option("--reference-policy", c.reference_policy, "Reference token for value-space metrics")
      ->check(CLI::IsMember({"mean_over_sinks", "dominant"}));
  cmd->add_option("--symmetrization", c.symmetrization, "Distance symmetrization")
      ->check(CLI::IsMember({"max", "min", "mean"}));
}

pipeline::AnalysisConfig to_config(const Common& c) {
  pipeline::AnalysisConfig cfg;
  cfg.threads = c.threads;
  cfg.sinks.tau_percentile = c.tau_percentile;
  cfg.sinks.gamma = c.gamma;
  cfg.sinks.tau_scope = c.tau_scope == "layer"   ? sinks::TauScope::kLayer
                        : c.tau_scope == "model" ? sinks::TauScope::kModel
                                                 : sinks::TauScope::kHead;
  cfg.sinks.validate();
  for (double t : c.thresholds) {
    if (!(t > 0.0)) throw std::invalid_argument("thresholds must be > 0");
  }
  cfg.spectral.thresholds = c.thresholds;
  std::sort(cfg.spectral.thresholds.begin(), cfg.spectral.thresholds.end());
  cfg.spectral.weighted = c.weighted;
  cfg.spectral.average_heads_first = c.average_heads_first;
  cfg.kl.sink_percentiles = c.kl_percentiles;
  cfg.kl.reference = c.kl_reference == "row_conditional" ? infogeo::Reference::kRowConditional
                                                         : infogeo::Reference::kUniform;
  cfg.kl.validate();
  cfg.valuespace.policy =
      c.reference_policy == "dominant" ? valuespace::ReferencePolicy::kDominant : valuespace::ReferencePolicy::kMeanOverSinks;
  cfg.topology.symmetrization = c.symmetrization == "min"    ? topology::Symmetrization::kMin
                                : c.symmetrization == "mean" ? topology::Symmetrization::kMean
                                                             : topology::Symmetrization::kMax;
  return cfg;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Geometric analysis of transformer attention dumps", "attngeo"};
  app.require_subcommand(1);

  Common common;
  std::string dump_dir, out_dir, early_dir, late_dir;

  auto* analyze = app.add_subcommand("analyze", "Run every analysis and write CSV/JSON products");
  analyze->add_option("dump", dump_dir, "Dump directory")->required();
  analyze->add_option("-o,--out", out_dir, "Output directory")->required();
  add_common(analyze, common);

  auto* classify = app.add_subcommand("classify", "Print the reference-frame verdict");
  classify->add_option("dump", dump_dir, "Dump directory")->required();
  add_common(classify, common);

  auto* compare = app.add_subcommand("compare", "Per-layer spectral deltas between two checkpoints");
  compare->add_option("early", early_dir, "Earlier checkpoint dump")->required();
  compare->add_option("late", late_dir, "Later checkpoint dump")->required();
  compare->add_option("-o,--out", out_dir, "Output directory")->required();
  add_common(compare, common);

  auto* report = app.add_subcommand("report", "Render report.md and TSV series from an analyze output");
  report->add_option("dir", out_dir, "Directory written by analyze")->required();

  auto* validate = app.add_subcommand("validate", "Check a dump directory");
  validate->add_option("dump", dump_dir, "Dump directory")->required();

  synth::SynthSpec spec;
  std::string frame;
  std::vector<std::size_t> refs;
  std::vector<double> mass_by_layer, layer_shift;
  bool causal = false, non_causal = false, no_qkv = false, no_hidden = false;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic dump with planted structure");
  syn->add_option("--frame", frame, "centralized, distributed, bidirectional, uniform or random")
      ->required()
      ->check(CLI::IsMember({"centralized", "distributed", "bidirectional", "uniform", "random"}));
  syn->add_option("-o,--out", out_dir, "Output dump directory")->required();
  syn->add_option("--refs", refs, "Reference positions")->delimiter(',');
  double mass = 0.0;
  auto* mass_opt = syn->add_option("--mass", mass, "Attention share per reference position");
  syn->add_option("--mass-by-layer", mass_by_layer, "Per-layer reference share")->delimiter(',');
  syn->add_option("--layer-shift", layer_shift, "Per-layer start weight (bidirectional)")->delimiter(',');
  syn->add_option("--seed", spec.seed, "Random seed");
  syn->add_option("--seq-len", spec.seq_len, "Tokens per sample");
  syn->add_option("--layers", spec.num_layers, "Number of layers");
  syn->add_option("--heads", spec.num_heads, "Heads per layer");
  syn->add_option("--head-dim", spec.head_dim, "Per-head dimension");
  syn->add_option("--samples", spec.num_samples, "Number of samples");
  syn->add_option("--noise", spec.noise, "Residual noise in [0, 1)");
  syn->add_option("--key-norm-ratio", spec.key_norm_ratio, "Reference key norm over mean key norm");
  syn->add_option("--rings", spec.rings, "Attention rings in early layers (non-causal)");
  syn->add_option("--ring-mass", spec.ring_mass, "Share each ring member gives its successor");
  syn->add_option("--model-id", spec.model_id, "Model identifier in the manifest");
  syn->add_flag("--causal", causal, "Force causal attention");
  syn->add_flag("--non-causal", non_causal, "Force non-causal attention");
  syn->add_flag("--no-qkv", no_qkv, "Omit Q/K/V blocks");
  syn->add_flag("--no-hidden", no_hidden, "Omit hidden states");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*validate) {
      dumpio::read_dump(dump_dir);
      std::cerr << "ok: " << dump_dir << "\n";
      return kExitOk;
    }
    if (*report) {
      report::render_report(out_dir);
      return kExitOk;
    }
    if (*syn) {
      if (causal && non_causal) throw UsageError("--causal and --non-causal are exclusive");
      spec.frame_type = synth::frame_type_from_string(frame);
      spec.ref_positions = refs;
      if (mass_opt->count() > 0) spec.sink_mass = mass;
      if (!mass_by_layer.empty()) spec.mass_by_layer = mass_by_layer;
      if (!layer_shift.empty()) spec.layer_shift = layer_shift;
      if (causal) spec.causal = true;
      if (non_causal) spec.causal = false;
      spec.with_qkv = !no_qkv;
      spec.with_hidden = !no_hidden;
      const auto dump = synth::generate(spec);
      dumpio::write_dump(dump, out_dir);
      synth::write_ground_truth(spec, out_dir);
      return kExitOk;
    }

    const auto cfg = to_config(common);
    if (*analyze) {
      const auto dump = dumpio::read_dump(dump_dir);
      const auto result = pipeline::analyze(dump, cfg);
      pipeline::write_analysis(result, dump, cfg, out_dir);
      return kExitOk;
    }
    if (*classify) {
      const auto dump = dumpio::read_dump(dump_dir);
      classify::FrameFeatures features;
      const auto verdict = pipeline::classify_dump(dump, cfg, &features);
      nlohmann::json j = verdict.to_json();
      j["features"] = features.to_json();
      output::normalize_floats(j);
      std::cout << j.dump(2) << "\n";
      return verdict.frame == classify::Frame::kInconclusive ? kExitInconclusive : kExitOk;
    }
    if (*compare) {
      const auto early = dumpio::read_dump(early_dir);
      const auto late = dumpio::read_dump(late_dir);
      const auto cmp = rmt::compare_dumps(early, late, cfg.sinks, cfg.threads);
      pipeline::write_comparison(cmp, out_dir);
      return kExitOk;
    }
  } catch (const dumpio::DumpError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CapabilityError& e) {
    std::cerr << "capability error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace attngeo::cli
