#include "attngeo/pipeline.hpp"

#include <cmath>

#include "attngeo/output.hpp"
#include "attngeo/parallel.hpp"

namespace attngeo::pipeline {

using output::fmt;
using output::num;
using nlohmann::json;

namespace {

const char* scope_name(sinks::TauScope s) {
  switch (s) {
    case sinks::TauScope::kHead: return "head";
    case sinks::TauScope::kLayer: return "layer";
    case sinks::TauScope::kModel: return "model";
  }
  return "head";
}

const char* sym_name(topology::Symmetrization s) {
  switch (s) {
    case topology::Symmetrization::kMax: return "max";
    case topology::Symmetrization::kMin: return "min";
    case topology::Symmetrization::kMean: return "mean";
  }
  return "max";
}

unsigned resolve_threads(unsigned t) { return t ? t : default_threads(); }

LayerTests layer_tests(const topology::TopologySummary& topo) {
  std::vector<std::vector<double>> p0, h1;
  for (const auto& l : topo.layers) {
    p0.push_back(l.dim0_persistence_obs);
    h1.push_back(l.significant_h1_obs);
  }
  LayerTests t;
  t.dim0_persistence = stats::consecutive_layer_tests(p0);
  t.significant_h1 = stats::consecutive_layer_tests(h1);
  for (const auto& x : t.dim0_persistence) t.dim0_count.add(x.result.p_value);
  for (const auto& x : t.significant_h1) t.h1_count.add(x.result.p_value);
  return t;
}

json tests_json(const std::vector<stats::LayerTest>& tests, const stats::SignificanceCount& count) {
  json rows = json::array();
  for (const auto& t : tests) {
    rows.push_back({{"layer_a", t.layer_a},
                    {"layer_b", t.layer_b},
                    {"t", num(t.result.t)},
                    {"df", num(t.result.df)},
                    {"p_value", num(t.result.p_value)}});
  }
  return {{"tests", rows}, {"significant", count.significant}, {"total", count.total}, {"label", count.label()}};
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

}  // namespace

json AnalysisConfig::to_json() const {
  return {{"sinks",
           {{"tau_percentile", sinks.tau_percentile},
            {"gamma", sinks.gamma},
            {"tau_scope", scope_name(sinks.tau_scope)},
            {"specialization_factor", sinks.specialization_factor}}},
          {"topology",
           {{"thresholds", topology.thresholds},
            {"epsilon", topology.epsilon},
            {"symmetrization", sym_name(topology.symmetrization)}}},
          {"spectral",
           {{"thresholds", spectral.thresholds},
            {"weighted", spectral.weighted},
            {"average_heads_first", spectral.average_heads_first}}},
          {"kl",
           {{"sink_percentiles", kl.sink_percentiles},
            {"reference", kl.reference == infogeo::Reference::kUniform ? "uniform" : "row_conditional"},
            {"epsilon", kl.epsilon}}},
          {"valuespace",
           {{"reference_policy",
             valuespace.policy == valuespace::ReferencePolicy::kDominant ? "dominant" : "mean_over_sinks"}}},
          {"rmt", {{"bins", rmt.bins}, {"epsilon", rmt.epsilon}, {"ranks", rmt.ranks}}},
          {"classifier",
           {{"bos_share_min", classifier.bos_share_min},
            {"betti1_min", classifier.betti1_min},
            {"betti0_change_max", classifier.betti0_change_max},
            {"ref_count_split", classifier.ref_count_split},
            {"kl_percentile", classifier.kl_percentile}}}};
}

ModelAnalysis analyze(const dumpio::ModelDump& dump, const AnalysisConfig& cfg) {
  const unsigned threads = resolve_threads(cfg.threads);
  ModelAnalysis a;
  a.sinks = sinks::sink_report(dump, cfg.sinks, threads);
  a.specialization = sinks::token_specialization(dump, cfg.sinks, threads);
  a.topology = topology::summarize_topology(dump, cfg.topology, threads);
  a.spectral = spectral::spectral_rows(dump, cfg.spectral, threads);
  if (dump.num_layers() >= 3) {
    a.signatures = spectral::signature_correlations(a.spectral);
    a.signatures_available = true;
  }
  a.kl = infogeo::kl_reduction_profile(dump, cfg.kl, cfg.sinks, threads);
  a.valuespace = valuespace::value_space_report(dump, a.sinks, cfg.valuespace, threads);
  a.rmt = rmt::rmt_rows(dump, cfg.rmt, threads);
  a.layer_tests = layer_tests(a.topology);

  classify::ModuleSummaries m;
  m.dump = &dump;
  m.sinks = &a.sinks;
  m.topology = &a.topology;
  m.signatures = a.signatures_available ? &a.signatures : nullptr;
  m.kl = &a.kl;
  m.valuespace = &a.valuespace;
  a.features = classify::extract_features(m, cfg.classifier);
  a.verdict = classify::classify(a.features, cfg.classifier);
  return a;
}

classify::FrameVerdict classify_dump(const dumpio::ModelDump& dump, const AnalysisConfig& cfg,
                                     classify::FrameFeatures* features) {
  const unsigned threads = resolve_threads(cfg.threads);
  const auto sink_report = sinks::sink_report(dump, cfg.sinks, threads);
  const auto topo = topology::summarize_topology(dump, cfg.topology, threads);
  spectral::SignatureTable sig;
  const bool have_sig = dump.num_layers() >= 3;
  if (have_sig) sig = spectral::signature_correlations(spectral::spectral_rows(dump, cfg.spectral, threads));
  const auto kl = infogeo::kl_reduction_profile(dump, cfg.kl, cfg.sinks, threads);
  const auto vs = valuespace::value_space_report(dump, sink_report, cfg.valuespace, threads);
  classify::ModuleSummaries m{&dump, &sink_report, &topo, have_sig ? &sig : nullptr, &kl, &vs};
  const auto f = classify::extract_features(m, cfg.classifier);
  if (features) *features = f;
  return classify::classify(f, cfg.classifier);
}

void write_analysis(const ModelAnalysis& a, const dumpio::ModelDump& dump, const AnalysisConfig& cfg,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t L = dump.num_layers();

  {
    output::CsvWriter w(dir / "sinks_heads.csv",
                        {"layer", "head", "sink_positions", "concentration", "mean_entropy", "top_token",
                         "top_token_share"});
    for (const auto& r : a.sinks.heads) {
      w.row({std::to_string(r.layer), std::to_string(r.head), output::join_indices(r.sink_positions),
             fmt(r.concentration), fmt(r.mean_entropy), r.top_token, fmt(r.top_token_share)});
    }
  }
  {
    output::CsvWriter w(dir / "sinks_layers.csv", {"layer", "concentration", "mean_entropy", "top_token",
                                                    "top_token_share", "sink_count", "specialized_heads"});
    for (std::size_t l = 0; l < L; ++l) {
      const auto& r = a.sinks.layers[l];
      w.row({std::to_string(l), fmt(r.concentration), fmt(r.mean_entropy), r.top_token, fmt(r.top_token_share),
             std::to_string(r.sink_count), std::to_string(a.specialization.layers[l].specialized_heads)});
    }
  }
  {
    output::CsvWriter w(dir / "topology_layers.csv",
                        {"layer", "mean_dim0_persistence", "mean_dim1_persistence", "significant_h0",
                         "significant_h1"});
    for (const auto& r : a.topology.layers) {
      w.row({std::to_string(r.layer), fmt(r.mean_dim0_persistence), fmt(r.mean_dim1_persistence),
             fmt(r.significant_h0), fmt(r.significant_h1)});
    }
    output::CsvWriter b(dir / "topology_betti.csv", {"layer", "threshold", "betti0", "betti1"});
    for (const auto& r : a.topology.layers) {
      for (std::size_t t = 0; t < a.topology.thresholds.size(); ++t) {
        b.row({std::to_string(r.layer), fmt(a.topology.thresholds[t]), fmt(r.betti0_at[t]), fmt(r.betti1_at[t])});
      }
    }
    json diagrams = json::array();
    for (std::size_t s = 0; s < a.topology.diagrams.size(); ++s) {
      for (std::size_t l = 0; l < a.topology.diagrams[s].size(); ++l) {
        for (std::size_t h = 0; h < a.topology.diagrams[s][l].size(); ++h) {
          diagrams.push_back({{"sample", dump.samples[s].id},
                              {"layer", l},
                              {"head", h},
                              {"pairs", topology::diagram_to_json(a.topology.diagrams[s][l][h])}});
        }
      }
    }
    output::write_json(dir / "diagrams.json", std::move(diagrams));
  }
  {
    output::CsvWriter w(dir / "spectral.csv",
                        {"layer", "tau", "fiedler", "star_likeness", "centralization", "degree_variance",
                         "gini_received", "density", "connected", "connected_fraction"});
    for (const auto& r : a.spectral) {
      w.row({std::to_string(r.layer), fmt(r.tau), fmt(r.fiedler), fmt(r.star_likeness), fmt(r.centralization),
             fmt(r.degree_variance), fmt(r.gini_received), fmt(r.density), bool_str(r.connected),
             fmt(r.connected_fraction)});
    }
  }
  json correlations = json::object();
  {
    json per_tau = json::array();
    for (const auto& tc : a.signatures.per_tau) {
      json metrics = json::object();
      for (const auto& m : tc.metrics) {
        metrics[m.metric] = {{"pearson", num(m.pearson.r)},
                             {"pearson_p_value", num(m.pearson.p_value)},
                             {"spearman", num(m.spearman.r)},
                             {"spearman_p_value", num(m.spearman.p_value)},
                             {"degenerate", m.pearson.degenerate}};
      }
      per_tau.push_back({{"tau", tc.tau},
                         {"threshold_effectiveness", tc.threshold_effectiveness},
                         {"fiedler_constant", tc.fiedler_constant},
                         {"metrics", metrics}});
    }
    json flips = json::array();
    for (const auto& f : a.signatures.flips) {
      flips.push_back({{"metric", f.metric},
                       {"defined", f.defined},
                       {"sign_flip", f.flip},
                       {"low_tau", f.low_tau},
                       {"high_tau", f.high_tau},
                       {"low_r", f.low_r},
                       {"high_r", f.high_r}});
    }
    correlations = {{"available", a.signatures_available},
                    {"per_tau", per_tau},
                    {"sign_flips", flips},
                    {"definitions",
                     {{"star_likeness", "cosine between ascending Laplacian spectra of the graph and of K_{1,n-1}"},
                      {"threshold_effectiveness", "fraction of layers whose thresholded graph is connected"}}}};
    output::write_json(dir / "spectral_correlations.json", correlations);
  }
  json kl_shapes = json::object();
  {
    output::CsvWriter w(dir / "kl_profile.csv",
                        {"layer", "percentile", "kl_original", "kl_without", "reduction", "concentration",
                         "row_conditional", "flagged_rows", "saturated_cells"});
    for (const auto& r : a.kl.rows) {
      w.row({std::to_string(r.layer), fmt(r.percentile), fmt(r.kl_original), fmt(r.kl_without),
             fmt(r.kl_reduction), fmt(r.sink_concentration), fmt(r.row_conditional), std::to_string(r.flagged_rows),
             std::to_string(r.saturated)});
    }
    json per = json::array();
    for (std::size_t k = 0; k < a.kl.percentiles.size(); ++k) {
      per.push_back({{"percentile", a.kl.percentiles[k]},
                     {"shape", infogeo::to_string(a.kl.shapes[k])},
                     {"mean_reduction", a.kl.mean_reduction[k]}});
    }
    kl_shapes = {{"reference", a.kl.reference == infogeo::Reference::kUniform ? "uniform" : "row_conditional"},
                 {"shapes", per}};
    output::write_json(dir / "kl_shapes.json", kl_shapes);
  }
  {
    output::CsvWriter w(dir / "valuespace.csv",
                        {"layer", "relative_magnitude", "directional_influence", "structural_kl", "ref_count",
                         "mean_entropy", "mean_transform_magnitude", "entropy_magnitude_corr",
                         "geom_semantic_alignment"});
    for (const auto& r : a.valuespace.rows) {
      w.row({std::to_string(r.layer), fmt(r.relative_magnitude), fmt(r.directional_influence),
             fmt(r.structural_kl), std::to_string(r.ref_count), fmt(r.mean_entropy),
             fmt(r.mean_transform_magnitude), fmt(r.entropy_magnitude_corr), fmt(r.geom_semantic_alignment)});
    }
    output::write_json(dir / "valuespace_summary.json", a.valuespace.summary());
  }
  {
    std::vector<std::string> header{"layer", "head", "spectral_gap", "participation_ratio", "mp_kl"};
    for (std::size_t k : cfg.rmt.ranks) header.push_back("low_rank_error_" + std::to_string(k));
    output::CsvWriter w(dir / "rmt.csv", header);
    for (const auto& r : a.rmt) {
      std::vector<std::string> row{std::to_string(r.layer), std::to_string(r.head), fmt(r.spectral_gap),
                                   fmt(r.participation_ratio), fmt(r.mp_kl)};
      for (std::size_t k : cfg.rmt.ranks) {
        const auto it = r.low_rank_error.find(k);
        row.push_back(it == r.low_rank_error.end() ? "nan" : fmt(it->second));
      }
      w.row(row);
    }
  }

  // One row per layer with the headline scalars of every module.
  json layers = json::array();
  {
    std::vector<std::string> header{"layer", "sink_concentration", "mean_entropy", "sink_count", "ref_count",
                                    "significant_h0", "significant_h1", "mean_dim0_persistence"};
    for (double t : cfg.spectral.thresholds) header.push_back("fiedler@" + fmt(t));
    for (double t : cfg.spectral.thresholds) header.push_back("centralization@" + fmt(t));
    for (double p : cfg.kl.sink_percentiles) header.push_back("kl_reduction@" + fmt(p));
    header.insert(header.end(), {"spectral_gap", "participation_ratio", "mp_kl", "directional_influence",
                                 "geom_semantic_alignment", "mean_transform_magnitude"});
    output::CsvWriter w(dir / "layer_metrics.csv", header);
    const std::size_t K = cfg.spectral.thresholds.size(), P = cfg.kl.sink_percentiles.size();
    const std::size_t H = dump.num_heads();
    for (std::size_t l = 0; l < L; ++l) {
      const auto& sl = a.sinks.layers[l];
      const auto& tl = a.topology.layers[l];
      const auto& vl = a.valuespace.rows[l];
      std::vector<double> gaps;
      double pr = 0, mpkl = 0;
      for (std::size_t h = 0; h < H; ++h) {
        const auto& r = a.rmt[l * H + h];
        if (std::isfinite(r.spectral_gap)) gaps.push_back(r.spectral_gap);
        pr += r.participation_ratio / static_cast<double>(H);
        mpkl += r.mp_kl / static_cast<double>(H);
      }
      const double gap = gaps.empty() ? INFINITY : stats::mean(gaps);
      std::vector<std::string> row{std::to_string(l), fmt(sl.concentration), fmt(sl.mean_entropy),
                                   std::to_string(sl.sink_count), std::to_string(vl.ref_count),
                                   fmt(tl.significant_h0), fmt(tl.significant_h1), fmt(tl.mean_dim0_persistence)};
      json fiedler = json::array(), central = json::array(), star = json::array(), dvar = json::array(),
           conn = json::array(), red = json::array();
      for (std::size_t t = 0; t < K; ++t) {
        row.push_back(fmt(a.spectral[l * K + t].fiedler));
        fiedler.push_back(num(a.spectral[l * K + t].fiedler));
        star.push_back(num(a.spectral[l * K + t].star_likeness));
        dvar.push_back(num(a.spectral[l * K + t].degree_variance));
        conn.push_back(a.spectral[l * K + t].connected);
      }
      for (std::size_t t = 0; t < K; ++t) {
        row.push_back(fmt(a.spectral[l * K + t].centralization));
        central.push_back(num(a.spectral[l * K + t].centralization));
      }
      for (std::size_t k = 0; k < P; ++k) {
        row.push_back(fmt(a.kl.rows[l * P + k].kl_reduction));
        red.push_back(num(a.kl.rows[l * P + k].kl_reduction));
      }
      row.insert(row.end(), {fmt(gap), fmt(pr), fmt(mpkl), fmt(vl.directional_influence),
                             fmt(vl.geom_semantic_alignment), fmt(vl.mean_transform_magnitude)});
      w.row(row);
      layers.push_back({{"layer", l},
                        {"sink_concentration", num(sl.concentration)},
                        {"mean_entropy", num(sl.mean_entropy)},
                        {"sink_count", sl.sink_count},
                        {"top_token", sl.top_token},
                        {"top_token_share", num(sl.top_token_share)},
                        {"specialized_heads", a.specialization.layers[l].specialized_heads},
                        {"ref_count", vl.ref_count},
                        {"betti0_at", tl.betti0_at},
                        {"betti1_at", tl.betti1_at},
                        {"significant_h0", num(tl.significant_h0)},
                        {"significant_h1", num(tl.significant_h1)},
                        {"mean_dim0_persistence", num(tl.mean_dim0_persistence)},
                        {"fiedler", fiedler},
                        {"star_likeness", star},
                        {"centralization", central},
                        {"degree_variance", dvar},
                        {"connected", conn},
                        {"kl_reduction", red},
                        {"spectral_gap", num(gap)},
                        {"participation_ratio", num(pr)},
                        {"mp_kl", num(mpkl)},
                        {"directional_influence", num(vl.directional_influence)},
                        {"geom_semantic_alignment", num(vl.geom_semantic_alignment)},
                        {"mean_transform_magnitude", num(vl.mean_transform_magnitude)},
                        {"entropy_magnitude_corr", num(vl.entropy_magnitude_corr)},
                        {"relative_magnitude", num(vl.relative_magnitude)},
                        {"structural_kl", num(vl.structural_kl)}});
    }
  }

  const json tests = {{"dim0_persistence", tests_json(a.layer_tests.dim0_persistence, a.layer_tests.dim0_count)},
                      {"significant_h1", tests_json(a.layer_tests.significant_h1, a.layer_tests.h1_count)}};
  output::write_json(dir / "layer_tests.json", tests);
  output::write_json(dir / "verdict.json", {{"features", a.features.to_json()}, {"verdict", a.verdict.to_json()}});

  std::size_t total_sinks = 0;
  for (const auto& h : a.sinks.heads) total_sinks += h.sink_positions.size();
  json summary = {
      {"model_id", dump.manifest.model_id},
      {"checkpoint_label", dump.manifest.checkpoint_label ? json(*dump.manifest.checkpoint_label) : json(nullptr)},
      {"num_layers", L},
      {"num_heads", dump.num_heads()},
      {"num_samples", dump.samples.size()},
      {"causal", dump.causal()},
      {"has_qkv", dump.has_qkv()},
      {"has_hidden", dump.has_hidden()},
      {"config", cfg.to_json()},
      {"sinks",
       {{"total_head_sinks", total_sinks},
        {"max_layer_sink_count", a.valuespace.max_ref_count},
        {"specialization",
         {{"top_token", a.specialization.top_token},
          {"top_token_share", a.specialization.top_token_share},
          {"specialized_heads", a.specialization.specialized_heads},
          {"top_layer", a.specialization.top_layer},
          {"top_layer_heads",
           a.specialization.layers.empty() ? 0 : a.specialization.layers[a.specialization.top_layer].specialized_heads}}}}},
      {"spectral_thresholds", cfg.spectral.thresholds},
      {"topology_thresholds", cfg.topology.thresholds},
      {"kl_percentiles", cfg.kl.sink_percentiles},
      {"layers", layers},
      {"correlations", correlations},
      {"kl", kl_shapes},
      {"valuespace", a.valuespace.summary()},
      {"layer_tests", tests},
      {"features", a.features.to_json()},
      {"verdict", a.verdict.to_json()},
      {"products",
       {"sinks_heads.csv", "sinks_layers.csv", "topology_layers.csv", "topology_betti.csv", "diagrams.json",
        "spectral.csv", "spectral_correlations.json", "kl_profile.csv", "kl_shapes.json", "valuespace.csv",
        "valuespace_summary.json", "rmt.csv", "layer_metrics.csv", "layer_tests.json", "verdict.json"}}};
  output::write_json(dir / "summary.json", std::move(summary));
}

json comparison_to_json(const rmt::Comparison& c) {
  json layers = json::array();
  for (const auto& d : c.layers) {
    layers.push_back({{"layer", d.layer},
                      {"early_spectral_gap", num(d.early_gap)},
                      {"late_spectral_gap", num(d.late_gap)},
                      {"delta_spectral_gap", num(d.spectral_gap())},
                      {"early_participation_ratio", num(d.early_pr)},
                      {"late_participation_ratio", num(d.late_pr)},
                      {"delta_participation_ratio", num(d.participation_ratio())},
                      {"early_entropy", num(d.early_entropy)},
                      {"late_entropy", num(d.late_entropy)},
                      {"delta_entropy", num(d.entropy())},
                      {"early_concentration", num(d.early_concentration)},
                      {"late_concentration", num(d.late_concentration)},
                      {"delta_concentration", num(d.concentration())}});
  }
  json extremes = json::array();
  for (const auto& e : c.extremes) {
    extremes.push_back({{"metric", e.metric},
                        {"mean_delta", num(e.mean_delta)},
                        {"largest_increase_layer", e.largest_increase_layer},
                        {"largest_increase", num(e.largest_increase)},
                        {"largest_decrease_layer", e.largest_decrease_layer},
                        {"largest_decrease", num(e.largest_decrease)}});
  }
  return {{"early", c.early_label}, {"late", c.late_label}, {"layers", layers}, {"extremes", extremes}};
}

void write_comparison(const rmt::Comparison& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  output::CsvWriter w(dir / "rmt_deltas.csv",
                      {"layer", "delta_spectral_gap", "delta_participation_ratio", "delta_entropy",
                       "delta_concentration", "early_spectral_gap", "late_spectral_gap"});
  for (const auto& d : c.layers) {
    w.row({std::to_string(d.layer), fmt(d.spectral_gap()), fmt(d.participation_ratio()), fmt(d.entropy()),
           fmt(d.concentration()), fmt(d.early_gap), fmt(d.late_gap)});
  }
  output::write_json(dir / "comparison.json", comparison_to_json(c));
}

}  // namespace attngeo::pipeline
