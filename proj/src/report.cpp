#include "attngeo/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "attngeo/output.hpp"

namespace attngeo::report {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double dbl(const json& j) { return j.is_number() ? j.get<double>() : kNaN; }

std::string f4(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string f2(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string pct(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string signed4(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.4f", v);
  return buf;
}

struct Series {
  std::vector<double> v;
  double at(std::size_t l) const { return l < v.size() ? v[l] : kNaN; }
};

Series scalar_series(const json& layers, const char* key) {
  Series s;
  for (const auto& l : layers) s.v.push_back(dbl(l.value(key, json())));
  return s;
}

Series indexed_series(const json& layers, const char* key, std::size_t idx) {
  Series s;
  for (const auto& l : layers) {
    const json& arr = l.value(key, json::array());
    s.v.push_back(idx < arr.size() ? dbl(arr[idx]) : kNaN);
  }
  return s;
}

struct Bands {
  std::size_t early_end, late_begin, n;
};

Bands bands(std::size_t n) {
  const std::size_t third = (n + 2) / 3;
  return {std::min(third, n), n >= third ? n - third : 0, n};
}

double band_mean(const Series& s, std::size_t b, std::size_t e) {
  double sum = 0.0;
  std::size_t k = 0;
  for (std::size_t l = b; l < e && l < s.v.size(); ++l) {
    if (!std::isfinite(s.v[l])) continue;
    sum += s.v[l];
    ++k;
  }
  return k ? sum / static_cast<double>(k) : kNaN;
}

std::string eml(const Series& s, const Bands& b, std::string (*f)(double)) {
  const std::size_t mid_end = std::max(b.late_begin, b.early_end);
  return f(band_mean(s, 0, b.early_end)) + " / " + f(band_mean(s, b.early_end, mid_end)) + " / " +
         f(band_mean(s, b.late_begin, b.n));
}

std::string kl_word(double v) {
  if (!std::isfinite(v)) return "n/a";
  if (v > 1e-9) return "Positive KL";
  if (v < -1e-9) return "Negative KL";
  return "Flat KL";
}

std::string band_pattern(const Series& s, std::size_t b, std::size_t e) {
  int pos = 0, neg = 0;
  for (std::size_t l = b; l < e && l < s.v.size(); ++l) {
    if (s.v[l] > 1e-9) ++pos;
    if (s.v[l] < -1e-9) ++neg;
  }
  if (pos && neg) return "Mixed KL";
  return kl_word(band_mean(s, b, e));
}

std::size_t closest(const json& values, double target) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (std::abs(dbl(values[k]) - target) < std::abs(dbl(values[best]) - target)) best = k;
  }
  return best;
}

void row(std::ostringstream& md, const std::string& group, const std::string& prop, const std::string& value) {
  md << "| " << group << " | " << prop << " | " << value << " |\n";
}

void write_tsv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "\t" : "") << header[k];
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.size(); ++k) out << (k ? "\t" : "") << r[k];
    out << '\n';
  }
}

}  // namespace

std::string render_markdown(const json& summary) {
  const json& layers = summary.at("layers");
  const std::size_t L = layers.size();
  if (L == 0) throw std::invalid_argument("report: summary has no layers");
  const Bands b = bands(L);
  const json& spec_tau = summary.at("spectral_thresholds");
  const std::size_t K = spec_tau.size();
  const std::size_t low = 0, high = K - 1;
  std::ostringstream md;

  md << "# Attention geometry report: " << summary.value("model_id", std::string()) << "\n\n";
  md << summary.at("num_layers") << " layers, " << summary.at("num_heads") << " heads, " << summary.at("num_samples")
     << " samples, " << (summary.value("causal", false) ? "causal" : "non-causal") << " attention.\n\n";

  const json& verdict = summary.at("verdict");
  md << "## Reference frame verdict\n\n";
  md << "**" << verdict.value("frame_type", std::string("inconclusive")) << "** (confidence "
     << f2(dbl(verdict.value("confidence", json()))) << "). " << verdict.value("method", std::string()) << ".\n\n";
  md << "| Rule | Vote | Weight | Fired | Condition |\n|---|---|---|---|---|\n";
  for (const auto& r : verdict.at("rules")) {
    md << "| " << r.value("id", std::string()) << " | " << r.value("vote", std::string()) << " | "
       << f2(dbl(r.value("weight", json()))) << " | " << (r.value("fired", false) ? "yes" : "no") << " | "
       << r.value("condition", std::string()) << " |\n";
  }
  md << "\nFeatures: `" << summary.at("features").dump() << "`\n\n";

  // Topology
  {
    const Series h0 = scalar_series(layers, "significant_h0");
    const Series h1 = scalar_series(layers, "significant_h1");
    const Series p0 = scalar_series(layers, "mean_dim0_persistence");
    const json& spec = summary.at("sinks").at("specialization");
    md << "## Topological analysis\n\n| | Property | Value |\n|---|---|---|\n";
    row(md, "Connected components", "Early layer (Betti0)", f2(h0.at(0)));
    row(md, "", "Final layer (Betti0)", f2(h0.at(L - 1)));
    row(md, "", "Change", f2(h0.at(L - 1) - h0.at(0)));
    row(md, "Cycles/Loops", "Early layer (Betti1)", f2(h1.at(0)));
    row(md, "", "Final layer (Betti1)", f2(h1.at(L - 1)));
    row(md, "", "Change", f2(h1.at(L - 1) - h1.at(0)));
    row(md, "Topological persistence", "Early layer persistence", f4(p0.at(0)));
    row(md, "", "Final layer persistence", f4(p0.at(L - 1)));
    row(md, "", "Change", signed4(p0.at(L - 1) - p0.at(0)));
    row(md, "Attention head specialization", "Token specialization",
        pct(dbl(spec.value("top_token_share", json()))) + " on \"" + spec.value("top_token", std::string()) + "\"");
    row(md, "", "Specialized heads", std::to_string(spec.value("specialized_heads", 0)));
    row(md, "", "Top layer specialization",
        "Layer " + std::to_string(spec.value("top_layer", 0)) + " (" + std::to_string(spec.value("top_layer_heads", 0)) +
            " heads)");
    md << "\nBetti counts are features with persistence above " << summary.at("config").at("topology").at("epsilon")
       << ".\n\n";
  }

  // Spectral
  {
    const json& corr = summary.at("correlations");
    const Series fied_low = indexed_series(layers, "fiedler", low);
    const Series star_low = indexed_series(layers, "star_likeness", low);
    const Series star_high = indexed_series(layers, "star_likeness", high);
    const Series cen_low = indexed_series(layers, "centralization", low);
    const Series var_low = indexed_series(layers, "degree_variance", low);
    std::size_t connected_high = 0;
    for (const auto& l : layers) {
      const json& c = l.at("connected");
      if (high < c.size() && c[high].get<bool>()) ++connected_high;
    }
    std::size_t max_layer = 0;
    for (std::size_t l = 1; l < L; ++l) {
      if (fied_low.at(l) > fied_low.at(max_layer)) max_layer = l;
    }
    const std::string lo = output::fmt(dbl(spec_tau[low])), hi = output::fmt(dbl(spec_tau[high]));
    md << "## Spectral graph signatures\n\n| | Property | Value |\n|---|---|---|\n";
    row(md, "Algebraic connectivity", "High threshold effectiveness (" + hi + ")",
        f2(static_cast<double>(connected_high) / static_cast<double>(L)) + " (" + std::to_string(connected_high) + "/" +
            std::to_string(L) + " layers)");
    row(md, "", "Early / Middle / Late layers (" + lo + ")", eml(fied_low, b, f2));
    row(md, "", "Maximum value (layer)", f2(fied_low.at(max_layer)) + " (" + std::to_string(max_layer) + ")");
    row(md, "Star-likeness", "Low thrsh. (" + lo + "): E/M/L", eml(star_low, b, f2));
    row(md, "", "High thrsh. (" + hi + "): E/M/L", eml(star_high, b, f2));
    row(md, "Degree centralization and variance", "Centralization: E/M/L", eml(cen_low, b, f2));
    row(md, "", "Variance: E/M/L", eml(var_low, b, f2));
    for (const auto& flip : corr.value("sign_flips", json::array())) {
      if (flip.value("metric", std::string()) != "centralization") continue;
      if (!flip.value("defined", false)) {
        row(md, "Signature correlation", "Fiedler vs. centralization", "undefined (constant across layers)");
        continue;
      }
      row(md, "Signature correlation", "Fiedler vs. Centraliz. (" + output::fmt(dbl(flip.at("low_tau"))) + ")",
          f2(dbl(flip.at("low_r"))));
      row(md, "", "Fiedler vs. Centraliz. (" + output::fmt(dbl(flip.at("high_tau"))) + ")",
          f2(dbl(flip.at("high_r"))));
      row(md, "", "Correlation sign flip",
          std::string(flip.value("sign_flip", false) ? "Yes" : "No") + " (" + f2(dbl(flip.at("low_r"))) + " -> " +
              f2(dbl(flip.at("high_r"))) + ")");
    }
    md << "\nStar-likeness is the cosine between the sorted Laplacian spectrum and that of a star on the same "
          "vertices; threshold effectiveness is the fraction of layers whose graph is connected. Both are local "
          "definitions.\n\n";
  }

  // Sinks and KL
  {
    const json& kl_pcts = summary.at("kl_percentiles");
    const std::size_t k = closest(kl_pcts, 0.8);
    const Series red = indexed_series(layers, "kl_reduction", k);
    const Series conc = scalar_series(layers, "sink_concentration");
    std::size_t max_layer = 0;
    for (std::size_t l = 1; l < L; ++l) {
      if (conc.at(l) > conc.at(max_layer)) max_layer = l;
    }
    std::string shape = "n/a";
    for (const auto& s : summary.at("kl").value("shapes", json::array())) {
      if (std::abs(dbl(s.at("percentile")) - dbl(kl_pcts[k])) < 1e-12) shape = s.value("shape", shape);
    }
    const std::size_t mid_end = std::max(b.late_begin, b.early_end);
    md << "## Attention sink properties\n\n| | Property | Value |\n|---|---|---|\n";
    row(md, "Attention sink properties (t=" + output::fmt(dbl(kl_pcts[k])) + ")", "Avg. KL Reduction",
        f4(band_mean(red, 0, L)));
    row(md, "", "Avg. Sink Concentration", pct(band_mean(conc, 0, L)));
    row(md, "", "Max Sink Concentration", pct(conc.at(max_layer)) + " (L" + std::to_string(max_layer) + ")");
    row(md, "Layer-wise distribution", "Early Layer Pattern", band_pattern(red, 0, b.early_end));
    row(md, "", "Middle Layer Pattern", band_pattern(red, b.early_end, mid_end));
    row(md, "", "Deep Layer Pattern", band_pattern(red, b.late_begin, L));
    row(md, "", "Profile shape", shape);
    md << "\nKL reduction is KL(original) - KL(without sinks), both against the uniform distribution over the "
          "attendable positions (" << summary.at("kl").value("reference", std::string("uniform"))
       << " reference for the shape).\n\n";
  }

  // Value space
  {
    const json& vs = summary.at("valuespace");
    const Series mag = scalar_series(layers, "mean_transform_magnitude");
    double mean = band_mean(mag, 0, L), var = 0.0;
    std::size_t n = 0;
    for (double v : mag.v) {
      if (!std::isfinite(v)) continue;
      var += (v - mean) * (v - mean);
      ++n;
    }
    const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : kNaN;
    const Series emc = scalar_series(layers, "entropy_magnitude_corr");
    md << "## Value space characteristics\n\n| | Property | Value |\n|---|---|---|\n";
    const char* names[] = {"first", "middle", "last"};
    const char* labels[] = {"First Layer", "Middle Layer", "Last Layer"};
    for (int k = 0; k < 3; ++k) {
      row(md, k ? "" : "Directional influence", labels[k],
          f4(dbl(vs.value(names[k], json::object()).value("directional_influence", json()))));
    }
    for (int k = 0; k < 3; ++k) {
      row(md, k ? "" : "Geometric-semantic alignment", labels[k],
          f4(dbl(vs.value(names[k], json::object()).value("geom_semantic_alignment", json()))));
    }
    row(md, "Information content change", "Mean", f2(mean));
    row(md, "", "Std Dev", f2(sd));
    row(md, "Reference token structure", "Mean Count", f2(dbl(vs.value("mean_ref_count", json()))));
    row(md, "", "Maximum Count", f2(dbl(vs.value("max_ref_count", json()))));
    row(md, "Attention-value relationships", "Entropy-Magnitude Corr.", f2(band_mean(emc, 0, L)));
    row(md, "", "Early-to-Late Layer Shift", f2(emc.at(0)) + " to " + f2(emc.at(L - 1)));
    row(md, "", "Transformation Magnitude", f2(mag.at(0)) + " to " + f2(mag.at(L - 1)));
    md << "\n";
  }

  // Layer tests
  {
    const json& t = summary.at("layer_tests");
    md << "## Between-layer tests\n\n";
    md << "- H0 persistence, consecutive layers: " << t.at("dim0_persistence").value("label", std::string()) << "\n";
    md << "- Persistent H1 counts, consecutive layers: " << t.at("significant_h1").value("label", std::string())
       << "\n";
  }
  return md.str();
}

void render_report(const std::filesystem::path& dir) {
  const json summary = output::read_json(dir / "summary.json");
  {
    std::ofstream out(dir / "report.md", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report.md");
    out << render_markdown(summary);
  }
  const json& layers = summary.at("layers");
  const json& spec_tau = summary.at("spectral_thresholds");
  const json& topo_tau = summary.at("topology_thresholds");
  const json& kl_p = summary.at("kl_percentiles");
  auto cell = [](const json& j) { return j.is_number() ? output::fmt(j.get<double>()) : std::string("nan"); };

  std::vector<std::string> header{"layer"};
  for (const auto& t : spec_tau) header.push_back("fiedler@" + cell(t));
  for (const auto& t : spec_tau) header.push_back("centralization@" + cell(t));
  std::vector<std::vector<std::string>> rows;
  for (const auto& l : layers) {
    std::vector<std::string> r{std::to_string(l.at("layer").get<std::size_t>())};
    for (const auto& v : l.at("fiedler")) r.push_back(cell(v));
    for (const auto& v : l.at("centralization")) r.push_back(cell(v));
    rows.push_back(r);
  }
  write_tsv(dir / "series_spectral.tsv", header, rows);

  header = {"layer"};
  for (const auto& t : topo_tau) header.push_back("betti0@" + cell(t));
  for (const auto& t : topo_tau) header.push_back("betti1@" + cell(t));
  header.insert(header.end(), {"significant_h0", "significant_h1", "mean_dim0_persistence"});
  rows.clear();
  for (const auto& l : layers) {
    std::vector<std::string> r{std::to_string(l.at("layer").get<std::size_t>())};
    for (const auto& v : l.at("betti0_at")) r.push_back(cell(v));
    for (const auto& v : l.at("betti1_at")) r.push_back(cell(v));
    r.insert(r.end(), {cell(l.at("significant_h0")), cell(l.at("significant_h1")), cell(l.at("mean_dim0_persistence"))});
    rows.push_back(r);
  }
  write_tsv(dir / "series_topology.tsv", header, rows);

  header = {"layer", "sink_concentration", "mean_entropy"};
  for (const auto& p : kl_p) header.push_back("kl_reduction@" + cell(p));
  rows.clear();
  for (const auto& l : layers) {
    std::vector<std::string> r{std::to_string(l.at("layer").get<std::size_t>()), cell(l.at("sink_concentration")),
                               cell(l.at("mean_entropy"))};
    for (const auto& v : l.at("kl_reduction")) r.push_back(cell(v));
    rows.push_back(r);
  }
  write_tsv(dir / "series_kl.tsv", header, rows);

  header = {"layer", "directional_influence", "geom_semantic_alignment", "mean_transform_magnitude",
            "entropy_magnitude_corr", "ref_count", "spectral_gap", "participation_ratio"};
  rows.clear();
  for (const auto& l : layers) {
    rows.push_back({std::to_string(l.at("layer").get<std::size_t>()), cell(l.at("directional_influence")),
                    cell(l.at("geom_semantic_alignment")), cell(l.at("mean_transform_magnitude")),
                    cell(l.at("entropy_magnitude_corr")), std::to_string(l.at("ref_count").get<std::size_t>()),
                    cell(l.at("spectral_gap")), cell(l.at("participation_ratio"))});
  }
  write_tsv(dir / "series_valuespace.tsv", header, rows);
}

}  // namespace attngeo::report
