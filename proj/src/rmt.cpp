#include "attngeo/rmt.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "attngeo/parallel.hpp"

namespace attngeo::rmt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class F>
double adaptive_simpson(const F& f, double a, double b, double fa, double fm, double fb, double whole, double tol,
                        int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

Eigen::MatrixXd to_eigen(const AttentionMatrix& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return m;
}

double finite_mean(const std::vector<double>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    sum += x;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kInf;
}

}  // namespace

MarchenkoPastur::MarchenkoPastur(double gamma) : gamma_(gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("MarchenkoPastur: gamma must lie in (0, 1]");
  a_ = (1.0 - std::sqrt(gamma)) * (1.0 - std::sqrt(gamma));
  b_ = (1.0 + std::sqrt(gamma)) * (1.0 + std::sqrt(gamma));
}

double MarchenkoPastur::density(double x) const {
  if (x <= a_ || x >= b_ || x <= 0.0) return 0.0;
  return std::sqrt((b_ - x) * (x - a_)) / (2.0 * std::numbers::pi * gamma_ * x);
}

double MarchenkoPastur::mass(double x0, double x1, double tol) const {
  x0 = std::max(x0, a_);
  x1 = std::min(x1, b_);
  if (x1 <= x0) return 0.0;
  // x = a + (b - a) sin^2(theta) removes the square-root endpoint singularities.
  const double w = b_ - a_;
  auto theta_of = [&](double x) { return std::asin(std::sqrt(std::clamp((x - a_) / w, 0.0, 1.0))); };
  auto integrand = [&](double th) {
    const double s = std::sin(th), c = std::cos(th);
    const double x = a_ + w * s * s;
    if (x <= 0.0) return w * c * c / (std::numbers::pi * gamma_);  // limit as x -> 0 when a = 0
    return w * w * s * s * c * c / (std::numbers::pi * gamma_ * x);
  };
  const double t0 = theta_of(x0), t1 = theta_of(x1);
  const double f0 = integrand(t0), f1 = integrand(t1), fm = integrand(0.5 * (t0 + t1));
  const double whole = simpson(t0, t1, f0, fm, f1);
  return adaptive_simpson(integrand, t0, t1, f0, fm, f1, whole, tol, 40);
}

std::vector<double> attention_spectrum(const AttentionMatrix& a) {
  if (a.size() == 0) return {};
  const Eigen::MatrixXd m = to_eigen(a);
  const Eigen::MatrixXd gram = m * m.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  std::vector<double> lambda(solver.eigenvalues().data(), solver.eigenvalues().data() + solver.eigenvalues().size());
  std::sort(lambda.begin(), lambda.end(), std::greater<>());
  // Eigenvalues below the solver's resolution are zero (numerical rank cutoff).
  const double cutoff = lambda.front() * static_cast<double>(lambda.size()) * std::numeric_limits<double>::epsilon();
  for (double& v : lambda) {
    if (v <= cutoff) v = 0.0;
  }
  double mean = 0.0;
  for (double v : lambda) mean += v;
  mean /= static_cast<double>(lambda.size());
  if (mean > 0.0) {
    for (double& v : lambda) v /= mean;
  }
  return lambda;
}

double spectral_gap(const std::vector<double>& lambda) {
  if (lambda.size() < 2 || lambda[0] <= 0.0) return 1.0;
  if (lambda[1] <= 1e-12 * lambda[0]) return kInf;
  return lambda[0] / lambda[1];
}

double participation_ratio(const std::vector<double>& lambda) {
  double s = 0.0, s2 = 0.0;
  for (double v : lambda) {
    s += v;
    s2 += v * v;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

double mp_kl(const std::vector<double>& lambda, std::size_t bins, double epsilon, const MarchenkoPastur& mp) {
  if (lambda.empty()) throw std::invalid_argument("mp_kl: empty spectrum");
  if (bins < 10) throw std::invalid_argument("mp_kl: need at least 10 bins");
  const double top = std::max(mp.upper(), *std::max_element(lambda.begin(), lambda.end()));
  const double width = top / static_cast<double>(bins);
  std::vector<double> p(bins, 0.0);
  for (double v : lambda) {
    const auto k = std::min(static_cast<std::size_t>(std::max(v, 0.0) / width), bins - 1);
    p[k] += 1.0;
  }
  const double norm = 1.0 + static_cast<double>(bins) * epsilon;
  double kl = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double pe = (p[k] / static_cast<double>(lambda.size()) + epsilon) / norm;
    const double q = (mp.mass(k * width, (k + 1) * width) + epsilon) / norm;
    kl += pe * std::log(pe / q);
  }
  return std::max(kl, 0.0);
}

double low_rank_error(const AttentionMatrix& a, std::size_t k) {
  const std::size_t n = a.size();
  if (k < 1 || k > n) throw std::invalid_argument("low_rank_error: k must lie in [1, n]");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(a));
  const Eigen::VectorXd& s = svd.singularValues();
  double total = 0.0, tail = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    total += s(i) * s(i);
    if (static_cast<std::size_t>(i) >= k) tail += s(i) * s(i);
  }
  return total > 0.0 ? std::sqrt(tail / total) : 0.0;
}

SpectrumStats spectrum_stats(const AttentionMatrix& a, const RmtConfig& cfg) {
  SpectrumStats st;
  st.eigenvalues = attention_spectrum(a);
  st.spectral_gap = spectral_gap(st.eigenvalues);
  st.participation_ratio = participation_ratio(st.eigenvalues);
  st.mp_kl = mp_kl(st.eigenvalues, cfg.bins, cfg.epsilon);
  for (std::size_t k : cfg.ranks) {
    if (k >= 1 && k <= a.size()) st.low_rank_error[k] = low_rank_error(a, k);
  }
  return st;
}

std::vector<RmtRow> rmt_rows(const dumpio::ModelDump& dump, const RmtConfig& cfg, unsigned threads) {
  const std::size_t S = dump.samples.size(), L = dump.num_layers(), H = dump.num_heads();
  if (S == 0) throw CapabilityError("rmt_rows: dump has no attention samples");
  std::vector<SpectrumStats> cells(S * L * H);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    cells[idx] = spectrum_stats(dump.attention(s, l, h), cfg);
    cells[idx].eigenvalues.clear();
  });
  std::vector<RmtRow> out;
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t h = 0; h < H; ++h) {
      RmtRow row;
      row.layer = l;
      row.head = h;
      std::vector<double> gaps;
      std::map<std::size_t, std::size_t> rank_n;
      for (std::size_t s = 0; s < S; ++s) {
        const SpectrumStats& st = cells[(s * L + l) * H + h];
        gaps.push_back(st.spectral_gap);
        row.participation_ratio += st.participation_ratio / static_cast<double>(S);
        row.mp_kl += st.mp_kl / static_cast<double>(S);
        for (const auto& [k, e] : st.low_rank_error) {
          row.low_rank_error[k] += e;
          ++rank_n[k];
        }
      }
      for (auto& [k, e] : row.low_rank_error) e /= static_cast<double>(rank_n[k]);
      row.spectral_gap = finite_mean(gaps);
      out.push_back(row);
    }
  }
  return out;
}

Comparison compare_dumps(const dumpio::ModelDump& early, const dumpio::ModelDump& late,
                         const sinks::SinkConfig& sink_cfg, unsigned threads) {
  using dumpio::DumpError;
  using dumpio::DumpErrorKind;
  const std::size_t S = early.samples.size(), L = early.num_layers(), H = early.num_heads();
  if (late.num_layers() != L || late.num_heads() != H) {
    throw DumpError(DumpErrorKind::kShape, "compare: architectures differ (" + std::to_string(L) + "x" +
                                               std::to_string(H) + " vs " + std::to_string(late.num_layers()) +
                                               "x" + std::to_string(late.num_heads()) + ")");
  }
  if (late.samples.size() != S) throw DumpError(DumpErrorKind::kShape, "compare: sample counts differ");
  for (std::size_t s = 0; s < S; ++s) {
    if (early.samples[s].seq_len() != late.samples[s].seq_len()) {
      throw DumpError(DumpErrorKind::kShape, "compare: sample " + std::to_string(s) + " differs in length");
    }
  }
  if (S == 0) throw CapabilityError("compare: dumps have no attention samples");
  sink_cfg.validate();

  struct Cell {
    double gap[2], pr[2], entropy[2], conc[2];
  };
  std::vector<Cell> cells(S * L * H);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    const std::size_t s = idx / (L * H), l = (idx / H) % L, h = idx % H;
    const AttentionMatrix a[2] = {early.attention(s, l, h), late.attention(s, l, h)};
    IndexSet sinks_union;
    for (const auto& m : a) {
      const auto d = sinks::detect_sinks(m, sink_cfg);
      sinks_union.insert(sinks_union.end(), d.positions.begin(), d.positions.end());
    }
    sinks_union = make_index_set(std::move(sinks_union));
    Cell& c = cells[idx];
    for (int k = 0; k < 2; ++k) {
      const auto lambda = attention_spectrum(a[k]);
      c.gap[k] = spectral_gap(lambda);
      c.pr[k] = participation_ratio(lambda);
      c.entropy[k] = sinks::attention_entropy(a[k]).mean;
      c.conc[k] = sinks::sink_concentration(a[k], sinks_union);
    }
  });

  Comparison out;
  out.early_label = early.manifest.checkpoint_label.value_or(early.manifest.model_id);
  out.late_label = late.manifest.checkpoint_label.value_or(late.manifest.model_id);
  const double inv = 1.0 / static_cast<double>(S * H);
  for (std::size_t l = 0; l < L; ++l) {
    LayerDelta d;
    d.layer = l;
    std::vector<double> gaps[2];
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t h = 0; h < H; ++h) {
        const Cell& c = cells[(s * L + l) * H + h];
        for (int k = 0; k < 2; ++k) gaps[k].push_back(c.gap[k]);
        d.early_pr += c.pr[0] * inv;
        d.late_pr += c.pr[1] * inv;
        d.early_entropy += c.entropy[0] * inv;
        d.late_entropy += c.entropy[1] * inv;
        d.early_concentration += c.conc[0] * inv;
        d.late_concentration += c.conc[1] * inv;
      }
    }
    d.early_gap = finite_mean(gaps[0]);
    d.late_gap = finite_mean(gaps[1]);
    out.layers.push_back(d);
  }

  auto extremes = [&](const std::string& name, auto delta) {
    MetricExtremes e;
    e.metric = name;
    e.largest_increase = -kInf;
    e.largest_decrease = kInf;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& d : out.layers) {
      const double v = delta(d);
      if (!std::isfinite(v)) continue;
      sum += v;
      ++n;
      if (v > e.largest_increase) {
        e.largest_increase = v;
        e.largest_increase_layer = d.layer;
      }
      if (v < e.largest_decrease) {
        e.largest_decrease = v;
        e.largest_decrease_layer = d.layer;
      }
    }
    e.mean_delta = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    if (!n) e.largest_increase = e.largest_decrease = std::numeric_limits<double>::quiet_NaN();
    out.extremes.push_back(e);
  };
  extremes("spectral_gap", [](const LayerDelta& d) { return d.spectral_gap(); });
  extremes("participation_ratio", [](const LayerDelta& d) { return d.participation_ratio(); });
  extremes("entropy", [](const LayerDelta& d) { return d.entropy(); });
  extremes("concentration", [](const LayerDelta& d) { return d.concentration(); });
  return out;
}

}  // namespace attngeo::rmt
