#include "attngeo/attention.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace attngeo {

IndexSet make_index_set(std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  return positions;
}

AttentionMatrix::AttentionMatrix(std::size_t n, std::vector<double> weights, bool causal)
    : n_(n), causal_(causal), w_(std::move(weights)) {
  if (w_.size() != n_ * n_) {
    throw std::invalid_argument("attention matrix: expected " + std::to_string(n_ * n_) +
                                " weights, got " + std::to_string(w_.size()));
  }
}

AttentionMatrix AttentionMatrix::uniform(std::size_t n, bool causal) {
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m = causal ? i + 1 : n;
    for (std::size_t j = 0; j < m; ++j) w[i * n + j] = 1.0 / static_cast<double>(m);
  }
  return AttentionMatrix(n, std::move(w), causal);
}

AttentionMatrix AttentionMatrix::from_rows(const std::vector<std::vector<double>>& rows, bool causal) {
  const std::size_t n = rows.size();
  std::vector<double> w;
  w.reserve(n * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw std::invalid_argument("attention matrix: ragged rows");
    w.insert(w.end(), r.begin(), r.end());
  }
  return AttentionMatrix(n, std::move(w), causal);
}

std::vector<double> AttentionMatrix::valid_entries() const {
  std::vector<double> out;
  out.reserve(causal_ ? n_ * (n_ + 1) / 2 : n_ * n_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < valid_count(i); ++j) out.push_back(w_[i * n_ + j]);
  }
  return out;
}

std::vector<double> AttentionMatrix::column_sums() const {
  std::vector<double> s(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) s[j] += w_[i * n_ + j];
  }
  return s;
}

void AttentionMatrix::validate(double row_tol, double mask_tol) const {
  for (std::size_t i = 0; i < n_; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double a = w_[i * n_ + j];
      if (!std::isfinite(a)) {
        throw std::invalid_argument("row " + std::to_string(i) + " col " + std::to_string(j) +
                                    ": non-finite weight");
      }
      if (!valid(i, j)) {
        if (std::abs(a) > mask_tol) {
          std::ostringstream os;
          os << "row " << i << " col " << j << ": masked weight " << a << " is not zero";
          throw std::invalid_argument(os.str());
        }
        continue;
      }
      if (a < -mask_tol || a > 1.0 + mask_tol) {
        std::ostringstream os;
        os << "row " << i << " col " << j << ": weight " << a << " outside [0, 1]";
        throw std::invalid_argument(os.str());
      }
      sum += a;
    }
    if (std::abs(sum - 1.0) > row_tol) {
      std::ostringstream os;
      os.precision(9);
      os << "row " << i << ": sum " << sum << " outside 1 +/- " << row_tol;
      throw std::invalid_argument(os.str());
    }
  }
}

AttentionMatrix mean_matrix(std::span<const AttentionMatrix> matrices) {
  if (matrices.empty()) throw std::invalid_argument("mean_matrix: no matrices");
  const std::size_t n = matrices.front().size();
  std::vector<double> acc(n * n, 0.0);
  for (const auto& m : matrices) {
    if (m.size() != n) throw std::invalid_argument("mean_matrix: size mismatch");
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += m.data()[k];
  }
  for (double& x : acc) x /= static_cast<double>(matrices.size());
  return AttentionMatrix(n, std::move(acc), matrices.front().causal());
}

}  // namespace attngeo
