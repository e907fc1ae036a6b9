#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attngeo {

// Sorted, duplicate-free set of token positions.
using IndexSet = std::vector<std::size_t>;

IndexSet make_index_set(std::vector<std::size_t> positions);

// Raised when an analysis needs a dump block (Q/K/V, hidden states) that was not captured.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One (layer, head) attention map. Row i is the distribution of token i over the
// positions it may attend to: all n positions, or 0..i when causal.
class AttentionMatrix {
 public:
  AttentionMatrix() = default;
  AttentionMatrix(std::size_t n, std::vector<double> weights, bool causal);

  static AttentionMatrix uniform(std::size_t n, bool causal);
  static AttentionMatrix from_rows(const std::vector<std::vector<double>>& rows, bool causal);

  std::size_t size() const { return n_; }
  bool causal() const { return causal_; }

  double operator()(std::size_t i, std::size_t j) const { return w_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return w_[i * n_ + j]; }

  std::span<const double> row(std::size_t i) const { return {w_.data() + i * n_, n_}; }
  const std::vector<double>& data() const { return w_; }

  // Number of attendable positions in row i.
  std::size_t valid_count(std::size_t i) const { return causal_ ? i + 1 : n_; }
  bool valid(std::size_t i, std::size_t j) const { return !causal_ || j <= i; }

  // Entries at attendable positions, row-major.
  std::vector<double> valid_entries() const;

  // Column sums (attention received per token).
  std::vector<double> column_sums() const;

  // Throws std::invalid_argument on simplex, range, or causal-mask violations.
  void validate(double row_tol = 1e-4, double mask_tol = 1e-6) const;

 private:
  std::size_t n_ = 0;
  bool causal_ = false;
  std::vector<double> w_;
};

// Elementwise mean of same-shaped matrices.
AttentionMatrix mean_matrix(std::span<const AttentionMatrix> matrices);

}  // namespace attngeo
