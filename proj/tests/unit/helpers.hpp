#pragma once
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "attngeo/attention.hpp"

namespace testing {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("attngeo_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Rows drawn from a Dirichlet(alpha) over the valid positions.
inline attngeo::AttentionMatrix random_attention(std::size_t n, bool causal, std::uint64_t seed, double alpha = 0.7) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t valid = causal ? i + 1 : n;
    double s = 0;
    for (std::size_t j = 0; j < valid; ++j) s += (w[i * n + j] = g(rng) + 1e-12);
    for (std::size_t j = 0; j < valid; ++j) w[i * n + j] /= s;
  }
  return attngeo::AttentionMatrix(n, w, causal);
}

// a with rows and columns relabeled: out(p[i], p[j]) = a(i, j).
inline attngeo::AttentionMatrix permuted(const attngeo::AttentionMatrix& a, const std::vector<std::size_t>& p) {
  const std::size_t n = a.size();
  std::vector<double> w(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w[p[i] * n + p[j]] = a(i, j);
  return attngeo::AttentionMatrix(n, w, a.causal());
}

}  // namespace testing
