#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "apgl/data.hpp"
#include "apgl/graph.hpp"

namespace apgl::testing {

using Dense = std::vector<std::vector<double>>;

// Directed window weights by enumerating every ordered pair (i, j), i < j,
// of every sequence and keeping those at distance <= window.
inline Dense brute_force_transitions(
    std::span<const std::vector<data::ItemId>> seqs, std::size_t num_items,
    std::size_t window) {
  Dense d(num_items + 1, std::vector<double>(num_items + 1, 0.0));
  for (const auto& s : seqs)
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) {
        if (j - i > window) continue;
        if (s[i] == data::kPadding || s[j] == data::kPadding) continue;
        d[static_cast<std::size_t>(s[i])][static_cast<std::size_t>(s[j])] +=
            1.0 / static_cast<double>(j - i);
      }
  return d;
}

// Weighted degree (row plus column sums), scaling by 1/deg_i + 1/deg_j,
// additive transpose, then unit self-loops on items that appear anywhere.
inline Dense scripted_normalize(const Dense& d,
                                std::span<const std::vector<data::ItemId>> seqs) {
  const std::size_t n = d.size();
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      deg[i] += d[i][j];
      deg[j] += d[i][j];
    }
  Dense scaled(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (d[i][j] != 0.0) scaled[i][j] = d[i][j] * (1.0 / deg[i] + 1.0 / deg[j]);
  Dense a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = scaled[i][j] + scaled[j][i];
  std::vector<bool> seen(n, false);
  for (const auto& s : seqs)
    for (auto id : s)
      if (id != data::kPadding) seen[static_cast<std::size_t>(id)] = true;
  for (std::size_t i = 1; i < n; ++i)
    if (seen[i]) a[i][i] += 1.0;
  return a;
}

inline Dense to_dense(const graph::SparseMatrix& m) {
  Dense d(m.dim(), std::vector<double>(m.dim(), 0.0));
  for (const auto& t : m.triplets())
    d[static_cast<std::size_t>(t.row)][static_cast<std::size_t>(t.col)] = t.weight;
  return d;
}

inline double max_abs_diff(const Dense& a, const Dense& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
  return worst;
}

// Row-major [rows x cols] helpers for the dense propagation oracle.
inline std::vector<double> dense_mm(const std::vector<double>& a,
                                    const std::vector<double>& b,
                                    std::size_t m, std::size_t k,
                                    std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline std::vector<double> flatten(const Dense& d) {
  std::vector<double> out;
  for (const auto& row : d) out.insert(out.end(), row.begin(), row.end());
  return out;
}

inline std::vector<double> transpose(const std::vector<double>& a,
                                     std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

// Layer-averaged propagation over a dense operator M:
// E_l = M E_{l-1}, out = (E_0 + ... + E_L) / divisor.
inline std::vector<double> dense_propagate(const std::vector<double>& m,
                                           const std::vector<double>& e0,
                                           std::size_t n, std::size_t d,
                                           std::size_t layers, double divisor) {
  std::vector<double> acc = e0, cur = e0;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = dense_mm(m, cur, n, n, d);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += cur[i];
  }
  for (auto& x : acc) x /= divisor;
  return acc;
}

// Random sparse symmetric-ish sequences over 1..num_items.
inline std::vector<std::vector<data::ItemId>> random_sequences(
    std::mt19937_64& rng, std::size_t count, std::size_t num_items,
    std::size_t min_len, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<data::ItemId> item(
      1, static_cast<data::ItemId>(num_items));
  std::vector<std::vector<data::ItemId>> out(count);
  for (auto& s : out) {
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) s.push_back(item(rng));
  }
  return out;
}

}  // namespace apgl::testing
