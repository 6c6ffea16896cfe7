#include "apgl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <unordered_map>

#include "apgl/autograd.hpp"
#include "apgl/error.hpp"

namespace apgl::graph {

SparseMatrix SparseMatrix::from_triplets(std::size_t dim,
                                         std::vector<Triplet> triplets) {
  for (const auto& t : triplets) {
    if (t.row < 0 || t.col < 0 || static_cast<std::size_t>(t.row) >= dim ||
        static_cast<std::size_t>(t.col) >= dim) {
      throw ShapeError("sparse entry (" + std::to_string(t.row) + ", " +
                       std::to_string(t.col) + ") outside dimension " +
                       std::to_string(dim));
    }
    if (!std::isfinite(t.weight)) {
      throw NumericError("non-finite weight at (" + std::to_string(t.row) +
                         ", " + std::to_string(t.col) + ")");
    }
  }
  std::stable_sort(triplets.begin(), triplets.end(),
                   [](const Triplet& a, const Triplet& b) {
                     return a.row != b.row ? a.row < b.row : a.col < b.col;
                   });
  SparseMatrix m;
  m.dim_ = dim;
  m.row_ptr_.assign(dim + 1, 0);
  for (std::size_t i = 0; i < triplets.size();) {
    const auto& t = triplets[i];
    double w = 0.0;
    std::size_t j = i;
    while (j < triplets.size() && triplets[j].row == t.row &&
           triplets[j].col == t.col) {
      w += triplets[j].weight;
      ++j;
    }
    m.cols_.push_back(t.col);
    m.vals_.push_back(w);
    ++m.row_ptr_[static_cast<std::size_t>(t.row) + 1];
    i = j;
  }
  for (std::size_t r = 0; r < dim; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

double SparseMatrix::weight(ItemId row, ItemId col) const {
  if (row < 0 || static_cast<std::size_t>(row) >= dim_) return 0.0;
  auto cols = row_cols(row);
  auto it = std::lower_bound(cols.begin(), cols.end(), col);
  if (it == cols.end() || *it != col) return 0.0;
  return row_weights(row)[static_cast<std::size_t>(it - cols.begin())];
}

std::span<const ItemId> SparseMatrix::row_cols(ItemId row) const {
  const auto r = static_cast<std::size_t>(row);
  return std::span(cols_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
}

std::span<const double> SparseMatrix::row_weights(ItemId row) const {
  const auto r = static_cast<std::size_t>(row);
  return std::span(vals_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < dim_; ++r)
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      out.push_back({static_cast<ItemId>(r), cols_[k], vals_[k]});
  return out;
}

SparseMatrix SparseMatrix::transpose() const {
  auto t = triplets();
  for (auto& e : t) std::swap(e.row, e.col);
  return from_triplets(dim_, std::move(t));
}

bool SparseMatrix::is_symmetric(double tol) const {
  for (std::size_t r = 0; r < dim_; ++r)
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const auto c = cols_[k];
      auto rc = row_cols(c);
      if (!std::binary_search(rc.begin(), rc.end(), static_cast<ItemId>(r)))
        return false;
      if (std::abs(weight(c, static_cast<ItemId>(r)) - vals_[k]) > tol)
        return false;
    }
  return true;
}

TransitionCounts accumulate(std::span<const std::vector<ItemId>> sequences,
                            std::size_t num_items, std::size_t window) {
  if (window < 1) throw ContractError("sliding window must be >= 1");
  const std::size_t dim = num_items + 1;
  TransitionCounts out;
  out.seen.assign(dim, 0);
  std::unordered_map<std::uint64_t, double> acc;
  auto key = [](ItemId a, ItemId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  };
  for (const auto& seq : sequences) {
    for (auto id : seq) {
      if (id < 0 || static_cast<std::size_t>(id) > num_items) {
        throw DataError("item id " + std::to_string(id) + " outside 0.." +
                        std::to_string(num_items));
      }
      if (id != data::kPadding) out.seen[static_cast<std::size_t>(id)] = 1;
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] == data::kPadding) continue;
      for (std::size_t k = 1; k <= window && i + k < seq.size(); ++k) {
        if (seq[i + k] == data::kPadding) continue;
        acc[key(seq[i], seq[i + k])] += 1.0 / static_cast<double>(k);
      }
    }
  }
  std::vector<Triplet> triplets;
  triplets.reserve(acc.size());
  for (const auto& [k, w] : acc) {
    triplets.push_back({static_cast<ItemId>(k >> 32),
                        static_cast<ItemId>(k & 0xFFFFFFFFu), w});
  }
  out.directed = SparseMatrix::from_triplets(dim, std::move(triplets));
  return out;
}

SparseMatrix normalize_finalize(const TransitionCounts& counts,
                                DegreeMode mode, double self_loop) {
  const auto& a = counts.directed;
  const std::size_t dim = a.dim();
  std::vector<double> deg(dim, 0.0);
  auto entries = a.triplets();
  for (const auto& e : entries) {
    const double contrib = mode == DegreeMode::Weighted ? e.weight : 1.0;
    deg[static_cast<std::size_t>(e.row)] += contrib;
    deg[static_cast<std::size_t>(e.col)] += contrib;
  }
  std::vector<Triplet> out;
  out.reserve(2 * entries.size() + dim);
  for (const auto& e : entries) {
    const double di = deg[static_cast<std::size_t>(e.row)];
    const double dj = deg[static_cast<std::size_t>(e.col)];
    if (!(di > 0.0) || !(dj > 0.0)) {
      throw NumericError("zero-degree endpoint on a nonzero entry");
    }
    const double w = (1.0 / di + 1.0 / dj) * e.weight;
    out.push_back({e.row, e.col, w});
    out.push_back({e.col, e.row, w});
  }
  for (std::size_t v = 1; v < dim; ++v) {
    const bool has_edges = deg[v] > 0.0;
    const bool seen = v < counts.seen.size() && counts.seen[v];
    if (has_edges || seen) {
      out.push_back({static_cast<ItemId>(v), static_cast<ItemId>(v), self_loop});
    }
  }
  return SparseMatrix::from_triplets(dim, std::move(out));
}

SparseMatrix build_global_graph(std::span<const std::vector<ItemId>> sequences,
                                std::size_t num_items, std::size_t window,
                                DegreeMode mode) {
  return normalize_finalize(accumulate(sequences, num_items, window), mode);
}

void spmm_raw(const SparseMatrix& a, const double* x, std::size_t cols,
              double* y) {
  const std::size_t dim = a.dim();
  for (std::size_t r = 0; r < dim; ++r) {
    double* yr = y + r * cols;
    std::fill(yr, yr + cols, 0.0);
    auto rc = a.row_cols(static_cast<ItemId>(r));
    auto rw = a.row_weights(static_cast<ItemId>(r));
    for (std::size_t k = 0; k < rc.size(); ++k) {
      const double w = rw[k];
      const double* xc = x + static_cast<std::size_t>(rc[k]) * cols;
      for (std::size_t j = 0; j < cols; ++j) yr[j] += w * xc[j];
    }
  }
}

ad::Tensor spmm(const SparseMatrix& a, const ad::Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != a.dim()) {
    throw ShapeError("spmm: graph of dimension " + std::to_string(a.dim()) +
                     " times " + ad::shape_string(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  std::vector<double> out(x.numel());
  spmm_raw(a, x.values().data(), cols, out.data());
  ad::Node* xn = x.handle().get();
  const SparseMatrix* graph = &a;
  return ad::make_result(
      "spmm", x.shape(), std::move(out), {&x}, [=](ad::Node& self) {
        // grad_x += A^T g, scattered row by row.
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < graph->dim(); ++r) {
          auto rc = graph->row_cols(static_cast<ItemId>(r));
          auto rw = graph->row_weights(static_cast<ItemId>(r));
          const double* gr = self.grad.data() + r * cols;
          for (std::size_t k = 0; k < rc.size(); ++k) {
            double* dst = g.data() + static_cast<std::size_t>(rc[k]) * cols;
            const double w = rw[k];
            for (std::size_t j = 0; j < cols; ++j) dst[j] += w * gr[j];
          }
        }
      });
}

SubgraphMatrix extract_subgraph(const SparseMatrix& a,
                                std::span<const ItemId> padded_seq) {
  SubgraphMatrix sub;
  sub.n = padded_seq.size();
  sub.weights.assign(sub.n * sub.n, 0.0);
  for (std::size_t p = 0; p < sub.n; ++p) {
    const auto ip = padded_seq[p];
    if (ip == data::kPadding) continue;
    if (ip < 0 || static_cast<std::size_t>(ip) >= a.dim()) {
      throw ShapeError("extract_subgraph: item " + std::to_string(ip) +
                       " outside graph dimension " + std::to_string(a.dim()));
    }
    for (std::size_t q = 0; q < sub.n; ++q) {
      const auto iq = padded_seq[q];
      if (iq == data::kPadding) continue;
      sub.weights[p * sub.n + q] = a.weight(ip, iq);
    }
  }
  return sub;
}

void write_graph(std::ostream& out, const SparseMatrix& a) {
  const auto old = out.precision(17);
  for (const auto& t : a.triplets()) {
    out << t.row << '\t' << t.col << '\t' << t.weight << '\n';
  }
  out.precision(old);
}

}  // namespace apgl::graph
