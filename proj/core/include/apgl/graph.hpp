#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "apgl/data.hpp"
#include "apgl/tensor.hpp"

namespace apgl::graph {

using data::ItemId;

struct Triplet {
  ItemId row = 0;
  ItemId col = 0;
  double weight = 0.0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// Square CSR matrix over item ids; row/column 0 is the padding slot.
// Coordinates are unique and columns within a row are sorted.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  // Duplicate coordinates are summed. Non-finite weights or out-of-range ids
  // throw.
  static SparseMatrix from_triplets(std::size_t dim,
                                    std::vector<Triplet> triplets);

  std::size_t dim() const { return dim_; }
  std::size_t nnz() const { return cols_.size(); }

  // Weight at (row, col); 0 when absent.
  double weight(ItemId row, ItemId col) const;

  std::span<const ItemId> row_cols(ItemId row) const;
  std::span<const double> row_weights(ItemId row) const;

  // All entries in row-major sorted order.
  std::vector<Triplet> triplets() const;
  SparseMatrix transpose() const;
  bool is_symmetric(double tol = 0.0) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<ItemId> cols_;
  std::vector<double> vals_;
};

// Directed co-occurrence counts before normalization, plus the set of items
// that occurred at all (they receive self-loops even without edges).
struct TransitionCounts {
  SparseMatrix directed;
  std::vector<std::uint8_t> seen;
};

// Adds 1/k to (v_i, v_{i+k}) for k = 1..window within each sequence.
// Padding ids are skipped.
TransitionCounts accumulate(std::span<const std::vector<ItemId>> sequences,
                            std::size_t num_items, std::size_t window);

enum class DegreeMode { Weighted, Count };

// Scales every directed entry by 1/deg(i) + 1/deg(j), symmetrizes by
// A + A^T and adds `self_loop` on the diagonal of every seen item.
SparseMatrix normalize_finalize(const TransitionCounts& counts,
                                DegreeMode mode = DegreeMode::Weighted,
                                double self_loop = 1.0);

// accumulate + normalize_finalize.
SparseMatrix build_global_graph(std::span<const std::vector<ItemId>> sequences,
                                std::size_t num_items, std::size_t window,
                                DegreeMode mode = DegreeMode::Weighted);

// y = A x on raw buffers; x and y are dim x cols row-major.
void spmm_raw(const SparseMatrix& a, const double* x, std::size_t cols,
              double* y);

// Differentiable in x only; graph weights are constants.
ad::Tensor spmm(const SparseMatrix& a, const ad::Tensor& x);

// Dense n x n weights aligned to the positions of one padded sequence.
struct SubgraphMatrix {
  std::size_t n = 0;
  std::vector<double> weights;

  double at(std::size_t p, std::size_t q) const { return weights[p * n + q]; }
};

SubgraphMatrix extract_subgraph(const SparseMatrix& a,
                                std::span<const ItemId> padded_seq);

// "i<TAB>j<TAB>weight" per entry in sorted coordinate order.
void write_graph(std::ostream& out, const SparseMatrix& a);

}  // namespace apgl::graph
