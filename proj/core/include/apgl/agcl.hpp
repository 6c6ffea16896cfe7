#pragma once

#include <span>
#include <utility>
#include <vector>

#include "apgl/graph.hpp"
#include "apgl/random.hpp"
#include "apgl/tensor.hpp"

namespace apgl::agcl {

using data::ItemId;

// Low-rank learnable perturbation A' = (A W_US)(A W_V)^T of the fixed graph.
struct PerturbationFactors {
  ad::Tensor left;   // W_US, [(|V|+1) x rank]
  ad::Tensor right;  // W_V,  [(|V|+1) x rank]
  double alpha = 0.05;

  std::size_t rank() const { return left.dim(1); }
};

// i.i.d. normal entries with std 1/sqrt(rank * num_items); padding row zero.
PerturbationFactors init_factors(std::size_t num_items, std::size_t rank,
                                 double alpha, Rng& rng);

enum class LayerAveraging {
  Literal,  // (E0 + ... + EL) / L
  Mean,     // (E0 + ... + EL) / (L + 1)
};

struct GraphRepresentations {
  ad::Tensor original;
  ad::Tensor refined;
  std::size_t layers = 0;
};

// E_l = A E_{l-1}, E_0 = embeddings, layer-averaged.
ad::Tensor propagate_original(const graph::SparseMatrix& a,
                              const ad::Tensor& embeddings, std::size_t layers,
                              LayerAveraging averaging = LayerAveraging::Literal);

// E_l = A E_{l-1} + alpha (A W_US) ((A W_V)^T E_{l-1}), evaluated right to
// left so the dense perturbation is never formed.
ad::Tensor propagate_refined(const graph::SparseMatrix& a,
                             const PerturbationFactors& factors,
                             const ad::Tensor& embeddings, std::size_t layers,
                             LayerAveraging averaging = LayerAveraging::Literal);

GraphRepresentations propagate_both(const graph::SparseMatrix& a,
                                    const PerturbationFactors& factors,
                                    const ad::Tensor& embeddings,
                                    std::size_t layers,
                                    LayerAveraging averaging);

// Cosine InfoNCE between matching rows of the two graph views.
ad::Tensor gce_loss(const ad::Tensor& original_batch,
                    const ad::Tensor& refined_batch, double tau);

// Rows of both representations for the given (real, possibly repeated) ids.
std::pair<ad::Tensor, ad::Tensor> batch_rows(const GraphRepresentations& reps,
                                             std::span<const ItemId> ids);

// Read-only snapshot of the refined graph A + alpha A' supporting per-pair
// lookups in O(rank) without materializing A'.
class RefinedGraphView {
 public:
  RefinedGraphView(const graph::SparseMatrix& a,
                   const PerturbationFactors& factors);

  double weight(ItemId row, ItemId col) const;

 private:
  const graph::SparseMatrix* graph_;
  std::size_t rank_;
  double alpha_;
  std::vector<double> left_proj_;   // A W_US
  std::vector<double> right_proj_;  // A W_V
};

graph::SubgraphMatrix extract_refined_subgraph(
    const RefinedGraphView& view, std::span<const ItemId> padded_seq);

}  // namespace apgl::agcl
