#include "apgl/agcl.hpp"

#include <cmath>

#include "apgl/error.hpp"
#include "apgl/losses.hpp"
#include "apgl/ops.hpp"

namespace apgl::agcl {

PerturbationFactors init_factors(std::size_t num_items, std::size_t rank,
                                 double alpha, Rng& rng) {
  if (rank == 0) throw ContractError("perturbation rank must be >= 1");
  if (alpha < 0.0) throw ContractError("perturbation strength must be >= 0");
  const std::size_t rows = num_items + 1;
  std::normal_distribution<double> normal(
      0.0, 1.0 / std::sqrt(static_cast<double>(rank * num_items)));
  auto make = [&] {
    std::vector<double> v(rows * rank, 0.0);
    for (std::size_t i = rank; i < v.size(); ++i) v[i] = normal(rng);
    return ad::Tensor::from_values({rows, rank}, std::move(v), true);
  };
  PerturbationFactors f;
  f.left = make();
  f.right = make();
  f.alpha = alpha;
  return f;
}

namespace {

void check_layers(std::size_t layers) {
  if (layers < 1) throw ContractError("propagation needs at least one layer");
}

ad::Tensor average(const ad::Tensor& total, std::size_t layers,
                   LayerAveraging averaging) {
  const double denom = averaging == LayerAveraging::Literal
                           ? static_cast<double>(layers)
                           : static_cast<double>(layers + 1);
  return ad::scale(total, 1.0 / denom);
}

}  // namespace

ad::Tensor propagate_original(const graph::SparseMatrix& a,
                              const ad::Tensor& embeddings, std::size_t layers,
                              LayerAveraging averaging) {
  check_layers(layers);
  ad::Tensor current = embeddings;
  ad::Tensor total = embeddings;
  for (std::size_t l = 0; l < layers; ++l) {
    current = graph::spmm(a, current);
    total = ad::add(total, current);
  }
  return average(total, layers, averaging);
}

ad::Tensor propagate_refined(const graph::SparseMatrix& a,
                             const PerturbationFactors& factors,
                             const ad::Tensor& embeddings, std::size_t layers,
                             LayerAveraging averaging) {
  check_layers(layers);
  if (factors.left.shape() != factors.right.shape() ||
      factors.left.dim(0) != embeddings.dim(0)) {
    throw ShapeError("propagate_refined: factors " +
                     ad::shape_string(factors.left.shape()) + "/" +
                     ad::shape_string(factors.right.shape()) +
                     " vs embeddings " + ad::shape_string(embeddings.shape()));
  }
  const auto left_proj = graph::spmm(a, factors.left);
  const auto right_proj = graph::spmm(a, factors.right);
  ad::Tensor current = embeddings;
  ad::Tensor total = embeddings;
  for (std::size_t l = 0; l < layers; ++l) {
    // rank x d, then |V| x d: O(|V| d rank) per layer.
    const auto inner =
        ad::matmul(right_proj, current, ad::Trans::Yes, ad::Trans::No);
    const auto perturbation = ad::matmul(left_proj, inner);
    current = ad::add(graph::spmm(a, current),
                      ad::scale(perturbation, factors.alpha));
    total = ad::add(total, current);
  }
  return average(total, layers, averaging);
}

GraphRepresentations propagate_both(const graph::SparseMatrix& a,
                                    const PerturbationFactors& factors,
                                    const ad::Tensor& embeddings,
                                    std::size_t layers,
                                    LayerAveraging averaging) {
  GraphRepresentations reps;
  reps.original = propagate_original(a, embeddings, layers, averaging);
  reps.refined = propagate_refined(a, factors, embeddings, layers, averaging);
  reps.layers = layers;
  return reps;
}

ad::Tensor gce_loss(const ad::Tensor& original_batch,
                    const ad::Tensor& refined_batch, double tau) {
  if (original_batch.rank() != 2 || original_batch.dim(0) < 1) {
    throw ShapeError("gce_loss: empty batch");
  }
  return losses::info_nce(original_batch, refined_batch, tau);
}

std::pair<ad::Tensor, ad::Tensor> batch_rows(const GraphRepresentations& reps,
                                             std::span<const ItemId> ids) {
  for (auto id : ids) {
    if (id == data::kPadding) {
      throw ContractError("batch_rows: padding id in batch");
    }
  }
  return {ad::gather_rows(reps.original, ids),
          ad::gather_rows(reps.refined, ids)};
}

RefinedGraphView::RefinedGraphView(const graph::SparseMatrix& a,
                                   const PerturbationFactors& factors)
    : graph_(&a), rank_(factors.rank()), alpha_(factors.alpha) {
  if (factors.left.dim(0) != a.dim()) {
    throw ShapeError("RefinedGraphView: factors " +
                     ad::shape_string(factors.left.shape()) +
                     " vs graph dimension " + std::to_string(a.dim()));
  }
  left_proj_.resize(a.dim() * rank_);
  right_proj_.resize(a.dim() * rank_);
  graph::spmm_raw(a, factors.left.values().data(), rank_, left_proj_.data());
  graph::spmm_raw(a, factors.right.values().data(), rank_, right_proj_.data());
}

double RefinedGraphView::weight(ItemId row, ItemId col) const {
  const double* l = left_proj_.data() + static_cast<std::size_t>(row) * rank_;
  const double* r = right_proj_.data() + static_cast<std::size_t>(col) * rank_;
  double s = 0.0;
  for (std::size_t k = 0; k < rank_; ++k) s += l[k] * r[k];
  return graph_->weight(row, col) + alpha_ * s;
}

graph::SubgraphMatrix extract_refined_subgraph(
    const RefinedGraphView& view, std::span<const ItemId> padded_seq) {
  graph::SubgraphMatrix sub;
  sub.n = padded_seq.size();
  sub.weights.assign(sub.n * sub.n, 0.0);
  for (std::size_t p = 0; p < sub.n; ++p) {
    if (padded_seq[p] == data::kPadding) continue;
    for (std::size_t q = 0; q < sub.n; ++q) {
      if (padded_seq[q] == data::kPadding) continue;
      sub.weights[p * sub.n + q] = view.weight(padded_seq[p], padded_seq[q]);
    }
  }
  return sub;
}

}  // namespace apgl::agcl
