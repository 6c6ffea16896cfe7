#include "apgl/model.hpp"

#include <algorithm>

#include "apgl/random.hpp"

namespace apgl::model {

namespace {

enum Stream : std::uint64_t { kEncoder = 11, kPge = 12, kFactors = 13, kFusion = 14 };

void zero_row0(std::span<double> values, std::size_t width) {
  if (values.empty()) return;
  std::fill(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(width),
            0.0);
}

}  // namespace

Model build_model(const ModelShape& shape, std::uint64_t seed) {
  Model m;
  Rng enc_rng(derive_seed({seed, kEncoder}));
  m.encoder = encoder::init_encoder({shape.num_items, shape.max_len, shape.dim,
                                     shape.layers, shape.heads, shape.dropout},
                                    enc_rng);
  Rng pge_rng(derive_seed({seed, kPge}));
  m.pge = encoder::init_pge(shape.num_users, shape.dim, pge_rng,
                            shape.zero_pge_projection);
  Rng factor_rng(derive_seed({seed, kFactors}));
  m.factors =
      agcl::init_factors(shape.num_items, shape.rank, shape.alpha, factor_rng);
  Rng fusion_rng(derive_seed({seed, kFusion}));
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<double> w(shape.dim * shape.dim);
  for (auto& x : w) x = normal(fusion_rng);
  m.fusion_w = ad::Tensor::from_values({shape.dim, shape.dim}, std::move(w), true);

  encoder::register_parameters(m.encoder, m.params);
  encoder::register_parameters(m.pge, m.params);
  m.params.add("factors.left", m.factors.left);
  m.params.add("factors.right", m.factors.right);
  m.params.add("fusion.w", m.fusion_w);
  return m;
}

void zero_padding_grads(Model& model) {
  for (auto* t : {&model.encoder.item_embeddings, &model.factors.left,
                  &model.factors.right}) {
    if (t->has_grad()) zero_row0(t->mutable_grad(), t->dim(1));
  }
}

void reset_padding_rows(Model& model) {
  for (auto* t : {&model.encoder.item_embeddings, &model.factors.left,
                  &model.factors.right}) {
    zero_row0(t->mutable_values(), t->dim(1));
  }
}

}  // namespace apgl::model
