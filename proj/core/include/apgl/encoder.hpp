#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "apgl/data.hpp"
#include "apgl/graph.hpp"
#include "apgl/optim.hpp"
#include "apgl/random.hpp"
#include "apgl/tensor.hpp"

namespace apgl::encoder {

using data::ItemId;
using data::UserId;

struct LayerParams {
  ad::Tensor attn_norm_gamma, attn_norm_beta;
  ad::Tensor query_w, query_b;
  ad::Tensor key_w, key_b;
  ad::Tensor value_w, value_b;
  ad::Tensor out_w, out_b;
  ad::Tensor ffn_norm_gamma, ffn_norm_beta;
  ad::Tensor ffn_in_w, ffn_in_b;
  ad::Tensor ffn_out_w, ffn_out_b;
};

struct EncoderShape {
  std::size_t num_items = 0;
  std::size_t max_len = 50;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  double dropout = 0.2;
};

struct EncoderParams {
  ad::Tensor item_embeddings;  // [(|V|+1) x d], row 0 is padding
  ad::Tensor positions;        // [N x d]
  std::vector<LayerParams> layers;
  ad::Tensor final_norm_gamma, final_norm_beta;
  std::size_t heads = 1;
  double dropout = 0.0;

  std::size_t max_len() const { return positions.dim(0); }
  std::size_t dim() const { return positions.dim(1); }
};

// Truncated normal (std 0.02) weights, zero biases, unit norm scales.
EncoderParams init_encoder(const EncoderShape& shape, Rng& rng);
void register_parameters(EncoderParams& params, ad::ParameterSet& set);

// User vectors s_u and the two-layer projection d -> d -> 1 producing the
// per-user weight on global graph information.
struct PgeParams {
  ad::Tensor user_embeddings;  // [|U| x d]
  ad::Tensor hidden_w, hidden_b;
  ad::Tensor out_w, out_b;
};

// With zero_projection the output layer starts at zero, so the encoding is
// exactly zero until training moves it.
PgeParams init_pge(std::size_t num_users, std::size_t dim, Rng& rng,
                   bool zero_projection = false);
void register_parameters(PgeParams& params, ad::ParameterSet& set);

// [B x 1] scalar weight per user.
ad::Tensor pge_weights(const PgeParams& pge, std::span<const UserId> users);

// [B x N x N]: block b is weight(user_b) * subgraph_b.
ad::Tensor pge_encoding(const PgeParams& pge, std::span<const UserId> users,
                        std::span<const graph::SubgraphMatrix> subgraphs);

// Visible (query, key) pairs for a batch of left-padded sequences,
// [B x N x N]. A query sees earlier-or-equal real positions and itself.
std::vector<std::uint8_t> attention_mask(std::span<const ItemId> ids,
                                         std::size_t batch,
                                         std::size_t seq_len);

// Attention probabilities per layer, [B*heads x N x N] each.
struct EncodeTrace {
  std::vector<ad::Tensor> attention;
};

// ids: B*N left-padded item ids. relative_pe: optional [B x N x N] added to
// every head's logits in every layer. dropout_rng: null disables dropout.
// Returns [B*N x d] hidden states.
ad::Tensor encode(const EncoderParams& params, std::span<const ItemId> ids,
                  std::size_t batch, const ad::Tensor* relative_pe,
                  Rng* dropout_rng, EncodeTrace* trace = nullptr);

// Index of the last non-padding position of each sequence.
std::vector<std::size_t> last_real_positions(std::span<const ItemId> ids,
                                             std::size_t batch,
                                             std::size_t seq_len);

// [B x d] hidden vector at each sequence's last real position.
ad::Tensor user_repr(const ad::Tensor& hidden, std::span<const ItemId> ids,
                     std::size_t batch);

}  // namespace apgl::encoder
