#include "apgl/encoder.hpp"

#include <cmath>

#include "apgl/error.hpp"
#include "apgl/ops.hpp"

namespace apgl::encoder {

namespace {

constexpr double kInitStd = 0.02;

ad::Tensor truncated_normal(ad::Shape shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, kInitStd);
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) {
    do {
      x = normal(rng);
    } while (std::abs(x) > 2.0 * kInitStd);
  }
  return ad::Tensor::from_values(std::move(shape), std::move(v), true);
}

ad::Tensor zeros(ad::Shape shape) {
  return ad::Tensor::zeros(std::move(shape), true);
}

ad::Tensor ones(ad::Shape shape) {
  return ad::Tensor::full(std::move(shape), 1.0, true);
}

ad::Tensor affine(const ad::Tensor& x, const ad::Tensor& w,
                  const ad::Tensor& b) {
  return ad::add_tiled(ad::matmul(x, w), b);
}

}  // namespace

EncoderParams init_encoder(const EncoderShape& shape, Rng& rng) {
  if (shape.num_items == 0 || shape.max_len == 0 || shape.dim == 0 ||
      shape.heads == 0 || shape.dim % shape.heads != 0) {
    throw ContractError("encoder: dim must be a positive multiple of heads");
  }
  const std::size_t d = shape.dim;
  EncoderParams p;
  p.heads = shape.heads;
  p.dropout = shape.dropout;
  p.item_embeddings = truncated_normal({shape.num_items + 1, d}, rng);
  auto pad = p.item_embeddings.mutable_values();
  std::fill(pad.begin(), pad.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  p.positions = truncated_normal({shape.max_len, d}, rng);
  for (std::size_t l = 0; l < shape.layers; ++l) {
    LayerParams layer;
    layer.attn_norm_gamma = ones({d});
    layer.attn_norm_beta = zeros({d});
    layer.query_w = truncated_normal({d, d}, rng);
    layer.query_b = zeros({d});
    layer.key_w = truncated_normal({d, d}, rng);
    layer.key_b = zeros({d});
    layer.value_w = truncated_normal({d, d}, rng);
    layer.value_b = zeros({d});
    layer.out_w = truncated_normal({d, d}, rng);
    layer.out_b = zeros({d});
    layer.ffn_norm_gamma = ones({d});
    layer.ffn_norm_beta = zeros({d});
    layer.ffn_in_w = truncated_normal({d, d}, rng);
    layer.ffn_in_b = zeros({d});
    layer.ffn_out_w = truncated_normal({d, d}, rng);
    layer.ffn_out_b = zeros({d});
    p.layers.push_back(std::move(layer));
  }
  p.final_norm_gamma = ones({d});
  p.final_norm_beta = zeros({d});
  return p;
}

void register_parameters(EncoderParams& p, ad::ParameterSet& set) {
  set.add("item_embeddings", p.item_embeddings);
  set.add("positions", p.positions);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    set.add(prefix + "attn_norm.gamma", layer.attn_norm_gamma);
    set.add(prefix + "attn_norm.beta", layer.attn_norm_beta);
    set.add(prefix + "query.w", layer.query_w);
    set.add(prefix + "query.b", layer.query_b);
    set.add(prefix + "key.w", layer.key_w);
    set.add(prefix + "key.b", layer.key_b);
    set.add(prefix + "value.w", layer.value_w);
    set.add(prefix + "value.b", layer.value_b);
    set.add(prefix + "out.w", layer.out_w);
    set.add(prefix + "out.b", layer.out_b);
    set.add(prefix + "ffn_norm.gamma", layer.ffn_norm_gamma);
    set.add(prefix + "ffn_norm.beta", layer.ffn_norm_beta);
    set.add(prefix + "ffn_in.w", layer.ffn_in_w);
    set.add(prefix + "ffn_in.b", layer.ffn_in_b);
    set.add(prefix + "ffn_out.w", layer.ffn_out_w);
    set.add(prefix + "ffn_out.b", layer.ffn_out_b);
  }
  set.add("final_norm.gamma", p.final_norm_gamma);
  set.add("final_norm.beta", p.final_norm_beta);
}

PgeParams init_pge(std::size_t num_users, std::size_t dim, Rng& rng,
                   bool zero_projection) {
  PgeParams p;
  p.user_embeddings = truncated_normal({num_users, dim}, rng);
  p.hidden_w = truncated_normal({dim, dim}, rng);
  p.hidden_b = zeros({dim});
  p.out_w = truncated_normal({dim, 1}, rng);
  p.out_b = zeros({1});
  if (zero_projection) {
    auto w = p.out_w.mutable_values();
    std::fill(w.begin(), w.end(), 0.0);
  }
  return p;
}

void register_parameters(PgeParams& p, ad::ParameterSet& set) {
  set.add("pge.user_embeddings", p.user_embeddings);
  set.add("pge.hidden.w", p.hidden_w);
  set.add("pge.hidden.b", p.hidden_b);
  set.add("pge.out.w", p.out_w);
  set.add("pge.out.b", p.out_b);
}

ad::Tensor pge_weights(const PgeParams& pge, std::span<const UserId> users) {
  const auto s = ad::gather_rows(pge.user_embeddings, users);
  const auto hidden = ad::tanh(affine(s, pge.hidden_w, pge.hidden_b));
  return affine(hidden, pge.out_w, pge.out_b);
}

ad::Tensor pge_encoding(const PgeParams& pge, std::span<const UserId> users,
                        std::span<const graph::SubgraphMatrix> subgraphs) {
  if (users.size() != subgraphs.size() || subgraphs.empty()) {
    throw ShapeError("pge_encoding: " + std::to_string(users.size()) +
                     " users vs " + std::to_string(subgraphs.size()) +
                     " subgraphs");
  }
  const std::size_t n = subgraphs.front().n;
  std::vector<double> blocks;
  blocks.reserve(subgraphs.size() * n * n);
  for (const auto& sg : subgraphs) {
    if (sg.n != n) throw ShapeError("pge_encoding: ragged subgraph sizes");
    blocks.insert(blocks.end(), sg.weights.begin(), sg.weights.end());
  }
  return ad::scale_blocks(pge_weights(pge, users), blocks, {n, n});
}

std::vector<std::uint8_t> attention_mask(std::span<const ItemId> ids,
                                         std::size_t batch,
                                         std::size_t seq_len) {
  std::vector<std::uint8_t> mask(batch * seq_len * seq_len, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const ItemId* seq = ids.data() + b * seq_len;
    std::uint8_t* block = mask.data() + b * seq_len * seq_len;
    for (std::size_t q = 0; q < seq_len; ++q)
      for (std::size_t k = 0; k <= q; ++k)
        block[q * seq_len + k] =
            (seq[k] != data::kPadding || k == q) ? 1 : 0;
  }
  return mask;
}

std::vector<std::size_t> last_real_positions(std::span<const ItemId> ids,
                                             std::size_t batch,
                                             std::size_t seq_len) {
  if (ids.size() != batch * seq_len) {
    throw ShapeError("last_real_positions: " + std::to_string(ids.size()) +
                     " ids for " + std::to_string(batch) + " x " +
                     std::to_string(seq_len));
  }
  std::vector<std::size_t> pos(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t p = seq_len;
    while (p > 0 && ids[b * seq_len + p - 1] == data::kPadding) --p;
    if (p == 0) {
      throw DegenerateError("sequence " + std::to_string(b) +
                            " has no real items");
    }
    pos[b] = p - 1;
  }
  return pos;
}

ad::Tensor encode(const EncoderParams& params, std::span<const ItemId> ids,
                  std::size_t batch, const ad::Tensor* relative_pe,
                  Rng* dropout_rng, EncodeTrace* trace) {
  const std::size_t n = params.max_len();
  const std::size_t d = params.dim();
  const std::size_t heads = params.heads;
  if (batch == 0 || ids.size() != batch * n) {
    throw ShapeError("encode: " + std::to_string(ids.size()) + " ids for " +
                     std::to_string(batch) + " sequences of length " +
                     std::to_string(n));
  }
  // Rejects all-padding sequences.
  (void)last_real_positions(ids, batch, n);
  if (relative_pe &&
      relative_pe->shape() != ad::Shape{batch, n, n}) {
    throw ShapeError("encode: relative encoding " +
                     ad::shape_string(relative_pe->shape()) + ", expected " +
                     ad::shape_string({batch, n, n}));
  }

  const auto base_mask = attention_mask(ids, batch, n);
  std::vector<std::uint8_t> mask(batch * heads * n * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      std::copy_n(base_mask.begin() + static_cast<std::ptrdiff_t>(b * n * n),
                  n * n,
                  mask.begin() + static_cast<std::ptrdiff_t>((b * heads + h) * n * n));

  auto drop = [&](const ad::Tensor& x) {
    return dropout_rng ? ad::dropout(x, params.dropout, *dropout_rng) : x;
  };

  const double logit_scale = 1.0 / std::sqrt(static_cast<double>(d / heads));
  ad::Tensor h = ad::add_tiled(ad::gather_rows(params.item_embeddings, ids),
                               params.positions);
  h = drop(h);
  for (const auto& layer : params.layers) {
    const auto a =
        ad::layer_norm(h, layer.attn_norm_gamma, layer.attn_norm_beta);
    const auto q = ad::split_heads(affine(a, layer.query_w, layer.query_b),
                                   batch, n, heads);
    const auto k = ad::split_heads(affine(a, layer.key_w, layer.key_b), batch,
                                   n, heads);
    const auto v = ad::split_heads(affine(a, layer.value_w, layer.value_b),
                                   batch, n, heads);
    auto logits = ad::scale(ad::bmm(q, k, ad::Trans::Yes), logit_scale);
    if (relative_pe) logits = ad::add_head_bias(logits, *relative_pe, heads);
    const auto probs = ad::softmax_rows(logits, mask);
    if (trace) trace->attention.push_back(probs);
    const auto context = ad::merge_heads(ad::bmm(probs, v), batch, heads);
    h = ad::add(h, drop(affine(context, layer.out_w, layer.out_b)));

    const auto f =
        ad::layer_norm(h, layer.ffn_norm_gamma, layer.ffn_norm_beta);
    const auto inner = ad::gelu(affine(f, layer.ffn_in_w, layer.ffn_in_b));
    h = ad::add(h, drop(affine(inner, layer.ffn_out_w, layer.ffn_out_b)));
  }
  return ad::layer_norm(h, params.final_norm_gamma, params.final_norm_beta);
}

ad::Tensor user_repr(const ad::Tensor& hidden, std::span<const ItemId> ids,
                     std::size_t batch) {
  if (hidden.rank() != 2 || batch == 0 || hidden.dim(0) % batch != 0) {
    throw ShapeError("user_repr: hidden " + ad::shape_string(hidden.shape()) +
                     " for " + std::to_string(batch) + " sequences");
  }
  const std::size_t n = hidden.dim(0) / batch;
  const auto last = last_real_positions(ids, batch, n);
  std::vector<std::int32_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b)
    rows[b] = static_cast<std::int32_t>(b * n + last[b]);
  return ad::gather_rows(hidden, rows);
}

}  // namespace apgl::encoder
