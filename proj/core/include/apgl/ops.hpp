#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "apgl/tensor.hpp"

namespace apgl::ad {

enum class Trans : bool { No = false, Yes = true };

// C (+)= op(A) * op(B) on raw row-major buffers; op(A) is m x k, op(B) k x n.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

// 2-D product op(a) * op(b).
Tensor matmul(const Tensor& a, const Tensor& b, Trans ta = Trans::No,
              Trans tb = Trans::No);
// Batched product over the leading axis: [g x m x k] * [g x k x n], with b
// optionally transposed per group.
Tensor bmm(const Tensor& a, const Tensor& b, Trans tb = Trans::No);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// out[i] = x[i] + y[i mod numel(y)]. Covers bias-add ([n] over [m x n]) and
// positional add ([N x d] over [B*N x d]).
Tensor add_tiled(const Tensor& x, const Tensor& y);

// scores: [groups*heads x n x n], bias: [groups x n x n]; the same bias block
// is added to every head of its group.
Tensor add_head_bias(const Tensor& scores, const Tensor& bias,
                     std::size_t heads);

// Softmax over the last axis. Entries with mask == 0 are excluded and output
// exactly 0. An empty mask means every entry is visible.
Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask = {});

Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
// log(1 + exp(x)), stable for large |x|.
Tensor softplus(const Tensor& x);

// Normalizes each row of [m x n] then applies gamma[n], beta[n].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12);

// Inverted dropout. rate == 0 returns x unchanged.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// rows of table[r x c] selected by ids; out-of-range ids throw.
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

Tensor reshape(const Tensor& x, Shape shape);

// [batch*seq x d] -> [batch*heads x seq x d/heads] and back.
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq,
                   std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

// [m x n], [m x n] -> [m]
Tensor row_dot(const Tensor& a, const Tensor& b);
// Rows scaled to unit L2 norm; a zero row raises DegenerateError naming it.
Tensor l2_normalize_rows(const Tensor& x);
// [m x n] -> [m]
Tensor logsumexp_rows(const Tensor& x);
// [m x m] -> [m]
Tensor diagonal(const Tensor& x);
// Sum of all entries -> [1]
Tensor sum(const Tensor& x);
// Sum of entries weighted by a constant vector -> [1]
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

// coeffs: [g] (or [g x 1]); blocks: constant g blocks of block_size values.
// out block b = coeffs[b] * blocks[b].
Tensor scale_blocks(const Tensor& coeffs, std::span<const double> blocks,
                    Shape block_shape);

}  // namespace apgl::ad
