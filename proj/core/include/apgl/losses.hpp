#pragma once

#include <span>

#include "apgl/tensor.hpp"

namespace apgl::losses {

// In-batch InfoNCE with a cosine critic:
//   -sum_i log( exp(cos(a_i, b_i)/tau) / sum_j exp(cos(a_i, b_j)/tau) ).
// Rows of `anchors` and `positives` correspond. A zero-norm row raises
// DegenerateError naming the row.
ad::Tensor info_nce(const ad::Tensor& anchors, const ad::Tensor& positives,
                    double tau);

// Binary cross-entropy over next-item logits:
//   sum_s softplus(-pos_s) + softplus(neg_s)
// which equals sum_s -log sigma(pos_s) - log(1 - sigma(neg_s)).
ad::Tensor next_item_bce(const ad::Tensor& positive_logits,
                         const ad::Tensor& negative_logits);

// Symmetric sequence-level contrastive loss between two augmented views:
//   (info_nce(v1, v2) + info_nce(v2, v1)) / 2.
ad::Tensor seq_cl_loss(const ad::Tensor& view1, const ad::Tensor& view2,
                       double tau);

struct LossParts {
  ad::Tensor rec;
  ad::Tensor gce;  // undefined when the learner is disabled
  ad::Tensor seq;  // undefined when sequence CL is disabled
};

// rec + lambda_gce * gce + lambda_seq * seq. Undefined parts and zero
// weights add nothing and record no graph nodes.
ad::Tensor total_loss(const LossParts& parts, double lambda_gce,
                      double lambda_seq);

}  // namespace apgl::losses
