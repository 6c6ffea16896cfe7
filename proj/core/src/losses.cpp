#include "apgl/losses.hpp"

#include "apgl/error.hpp"
#include "apgl/ops.hpp"

namespace apgl::losses {

ad::Tensor info_nce(const ad::Tensor& anchors, const ad::Tensor& positives,
                    double tau) {
  if (!(tau > 0.0)) {
    throw ContractError("InfoNCE temperature must be positive");
  }
  if (anchors.rank() != 2 || anchors.shape() != positives.shape()) {
    throw ShapeError("info_nce: " + ad::shape_string(anchors.shape()) +
                     " vs " + ad::shape_string(positives.shape()));
  }
  const auto a = ad::l2_normalize_rows(anchors);
  const auto b = ad::l2_normalize_rows(positives);
  const auto logits = ad::scale(ad::matmul(a, b, ad::Trans::No, ad::Trans::Yes),
                                1.0 / tau);
  return ad::sub(ad::sum(ad::logsumexp_rows(logits)),
                 ad::sum(ad::diagonal(logits)));
}

ad::Tensor next_item_bce(const ad::Tensor& positive_logits,
                         const ad::Tensor& negative_logits) {
  if (positive_logits.shape() != negative_logits.shape()) {
    throw ShapeError("next_item_bce: " +
                     ad::shape_string(positive_logits.shape()) + " vs " +
                     ad::shape_string(negative_logits.shape()));
  }
  return ad::add(ad::sum(ad::softplus(ad::scale(positive_logits, -1.0))),
                 ad::sum(ad::softplus(negative_logits)));
}

ad::Tensor seq_cl_loss(const ad::Tensor& view1, const ad::Tensor& view2,
                       double tau) {
  return ad::scale(ad::add(info_nce(view1, view2, tau),
                           info_nce(view2, view1, tau)),
                   0.5);
}

ad::Tensor total_loss(const LossParts& parts, double lambda_gce,
                      double lambda_seq) {
  if (lambda_gce < 0.0 || lambda_seq < 0.0) {
    throw ContractError("loss weights must be non-negative");
  }
  ad::Tensor total = parts.rec;
  if (parts.gce.defined() && lambda_gce != 0.0) {
    total = ad::add(total, ad::scale(parts.gce, lambda_gce));
  }
  if (parts.seq.defined() && lambda_seq != 0.0) {
    total = ad::add(total, ad::scale(parts.seq, lambda_seq));
  }
  return total;
}

}  // namespace apgl::losses
