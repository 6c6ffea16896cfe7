#pragma once

#include <cstdint>

#include "apgl/agcl.hpp"
#include "apgl/encoder.hpp"
#include "apgl/optim.hpp"

namespace apgl::model {

struct ModelShape {
  std::size_t num_items = 0;
  std::size_t num_users = 0;
  std::size_t max_len = 50;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  double dropout = 0.2;
  std::size_t rank = 32;
  double alpha = 0.05;
  bool zero_pge_projection = false;
};

// Every parameter group exists regardless of which modules are enabled, and
// each group draws from its own seed stream, so toggles never shift the
// initial values of other groups.
struct Model {
  encoder::EncoderParams encoder;
  encoder::PgeParams pge;
  agcl::PerturbationFactors factors;
  ad::Tensor fusion_w;  // [d x d], only read by the fusion ablation
  ad::ParameterSet params;
};

Model build_model(const ModelShape& shape, std::uint64_t seed);

// Padding rows of the item table and both factors stay at zero: their
// gradients are cleared before a step and their values reset after it.
void zero_padding_grads(Model& model);
void reset_padding_rows(Model& model);

}  // namespace apgl::model
