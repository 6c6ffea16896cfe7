#pragma once

#include <string>
#include <vector>

#include "apgl/training.hpp"

namespace apgl::testing {

// Three users over 12 items; trains the full pipeline at d=4, N=6.
inline data::SplitDataset toy_dataset() {
  data::SplitDataset d;
  d.num_items = 12;
  d.num_users = 3;
  d.users = {
      {0, {1, 2, 3, 4, 5, 6, 7, 8}, 9, 10},
      {1, {4, 9, 11, 12}, 2, 3},
      {2, {7, 3, 7, 5, 10, 1}, 12, 6},
  };
  return d;
}

inline training::TrainConfig toy_config() {
  training::TrainConfig c;
  c.dim = 4;
  c.max_len = 6;
  c.batch_size = 3;
  c.layers = 1;
  c.heads = 2;
  c.rank = 2;
  c.gcn_layers = 2;
  c.alpha = 0.5;
  c.lambda_gce = 0.3;
  c.lambda_seq = 0.2;
  c.max_epochs = 5;
  c.patience = 2;
  c.seed = 3;
  return c;
}

// Training init is tiny (std 0.02); larger values give gradients that are
// well above finite-difference noise.
inline void enlarge_parameters(model::Model& m, double factor) {
  for (auto& p : m.params)
    if (p.name.find("norm") == std::string::npos)
      for (auto& x : p.tensor.mutable_values()) x *= factor;
}

inline std::vector<std::size_t> all_users(const data::SplitDataset& d) {
  std::vector<std::size_t> idx(d.users.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace apgl::testing
