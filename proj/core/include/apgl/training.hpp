#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apgl/agcl.hpp"
#include "apgl/data.hpp"
#include "apgl/evaluation.hpp"
#include "apgl/graph.hpp"
#include "apgl/losses.hpp"
#include "apgl/model.hpp"
#include "apgl/optim.hpp"

namespace apgl::training {

using data::ItemId;
using data::UserId;

enum class PgeGraph { Original, Refined };
enum class GceBatch { Targets, UniqueItems };

struct TrainConfig {
  std::size_t dim = 64;
  std::size_t max_len = 50;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t gcn_layers = 2;
  double alpha = 0.05;
  std::size_t rank = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  double dropout = 0.2;
  double lambda_gce = 0.1;
  double lambda_seq = 0.1;
  double tau = 0.2;
  std::size_t window = 2;
  std::size_t max_epochs = 1000;
  std::size_t patience = 40;
  std::uint64_t seed = 1;
  data::AugmentRatios augment;
  bool enable_agcl = true;
  bool enable_pge = true;
  PgeGraph pge_graph = PgeGraph::Refined;
  bool literal_layer_avg = true;
  bool fusion_ablation = false;
  GceBatch gce_batch = GceBatch::Targets;
  bool zero_pge_projection = false;
  bool exclude_history = true;
  std::size_t eval_batch_size = 256;
};

// Throws ContractError naming the first offending field.
void validate(const TrainConfig& config);

model::ModelShape model_shape(const TrainConfig& config, std::size_t num_users,
                              std::size_t num_items);

// One training instance per user: input = train[:-1], targets = train[1:],
// both keeping the most recent max_len steps and left-padded.
struct Batch {
  std::size_t size = 0;
  std::vector<UserId> users;
  std::vector<ItemId> inputs;     // [B*N]
  std::vector<ItemId> targets;    // [B*N], padding where no step is trained
  std::vector<ItemId> negatives;  // [B*N], padding where no step is trained
  std::vector<ItemId> view1;      // [B*N] augmented inputs
  std::vector<ItemId> view2;
  std::vector<ItemId> gce_items;  // rows fed to the graph contrastive loss
};

// Everything random here is seeded from (seed, epoch, batch index), so the
// result does not depend on when or where the batch is assembled.
Batch make_batch(const data::SplitDataset& data, const TrainConfig& config,
                 std::span<const std::size_t> user_indices, std::size_t epoch,
                 std::size_t batch_index);

// sum over trained steps of -log sigma(h.v_pos) - log(1 - sigma(h.v_neg)).
// hidden: [B*N x d]; padding targets are skipped.
ad::Tensor next_item_loss(const ad::Tensor& hidden,
                          const ad::Tensor& item_embeddings,
                          std::span<const ItemId> targets,
                          std::span<const ItemId> negatives);

struct Runtime {
  const data::SplitDataset* data = nullptr;
  TrainConfig config;
  graph::SparseMatrix graph;  // built from training items only
  model::Model model;
};

Runtime make_runtime(const data::SplitDataset& data, const TrainConfig& config);

struct StepLosses {
  losses::LossParts parts;
  ad::Tensor total;
};

// Forward pass of all enabled terms for one batch. dropout_seed selects the
// dropout streams; pass nullopt for a deterministic forward without dropout.
StepLosses compute_losses(Runtime& rt, const Batch& batch,
                          std::optional<std::uint64_t> dropout_seed);

// Inference-time user vectors [B x d] (no dropout, no gradient history).
std::vector<double> user_vectors(const Runtime& rt,
                                 std::span<const UserId> users,
                                 std::span<const std::vector<ItemId>> inputs);

eval::MetricsReport evaluate_split(const Runtime& rt, eval::Split split,
                                   bool keep_ranks = false);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double rec = 0.0, gce = 0.0, seq = 0.0, total = 0.0;
  eval::MetricsReport valid;
  double seconds = 0.0;
};

// key=value line without the wall time so runs can be compared bytewise.
std::string format_epoch(const EpochRecord& record);

struct TrainState {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_ndcg20 = -1.0;
  std::size_t since_best = 0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after the best snapshot is updated.
  std::function<void(const Runtime&, const ad::Adam&)> on_improve;
};

// Runs epochs until patience is exhausted or max_epochs, then restores the
// parameters of the best validation epoch. A non-finite loss or gradient
// throws NumericError naming the epoch and batch.
TrainState train(Runtime& rt, ad::Adam& optimizer, const TrainHooks& hooks = {});

}  // namespace apgl::training
