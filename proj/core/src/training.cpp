#include "apgl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "apgl/encoder.hpp"
#include "apgl/error.hpp"
#include "apgl/ops.hpp"
#include "apgl/random.hpp"

namespace apgl::training {

namespace {

enum Stream : std::uint64_t {
  kNegatives = 1,
  kAugment = 2,
  kDropout = 3,
  kShuffle = 4,
};

enum DropoutUse : std::uint64_t { kRecPass = 1, kView1Pass = 2, kView2Pass = 3 };

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ContractError("config " + field + ": " + what);
}

std::vector<ItemId> sorted_unique(std::span<const ItemId> items) {
  std::vector<ItemId> out(items.begin(), items.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void append_padded(std::vector<ItemId>& dst, std::span<const ItemId> seq,
                   std::size_t len) {
  const auto padded = data::left_pad(seq, len);
  dst.insert(dst.end(), padded.begin(), padded.end());
}

// Graph-side state shared by every encoder pass of one forward.
struct GraphContext {
  std::optional<agcl::GraphRepresentations> reps;
  std::optional<agcl::RefinedGraphView> refined_view;
};

GraphContext graph_context(const Runtime& rt, bool need_reps) {
  const auto& cfg = rt.config;
  const auto& m = rt.model;
  const auto avg = cfg.literal_layer_avg ? agcl::LayerAveraging::Literal
                                         : agcl::LayerAveraging::Mean;
  GraphContext ctx;
  if (need_reps) {
    if (cfg.enable_agcl) {
      ctx.reps = agcl::propagate_both(rt.graph, m.factors,
                                      m.encoder.item_embeddings,
                                      cfg.gcn_layers, avg);
    } else {
      agcl::GraphRepresentations reps;
      reps.original = agcl::propagate_original(
          rt.graph, m.encoder.item_embeddings, cfg.gcn_layers, avg);
      reps.refined = reps.original;
      reps.layers = cfg.gcn_layers;
      ctx.reps = std::move(reps);
    }
  }
  if (cfg.enable_pge && cfg.enable_agcl && cfg.pge_graph == PgeGraph::Refined)
    ctx.refined_view.emplace(rt.graph, m.factors);
  return ctx;
}

// Encoder pass with the optional relative encoding and fusion term.
ad::Tensor run_encoder(const Runtime& rt, const GraphContext& ctx,
                       std::span<const UserId> users,
                       std::span<const ItemId> ids, std::size_t batch,
                       Rng* dropout_rng) {
  const auto& cfg = rt.config;
  const auto& m = rt.model;
  const std::size_t n = cfg.max_len;
  std::optional<ad::Tensor> pe;
  if (cfg.enable_pge) {
    std::vector<graph::SubgraphMatrix> subgraphs;
    subgraphs.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto seq = ids.subspan(b * n, n);
      subgraphs.push_back(ctx.refined_view
                              ? agcl::extract_refined_subgraph(*ctx.refined_view, seq)
                              : graph::extract_subgraph(rt.graph, seq));
    }
    pe = encoder::pge_encoding(m.pge, users, subgraphs);
  }
  auto hidden = encoder::encode(m.encoder, ids, batch, pe ? &*pe : nullptr,
                                dropout_rng);
  if (cfg.fusion_ablation) {
    hidden = ad::add(hidden, ad::matmul(ad::gather_rows(ctx.reps->refined, ids),
                                        m.fusion_w));
  }
  return hidden;
}

}  // namespace

void validate(const TrainConfig& c) {
  require(c.dim > 0, "dim", "must be positive");
  require(c.max_len > 0, "max_len", "must be positive");
  require(c.batch_size > 0, "batch_size", "must be positive");
  require(c.lr > 0.0 && std::isfinite(c.lr), "lr", "must be positive");
  require(c.gcn_layers > 0, "gcn_layers", "must be positive");
  require(c.alpha >= 0.0, "alpha", "must be nonnegative");
  require(c.rank > 0, "rank", "must be positive");
  require(c.heads > 0 && c.dim % c.heads == 0, "heads",
          "must divide dim");
  require(c.layers > 0, "layers", "must be positive");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout", "must be in [0, 1)");
  require(c.lambda_gce >= 0.0, "lambda_gce", "must be nonnegative");
  require(c.lambda_seq >= 0.0, "lambda_seq", "must be nonnegative");
  require(c.tau > 0.0, "tau", "must be positive");
  require(c.window > 0, "window", "must be positive");
  require(c.max_epochs > 0, "max_epochs", "must be positive");
  require(c.patience < c.max_epochs, "patience", "must be below max_epochs");
  require(c.eval_batch_size > 0, "eval_batch_size", "must be positive");
  for (double r : {c.augment.crop, c.augment.mask, c.augment.reorder})
    require(r >= 0.0 && r <= 1.0, "augment", "ratios must be in [0, 1]");
}

model::ModelShape model_shape(const TrainConfig& c, std::size_t num_users,
                              std::size_t num_items) {
  model::ModelShape s;
  s.num_items = num_items;
  s.num_users = num_users;
  s.max_len = c.max_len;
  s.dim = c.dim;
  s.layers = c.layers;
  s.heads = c.heads;
  s.dropout = c.dropout;
  s.rank = c.rank;
  s.alpha = c.alpha;
  s.zero_pge_projection = c.zero_pge_projection;
  return s;
}

Batch make_batch(const data::SplitDataset& data, const TrainConfig& config,
                 std::span<const std::size_t> user_indices, std::size_t epoch,
                 std::size_t batch_index) {
  const std::size_t n = config.max_len;
  Rng neg_rng(derive_seed({config.seed, epoch, batch_index, kNegatives}));
  Rng aug_rng(derive_seed({config.seed, epoch, batch_index, kAugment}));
  Batch batch;
  batch.size = user_indices.size();
  for (auto idx : user_indices) {
    const auto& u = data.users.at(idx);
    if (u.train.size() < 2) {
      throw ContractError("user " + std::to_string(u.user) +
                          " has fewer than 2 training items");
    }
    const std::span<const ItemId> train(u.train);
    const auto input = data::truncate_recent(train.first(train.size() - 1), n);
    const auto target = data::truncate_recent(train.subspan(1), n);
    batch.users.push_back(u.user);
    append_padded(batch.inputs, input, n);
    append_padded(batch.targets, target, n);

    const auto history = sorted_unique(train);
    const auto padded_targets = data::left_pad(target, n);
    for (auto t : padded_targets) {
      batch.negatives.push_back(
          t == data::kPadding
              ? data::kPadding
              : data::sample_negative(history, data.num_items, neg_rng));
    }

    const auto views = data::augment_pair(input, config.augment, aug_rng);
    append_padded(batch.view1, views.first, n);
    append_padded(batch.view2, views.second, n);

    if (config.gce_batch == GceBatch::Targets)
      batch.gce_items.push_back(train.back());
  }
  if (config.gce_batch == GceBatch::UniqueItems) {
    std::vector<ItemId> all;
    for (auto id : batch.inputs)
      if (id != data::kPadding) all.push_back(id);
    for (auto id : batch.targets)
      if (id != data::kPadding) all.push_back(id);
    batch.gce_items = sorted_unique(all);
  }
  return batch;
}

ad::Tensor next_item_loss(const ad::Tensor& hidden,
                          const ad::Tensor& item_embeddings,
                          std::span<const ItemId> targets,
                          std::span<const ItemId> negatives) {
  if (targets.size() != hidden.dim(0) || negatives.size() != targets.size()) {
    throw ShapeError("next_item_loss: hidden " +
                     ad::shape_string(hidden.shape()) + ", " +
                     std::to_string(targets.size()) + " targets, " +
                     std::to_string(negatives.size()) + " negatives");
  }
  std::vector<std::int32_t> rows;
  std::vector<ItemId> pos, neg;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == data::kPadding) continue;
    if (negatives[i] == data::kPadding) {
      throw ContractError("next_item_loss: step " + std::to_string(i) +
                          " has a target but no negative");
    }
    rows.push_back(static_cast<std::int32_t>(i));
    pos.push_back(targets[i]);
    neg.push_back(negatives[i]);
  }
  if (rows.empty()) throw ContractError("next_item_loss: no trained steps");
  const auto h = ad::gather_rows(hidden, rows);
  const auto pos_logits = ad::row_dot(h, ad::gather_rows(item_embeddings, pos));
  const auto neg_logits = ad::row_dot(h, ad::gather_rows(item_embeddings, neg));
  return losses::next_item_bce(pos_logits, neg_logits);
}

Runtime make_runtime(const data::SplitDataset& data, const TrainConfig& config) {
  validate(config);
  Runtime rt;
  rt.data = &data;
  rt.config = config;
  std::vector<std::vector<ItemId>> train_seqs;
  train_seqs.reserve(data.users.size());
  for (const auto& u : data.users) train_seqs.push_back(u.train);
  rt.graph = graph::build_global_graph(train_seqs, data.num_items,
                                       config.window, graph::DegreeMode::Weighted);
  rt.model = model::build_model(model_shape(config, data.num_users, data.num_items),
                                config.seed);
  return rt;
}

StepLosses compute_losses(Runtime& rt, const Batch& batch,
                          std::optional<std::uint64_t> dropout_seed) {
  const auto& cfg = rt.config;
  const bool want_gce = cfg.enable_agcl && cfg.lambda_gce > 0.0;
  const bool want_seq = cfg.lambda_seq > 0.0;
  const auto ctx = graph_context(rt, want_gce || cfg.fusion_ablation);

  auto pass = [&](std::span<const ItemId> ids, std::uint64_t use) {
    std::optional<Rng> rng;
    if (dropout_seed) rng.emplace(derive_seed({*dropout_seed, use}));
    return run_encoder(rt, ctx, batch.users, ids, batch.size,
                       rng ? &*rng : nullptr);
  };

  StepLosses out;
  const auto hidden = pass(batch.inputs, kRecPass);
  out.parts.rec = next_item_loss(hidden, rt.model.encoder.item_embeddings,
                                 batch.targets, batch.negatives);
  if (want_gce) {
    const auto [orig, refined] = agcl::batch_rows(*ctx.reps, batch.gce_items);
    out.parts.gce = agcl::gce_loss(orig, refined, cfg.tau);
  }
  if (want_seq) {
    const auto h1 = pass(batch.view1, kView1Pass);
    const auto h2 = pass(batch.view2, kView2Pass);
    out.parts.seq = losses::seq_cl_loss(
        encoder::user_repr(h1, batch.view1, batch.size),
        encoder::user_repr(h2, batch.view2, batch.size), cfg.tau);
  }
  out.total = losses::total_loss(out.parts, cfg.enable_agcl ? cfg.lambda_gce : 0.0,
                                 cfg.lambda_seq);
  return out;
}

std::vector<double> user_vectors(const Runtime& rt,
                                 std::span<const UserId> users,
                                 std::span<const std::vector<ItemId>> inputs) {
  ad::NoGradGuard no_grad;
  const std::size_t batch = users.size();
  std::vector<ItemId> ids;
  ids.reserve(batch * rt.config.max_len);
  for (const auto& seq : inputs) append_padded(ids, seq, rt.config.max_len);
  const auto ctx = graph_context(rt, rt.config.fusion_ablation);
  const auto hidden = run_encoder(rt, ctx, users, ids, batch, nullptr);
  const auto repr = encoder::user_repr(hidden, ids, batch);
  return {repr.values().begin(), repr.values().end()};
}

eval::MetricsReport evaluate_split(const Runtime& rt, eval::Split split,
                                   bool keep_ranks) {
  const auto instances = eval::eval_instances(*rt.data, split);
  eval::EvalOptions opts;
  opts.batch_size = rt.config.eval_batch_size;
  opts.exclude_history = rt.config.exclude_history;
  opts.keep_ranks = keep_ranks;
  const auto repr = [&](std::span<const UserId> users,
                        std::span<const std::vector<ItemId>> inputs) {
    return user_vectors(rt, users, inputs);
  };
  return eval::evaluate(instances, repr,
                        rt.model.encoder.item_embeddings.values(),
                        rt.config.dim, opts);
}

std::string format_epoch(const EpochRecord& r) {
  std::ostringstream out;
  out << std::setprecision(10) << "epoch=" << r.epoch << " rec=" << r.rec
      << " gce=" << r.gce << " seq=" << r.seq << " total=" << r.total << ' '
      << eval::format_metrics(r.valid);
  return out.str();
}

TrainState train(Runtime& rt, ad::Adam& optimizer, const TrainHooks& hooks) {
  const auto& cfg = rt.config;
  auto& params = rt.model.params;
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < rt.data->users.size(); ++i)
    if (rt.data->users[i].train.size() >= 2) trainable.push_back(i);
  if (trainable.empty()) throw DataError("no user has 2 or more training items");

  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params)
      best.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  };

  TrainState state;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    auto order = trainable;
    Rng shuffle_rng(derive_seed({cfg.seed, epoch, kShuffle}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    const std::size_t num_batches =
        (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t b = 0; b < num_batches; ++b) {
      const auto where = [&] {
        return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      };
      const std::size_t first = b * cfg.batch_size;
      const auto indices = std::span(order).subspan(
          first, std::min(cfg.batch_size, order.size() - first));
      const auto batch = make_batch(*rt.data, cfg, indices, epoch, b);
      StepLosses step;
      try {
        step = compute_losses(rt, batch,
                              derive_seed({cfg.seed, epoch, b, kDropout}));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where());
      }
      const double total = step.total.item();
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at " + where());
      }
      ad::backward(step.total);
      model::zero_padding_grads(rt.model);
      try {
        optimizer.step(params);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where());
      }
      model::reset_padding_rows(rt.model);
      params.zero_grad();

      record.rec += step.parts.rec.item();
      if (step.parts.gce.defined()) record.gce += step.parts.gce.item();
      if (step.parts.seq.defined()) record.seq += step.parts.seq.item();
      record.total += total;
    }
    record.valid = evaluate_split(rt, eval::Split::Valid);
    record.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    state.epochs_run = epoch;
    state.history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);

    const double ndcg = record.valid.ndcg_at(20);
    if (ndcg > state.best_ndcg20) {
      state.best_ndcg20 = ndcg;
      state.best_epoch = epoch;
      state.since_best = 0;
      snapshot();
      if (hooks.on_improve) hooks.on_improve(rt, optimizer);
    } else if (++state.since_best > cfg.patience) {
      break;
    }
  }

  std::size_t i = 0;
  for (auto& p : params) {
    auto dst = p.tensor.mutable_values();
    std::copy(best[i].begin(), best[i].end(), dst.begin());
    ++i;
  }
  return state;
}

}  // namespace apgl::training
