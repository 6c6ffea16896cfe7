#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "apgl/data.hpp"

namespace apgl::eval {

using data::ItemId;
using data::UserId;

inline constexpr std::array<std::size_t, 3> kCutoffs{5, 10, 20};

// 1 + number of candidates that beat the target. Candidates are real items
// 1..|V| (scores[0] is ignored) minus `history`. A candidate with an equal
// score beats the target when its id is lower. Throws ContractError if the
// target is in the history.
std::size_t rank_target(std::span<const double> scores,
                        std::span<const ItemId> history, ItemId target);

// scores_i = user . V_i for every row of the item table [(|V|+1) x d].
std::vector<double> score_items(std::span<const double> user,
                                std::span<const double> item_table,
                                std::size_t dim);

struct HitNdcg {
  double hr = 0.0;
  double ndcg = 0.0;
};

HitNdcg hr_ndcg(std::span<const std::size_t> ranks, std::size_t k);

struct MetricsReport {
  std::array<double, 3> hr{};
  std::array<double, 3> ndcg{};
  std::vector<std::size_t> ranks;  // per evaluated user, in input order

  double hr_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

MetricsReport summarize(std::vector<std::size_t> ranks, bool keep_ranks);

// "hr@5=... hr@10=... hr@20=... ndcg@5=... ndcg@10=... ndcg@20=..."
std::string format_metrics(const MetricsReport& report);

enum class Split { Valid, Test };

// Validation targets are predicted from the training items; test targets
// from training plus the validation item.
struct EvalInstances {
  std::vector<UserId> users;
  std::vector<std::vector<ItemId>> inputs;
  std::vector<ItemId> targets;
};

EvalInstances eval_instances(const data::SplitDataset& data, Split split);

// Items already seen in `input`, except the target itself.
std::vector<ItemId> ranking_history(std::span<const ItemId> input,
                                    ItemId target);

// Produces [batch x dim] user vectors, row-major, for the given users and
// unpadded input sequences.
using ReprFn = std::function<std::vector<double>(
    std::span<const UserId>, std::span<const std::vector<ItemId>>)>;

struct EvalOptions {
  std::size_t batch_size = 256;
  bool exclude_history = true;
  bool keep_ranks = false;
};

MetricsReport evaluate(const EvalInstances& instances, const ReprFn& repr,
                       std::span<const double> item_table, std::size_t dim,
                       const EvalOptions& options);

// Ranks items by training-set frequency, same candidates and tie rule.
MetricsReport popularity_baseline(const data::SplitDataset& data, Split split,
                                  bool exclude_history = true);

struct Svd {
  std::size_t rows = 0, cols = 0;
  std::vector<double> u;       // [rows x r], r = min(rows, cols)
  std::vector<double> sigma;   // r values, descending
  std::vector<double> v;       // [cols x r]
};

Svd thin_svd(std::span<const double> matrix, std::size_t rows,
             std::size_t cols);

struct SpectrumReport {
  std::vector<double> singular_values;  // descending
  std::vector<double> coords;           // [rows x 2]: rows projected on v_1, v_2
};

// matrix excludes the padding row. Needs at least 2 rows and 2 columns.
SpectrumReport spectrum(std::span<const double> matrix, std::size_t rows,
                        std::size_t cols);

// "item_id,x,y" with item ids starting at 1.
void write_spectrum_csv(std::ostream& out, const SpectrumReport& report);
void write_singular_values(std::ostream& out, const SpectrumReport& report);

}  // namespace apgl::eval
