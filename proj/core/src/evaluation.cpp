#include "apgl/evaluation.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "apgl/error.hpp"

namespace apgl::eval {

std::size_t rank_target(std::span<const double> scores,
                        std::span<const ItemId> history, ItemId target) {
  if (target <= 0 || static_cast<std::size_t>(target) >= scores.size()) {
    throw ContractError("target " + std::to_string(target) +
                        " outside 1.." + std::to_string(scores.size() - 1));
  }
  std::vector<std::uint8_t> excluded(scores.size(), 0);
  for (auto h : history) {
    if (h == target) {
      throw ContractError("target " + std::to_string(target) +
                          " is excluded by the history");
    }
    if (h > 0 && static_cast<std::size_t>(h) < scores.size())
      excluded[static_cast<std::size_t>(h)] = 1;
  }
  const double t = scores[static_cast<std::size_t>(target)];
  std::size_t rank = 1;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (excluded[i] || i == static_cast<std::size_t>(target)) continue;
    if (scores[i] > t || (scores[i] == t && i < static_cast<std::size_t>(target)))
      ++rank;
  }
  return rank;
}

std::vector<double> score_items(std::span<const double> user,
                                std::span<const double> item_table,
                                std::size_t dim) {
  const std::size_t n = item_table.size() / dim;
  std::vector<double> scores(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = item_table.data() + i * dim;
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += user[j] * row[j];
    scores[i] = s;
  }
  return scores;
}

HitNdcg hr_ndcg(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw ContractError("hr_ndcg: empty rank list");
  double hits = 0.0, gain = 0.0;
  for (auto r : ranks) {
    if (r < 1) throw ContractError("hr_ndcg: ranks start at 1");
    if (r <= k) {
      hits += 1.0;
      gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
  }
  const double n = static_cast<double>(ranks.size());
  return {hits / n, gain / n};
}

namespace {

std::size_t cutoff_index(std::size_t k) {
  for (std::size_t i = 0; i < kCutoffs.size(); ++i)
    if (kCutoffs[i] == k) return i;
  throw ContractError("no metric recorded at K=" + std::to_string(k));
}

}  // namespace

double MetricsReport::hr_at(std::size_t k) const { return hr[cutoff_index(k)]; }
double MetricsReport::ndcg_at(std::size_t k) const {
  return ndcg[cutoff_index(k)];
}

MetricsReport summarize(std::vector<std::size_t> ranks, bool keep_ranks) {
  MetricsReport report;
  for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
    const auto m = hr_ndcg(ranks, kCutoffs[i]);
    report.hr[i] = m.hr;
    report.ndcg[i] = m.ndcg;
  }
  if (keep_ranks) report.ranks = std::move(ranks);
  return report;
}

std::string format_metrics(const MetricsReport& report) {
  std::ostringstream out;
  out << std::setprecision(10);
  for (std::size_t i = 0; i < kCutoffs.size(); ++i)
    out << (i ? " " : "") << "hr@" << kCutoffs[i] << '=' << report.hr[i];
  for (std::size_t i = 0; i < kCutoffs.size(); ++i)
    out << " ndcg@" << kCutoffs[i] << '=' << report.ndcg[i];
  return out.str();
}

EvalInstances eval_instances(const data::SplitDataset& data, Split split) {
  EvalInstances out;
  for (const auto& u : data.users) {
    out.users.push_back(u.user);
    auto input = u.train;
    if (split == Split::Test) input.push_back(u.valid);
    out.inputs.push_back(std::move(input));
    out.targets.push_back(split == Split::Valid ? u.valid : u.test);
  }
  return out;
}

std::vector<ItemId> ranking_history(std::span<const ItemId> input,
                                    ItemId target) {
  std::vector<ItemId> history;
  for (auto i : input)
    if (i != target && i != data::kPadding) history.push_back(i);
  return history;
}

MetricsReport evaluate(const EvalInstances& instances, const ReprFn& repr,
                       std::span<const double> item_table, std::size_t dim,
                       const EvalOptions& options) {
  const std::size_t n = instances.users.size();
  if (n == 0) throw ContractError("evaluate: no users");
  if (options.batch_size == 0) throw ContractError("evaluate: batch size 0");
  std::vector<std::size_t> ranks(n);
  for (std::size_t start = 0; start < n; start += options.batch_size) {
    const std::size_t count = std::min(options.batch_size, n - start);
    const auto users = std::span(instances.users).subspan(start, count);
    const auto inputs = std::span(instances.inputs).subspan(start, count);
    const auto vectors = repr(users, inputs);
    if (vectors.size() != count * dim) {
      throw ShapeError("evaluate: representation has " +
                       std::to_string(vectors.size()) + " values, expected " +
                       std::to_string(count * dim));
    }
    for (std::size_t b = 0; b < count; ++b) {
      const auto scores = score_items(
          std::span(vectors).subspan(b * dim, dim), item_table, dim);
      const ItemId target = instances.targets[start + b];
      const auto history = options.exclude_history
                               ? ranking_history(inputs[b], target)
                               : std::vector<ItemId>{};
      ranks[start + b] = rank_target(scores, history, target);
    }
  }
  return summarize(std::move(ranks), options.keep_ranks);
}

MetricsReport popularity_baseline(const data::SplitDataset& data, Split split,
                                  bool exclude_history) {
  std::vector<double> counts(data.num_items + 1, 0.0);
  for (const auto& u : data.users)
    for (auto i : u.train) counts[static_cast<std::size_t>(i)] += 1.0;
  const auto inst = eval_instances(data, split);
  std::vector<std::size_t> ranks;
  ranks.reserve(inst.users.size());
  for (std::size_t b = 0; b < inst.users.size(); ++b) {
    const auto history = exclude_history
                             ? ranking_history(inst.inputs[b], inst.targets[b])
                             : std::vector<ItemId>{};
    ranks.push_back(rank_target(counts, history, inst.targets[b]));
  }
  return summarize(std::move(ranks), false);
}

Svd thin_svd(std::span<const double> matrix, std::size_t rows,
             std::size_t cols) {
  if (matrix.size() != rows * cols || rows == 0 || cols == 0) {
    throw ShapeError("thin_svd: " + std::to_string(matrix.size()) +
                     " values for " + std::to_string(rows) + " x " +
                     std::to_string(cols));
  }
  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> m(matrix.data(),
                                     static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out;
  out.rows = rows;
  out.cols = cols;
  const auto r = static_cast<std::size_t>(svd.singularValues().size());
  out.sigma.assign(svd.singularValues().data(),
                   svd.singularValues().data() + r);
  const RowMajor u = svd.matrixU();
  const RowMajor v = svd.matrixV();
  out.u.assign(u.data(), u.data() + u.size());
  out.v.assign(v.data(), v.data() + v.size());
  return out;
}

SpectrumReport spectrum(std::span<const double> matrix, std::size_t rows,
                        std::size_t cols) {
  if (rows < 2 || cols < 2) {
    throw ContractError("spectrum needs at least 2 items and 2 dimensions");
  }
  const auto svd = thin_svd(matrix, rows, cols);
  const std::size_t r = svd.sigma.size();
  SpectrumReport report;
  report.singular_values = svd.sigma;
  // Values under the usual numerical-rank tolerance are round-off.
  const double tol = static_cast<double>(std::max(rows, cols)) *
                     std::numeric_limits<double>::epsilon() *
                     (r > 0 ? svd.sigma[0] : 0.0);
  for (auto& s : report.singular_values)
    if (s <= tol) s = 0.0;
  report.coords.assign(rows * 2, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j)
        s += matrix[i * cols + j] * svd.v[j * r + c];
      report.coords[i * 2 + c] = s;
    }
  return report;
}

void write_spectrum_csv(std::ostream& out, const SpectrumReport& report) {
  const auto old = out.precision(17);
  out << "item_id,x,y\n";
  for (std::size_t i = 0; i < report.coords.size() / 2; ++i)
    out << i + 1 << ',' << report.coords[2 * i] << ','
        << report.coords[2 * i + 1] << '\n';
  out.precision(old);
}

void write_singular_values(std::ostream& out, const SpectrumReport& report) {
  const auto old = out.precision(17);
  for (double s : report.singular_values) out << s << '\n';
  out.precision(old);
}

}  // namespace apgl::eval
