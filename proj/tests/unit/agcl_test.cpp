#include <doctest.h>

#include <cmath>
#include <random>

#include "apgl/agcl.hpp"
#include "apgl/error.hpp"
#include "apgl/ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace apgl;
using namespace apgl::agcl;
using apgl::ad::Tensor;
using apgl::data::ItemId;
namespace t = apgl::testing;

namespace {

graph::SparseMatrix identity_graph(std::size_t n) {
  std::vector<graph::Triplet> loops;
  for (ItemId i = 0; i < static_cast<ItemId>(n); ++i) loops.push_back({i, i, 1.0});
  return graph::SparseMatrix::from_triplets(n, loops);
}

graph::SparseMatrix random_graph(std::mt19937_64& rng, std::size_t num_items,
                                 std::size_t seqs) {
  const auto s = t::random_sequences(rng, seqs, num_items, 2, 8);
  return graph::build_global_graph(s, num_items, 2);
}

PerturbationFactors random_factors(std::mt19937_64& rng, std::size_t n,
                                   std::size_t rank, double alpha) {
  PerturbationFactors f;
  f.left = t::random_tensor({n, rank}, rng, true, 0.5);
  f.right = t::random_tensor({n, rank}, rng, true, 0.5);
  f.alpha = alpha;
  return f;
}

std::vector<double> vals(const Tensor& x) {
  return {x.values().begin(), x.values().end()};
}

// Materializes A + alpha (A W_US)(A W_V)^T and propagates densely.
std::vector<double> dense_refined(const graph::SparseMatrix& a,
                                  const PerturbationFactors& f,
                                  const Tensor& e0, std::size_t layers,
                                  double divisor) {
  const std::size_t n = a.dim(), r = f.rank(), d = e0.dim(1);
  const auto dense = t::flatten(t::to_dense(a));
  const auto au = t::dense_mm(dense, vals(f.left), n, n, r);
  const auto av = t::dense_mm(dense, vals(f.right), n, n, r);
  const auto perturb = t::dense_mm(au, t::transpose(av, n, r), n, r, n);
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = dense[i] + f.alpha * perturb[i];
  return t::dense_propagate(m, vals(e0), n, d, layers, divisor);
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a[i] - b[i]));
  return w;
}

}  // namespace

TEST_CASE("identity graph with two layers gives 3/2 of the input") {
  std::mt19937_64 rng(1);
  const auto v = t::random_tensor({5, 3}, rng, false);
  const auto out = propagate_original(identity_graph(5), v, 2);
  for (std::size_t i = 0; i < v.numel(); ++i)
    CHECK(out.values()[i] == doctest::Approx(1.5 * v.values()[i]).epsilon(1e-15));
}

TEST_CASE("identity graph with one layer doubles the input") {
  std::mt19937_64 rng(2);
  const auto v = t::random_tensor({4, 2}, rng, false);
  const auto out = propagate_original(identity_graph(4), v, 1);
  for (std::size_t i = 0; i < v.numel(); ++i) CHECK(out.values()[i] == 2.0 * v.values()[i]);
}

TEST_CASE("mean averaging divides by L + 1") {
  std::mt19937_64 rng(3);
  const auto v = t::random_tensor({4, 2}, rng, false);
  const auto out = propagate_original(identity_graph(4), v, 3, LayerAveraging::Mean);
  for (std::size_t i = 0; i < v.numel(); ++i)
    CHECK(out.values()[i] == doctest::Approx(v.values()[i]).epsilon(1e-15));
}

TEST_CASE("original propagation matches a dense loop exactly") {
  std::mt19937_64 rng(4);
  const auto a = random_graph(rng, 9, 12);  // 10 nodes with padding
  const auto v = t::random_tensor({10, 3}, rng, false);
  const auto out = propagate_original(a, v, 2);
  const auto expect = t::dense_propagate(t::flatten(t::to_dense(a)), vals(v), 10, 3, 2, 2.0);
  CHECK(max_diff(out.values(), expect) < 1e-14);
}

TEST_CASE("alpha zero reproduces original propagation bitwise") {
  std::mt19937_64 rng(5);
  const auto a = random_graph(rng, 20, 30);
  const auto v = t::random_tensor({21, 4}, rng, false);
  const auto f = random_factors(rng, 21, 3, 0.0);
  CHECK(vals(propagate_refined(a, f, v, 2)) == vals(propagate_original(a, v, 2)));
  CHECK(vals(propagate_refined(a, f, v, 3, LayerAveraging::Mean)) ==
        vals(propagate_original(a, v, 3, LayerAveraging::Mean)));
}

TEST_CASE("factored propagation equals the materialized perturbation") {
  std::mt19937_64 rng(6);
  const auto a = random_graph(rng, 5, 6);  // |V| = 6 with padding
  const auto v = t::random_tensor({6, 3}, rng, false);
  const auto f = random_factors(rng, 6, 2, 0.7);
  const auto out = propagate_refined(a, f, v, 2);
  CHECK(max_diff(out.values(), dense_refined(a, f, v, 2, 2.0)) < 1e-10);

  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<std::size_t> items(4, 63), dim(1, 8), rank(1, 4), layers(1, 3);
    const auto n = items(rng);
    const auto g = random_graph(rng, n, 2 * n);
    const auto d = dim(rng);
    const auto L = layers(rng);
    const auto e = t::random_tensor({n + 1, d}, rng, false);
    const auto ff = random_factors(rng, n + 1, rank(rng), 0.3);
    CHECK(max_diff(propagate_refined(g, ff, e, L).values(),
                   dense_refined(g, ff, e, L, static_cast<double>(L))) < 1e-8);
  }
}

TEST_CASE("propagation gradients match finite differences") {
  std::mt19937_64 rng(7);
  const auto a = random_graph(rng, 6, 8);
  auto v = t::random_tensor({7, 3}, rng);
  auto f = random_factors(rng, 7, 2, 0.4);
  const auto w = t::random_tensor({7, 3}, rng, false);
  const auto r = t::gradcheck({{"V", v}, {"W_US", f.left}, {"W_V", f.right}}, [&] {
    return ad::weighted_sum(propagate_refined(a, f, v, 2), w.values());
  });
  CHECK_MESSAGE(r.worst < 1e-4, t::describe(r));
}

TEST_CASE("scaling both factors by c scales the perturbation by c squared") {
  std::mt19937_64 rng(8);
  const auto a = random_graph(rng, 10, 15);
  const auto v = t::random_tensor({11, 3}, rng, false);
  auto f = random_factors(rng, 11, 2, 1.0);
  const auto base = propagate_original(a, v, 1);
  const auto one = propagate_refined(a, f, v, 1);
  const double c = 2.5;
  PerturbationFactors scaled = f;
  scaled.left = ad::scale(f.left, c).detach();
  scaled.right = ad::scale(f.right, c).detach();
  const auto two = propagate_refined(a, scaled, v, 1);
  for (std::size_t i = 0; i < v.numel(); ++i) {
    const double d1 = one.values()[i] - base.values()[i];
    const double d2 = two.values()[i] - base.values()[i];
    CHECK(d2 == doctest::Approx(c * c * d1).epsilon(1e-9));
  }
}

TEST_CASE("factor initialization") {
  Rng rng(9);
  const auto f = init_factors(100, 8, 0.05, rng);
  CHECK(f.left.shape() == ad::Shape{101, 8});
  CHECK(f.right.shape() == ad::Shape{101, 8});
  CHECK(f.left.requires_grad());
  CHECK(f.right.requires_grad());
  CHECK(f.rank() == 8);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(f.left.values()[j] == 0.0);
    CHECK(f.right.values()[j] == 0.0);
  }
  double ss = 0.0;
  for (std::size_t i = 8; i < f.left.numel(); ++i) ss += f.left.values()[i] * f.left.values()[i];
  const double std_est = std::sqrt(ss / 800.0);
  CHECK(std_est == doctest::Approx(1.0 / std::sqrt(800.0)).epsilon(0.1));
}

TEST_CASE("gce loss closed forms") {
  const auto one = Tensor::from_values({1, 3}, {0.3, -1.0, 2.0});
  const auto other = Tensor::from_values({1, 3}, {5.0, 1.0, 0.0});
  CHECK(gce_loss(one, other, 0.2).item() == 0.0);

  const auto ortho = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  CHECK(gce_loss(ortho, ortho, 0.2).item() ==
        doctest::Approx(2.0 * std::log1p(std::exp(-5.0))).epsilon(1e-12));
  CHECK(std::abs(gce_loss(ortho, ortho, 0.2).item() - 0.01343) < 1e-5);
}

TEST_CASE("gce loss is nonnegative and within the per-sample bound") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> bsz(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = bsz(rng);
    const double tau = 0.2;
    const auto x = t::random_tensor({b, 4}, rng, false);
    const auto y = t::random_tensor({b, 4}, rng, false);
    const double loss = gce_loss(x, y, tau).item();
    CHECK(loss >= 0.0);
    const double bound =
        std::log(static_cast<double>(b - 1) * std::exp(2.0 / tau) + 1.0);
    CHECK(loss <= static_cast<double>(b) * bound + 1e-9);
  }
}

TEST_CASE("gce loss rejects a zero-norm row") {
  const auto x = Tensor::from_values({2, 2}, {1, 0, 0, 0});
  const auto y = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  CHECK_THROWS_AS(gce_loss(x, y, 0.2), DegenerateError);
}

TEST_CASE("batch rows gather exactly, allow duplicates, reject padding") {
  std::mt19937_64 rng(11);
  GraphRepresentations reps;
  reps.original = t::random_tensor({6, 3}, rng);
  reps.refined = t::random_tensor({6, 3}, rng);
  const std::vector<ItemId> ids{4, 1, 4};
  const auto [o, r] = batch_rows(reps, ids);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t j = 0; j < 3; ++j) {
      const auto src = static_cast<std::size_t>(ids[b]) * 3 + j;
      CHECK(o.values()[b * 3 + j] == reps.original.values()[src]);
      CHECK(r.values()[b * 3 + j] == reps.refined.values()[src]);
    }
  const std::vector<ItemId> with_pad{2, 0};
  CHECK_THROWS_AS(batch_rows(reps, with_pad), ContractError);
}

TEST_CASE("gce gradient reaches only gathered rows") {
  std::mt19937_64 rng(12);
  const auto a = random_graph(rng, 8, 10);
  auto v = t::random_tensor({9, 3}, rng);
  auto f = random_factors(rng, 9, 2, 0.3);
  GraphRepresentations reps;
  reps.original = t::random_tensor({9, 3}, rng);
  reps.refined = t::random_tensor({9, 3}, rng);
  const std::vector<ItemId> ids{2, 5, 2};
  const auto [o, r] = batch_rows(reps, ids);
  ad::backward(gce_loss(o, r, 0.2));
  for (std::size_t row = 0; row < 9; ++row) {
    const bool gathered = row == 2 || row == 5;
    double mag = 0.0;
    for (std::size_t j = 0; j < 3; ++j) mag += std::abs(reps.original.grad()[row * 3 + j]);
    CHECK((mag > 0.0) == gathered);
  }

  // Through propagation, the finite-difference derivative of a row the
  // batch never touches (and no gathered row reaches) is zero.
  const std::vector<ItemId> few{1};
  const auto check = t::gradcheck({{"V", v}, {"W_US", f.left}, {"W_V", f.right}}, [&] {
    const auto both = propagate_both(a, f, v, 2, LayerAveraging::Literal);
    const auto rows = batch_rows(both, ids);
    return gce_loss(rows.first, rows.second, 0.2);
  });
  CHECK_MESSAGE(check.worst < 1e-4, t::describe(check));
}

TEST_CASE("refined view lookups equal the dense refined graph") {
  std::mt19937_64 rng(13);
  const auto a = random_graph(rng, 12, 20);
  const auto f = random_factors(rng, 13, 3, 0.2);
  const RefinedGraphView view(a, f);
  const std::size_t n = 13, r = 3;
  const auto dense = t::flatten(t::to_dense(a));
  const auto au = t::dense_mm(dense, vals(f.left), n, n, r);
  const auto av = t::dense_mm(dense, vals(f.right), n, n, r);
  const auto perturb = t::dense_mm(au, t::transpose(av, n, r), n, r, n);
  for (ItemId i = 0; i < 13; ++i)
    for (ItemId j = 0; j < 13; ++j) {
      const auto k = static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j);
      CHECK(view.weight(i, j) == doctest::Approx(dense[k] + 0.2 * perturb[k]).epsilon(1e-12));
    }
  const std::vector<ItemId> seq{0, 3, 7, 3};
  const auto sub = extract_refined_subgraph(view, seq);
  CHECK(sub.at(0, 1) == 0.0);
  CHECK(sub.at(1, 2) == view.weight(3, 7));
  CHECK(sub.at(3, 1) == view.weight(3, 3));
}
