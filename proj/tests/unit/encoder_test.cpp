#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "apgl/encoder.hpp"
#include "apgl/error.hpp"
#include "apgl/ops.hpp"
#include "gradcheck.hpp"

using namespace apgl;
using namespace apgl::encoder;
using apgl::ad::Tensor;
namespace t = apgl::testing;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& x) {
  Mat m(x.dim(0), std::vector<double>(x.dim(1)));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = x.values()[i * x.dim(1) + j];
  return m;
}

std::vector<double> vec(const Tensor& x) { return {x.values().begin(), x.values().end()}; }

std::vector<double> affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = b.values()[j];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w.values()[i * out + j];
    y[j] = s;
  }
  return y;
}

std::vector<double> norm(const std::vector<double>& x, const Tensor& g, const Tensor& b) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    y[j] = (x[j] - mean) / std::sqrt(var + 1e-12) * g.values()[j] + b.values()[j];
  return y;
}

// Straight-line transformer forward for one sequence: explicit loops over
// positions, heads and keys. pe is [N x N] or empty.
Mat reference_encode(const EncoderParams& p, const std::vector<ItemId>& seq, const Mat& pe) {
  const std::size_t n = p.max_len(), d = p.dim(), heads = p.heads, dh = d / heads;
  const auto emb = to_mat(p.item_embeddings);
  const auto pos = to_mat(p.positions);
  Mat h(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) h[i][j] = emb[static_cast<std::size_t>(seq[i])][j] + pos[i][j];
  for (const auto& L : p.layers) {
    Mat q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = norm(h[i], L.attn_norm_gamma, L.attn_norm_beta);
      q[i] = affine(a, L.query_w, L.query_b);
      k[i] = affine(a, L.key_w, L.key_b);
      v[i] = affine(a, L.value_w, L.value_b);
    }
    Mat ctx(n, std::vector<double>(d, 0.0));
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> logit(n, -INFINITY);
        for (std::size_t j = 0; j <= i; ++j) {
          if (seq[j] == 0 && j != i) continue;
          double s = 0.0;
          for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) s += q[i][c] * k[j][c];
          logit[j] = s / std::sqrt(static_cast<double>(dh)) + (pe.empty() ? 0.0 : pe[i][j]);
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double z = 0.0;
        for (double l : logit) z += std::exp(l - mx);
        for (std::size_t j = 0; j < n; ++j) {
          const double w = std::exp(logit[j] - mx) / z;
          for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) ctx[i][c] += w * v[j][c];
        }
      }
    for (std::size_t i = 0; i < n; ++i) {
      const auto o = affine(ctx[i], L.out_w, L.out_b);
      for (std::size_t j = 0; j < d; ++j) h[i][j] += o[j];
      auto f = affine(norm(h[i], L.ffn_norm_gamma, L.ffn_norm_beta), L.ffn_in_w, L.ffn_in_b);
      for (auto& x : f) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
      const auto o2 = affine(f, L.ffn_out_w, L.ffn_out_b);
      for (std::size_t j = 0; j < d; ++j) h[i][j] += o2[j];
    }
  }
  for (auto& row : h) row = norm(row, p.final_norm_gamma, p.final_norm_beta);
  return h;
}

EncoderParams make_encoder(std::size_t items, std::size_t n, std::size_t d, std::size_t layers,
                           std::size_t heads, std::uint64_t seed, double scale = 25.0) {
  Rng rng(seed);
  auto p = init_encoder({items, n, d, layers, heads, 0.0}, rng);
  // Larger weights than the training init so attention is far from uniform.
  ad::ParameterSet set;
  register_parameters(p, set);
  for (auto& [name, tensor] : set)
    if (name.find("norm") == std::string::npos)
      for (auto& x : tensor.mutable_values()) x *= scale;
  return p;
}

double max_diff(const Tensor& got, const Mat& want, std::size_t offset_rows = 0) {
  double w = 0.0;
  const std::size_t d = got.dim(1);
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      w = std::max(w, std::abs(got.values()[(offset_rows + i) * d + j] - want[i][j]));
  return w;
}

}  // namespace

TEST_CASE("mask: causal over real keys, padding queries see only themselves") {
  const std::vector<ItemId> ids{0, 0, 5, 3};
  const auto m = attention_mask(ids, 1, 4);
  const std::vector<std::uint8_t> expect{1, 0, 0, 0,
                                         0, 1, 0, 0,
                                         0, 0, 1, 0,
                                         0, 0, 1, 1};
  CHECK(m == expect);
}

TEST_CASE("one-layer one-head d=2 forward matches a hand-scripted pass") {
  auto p = make_encoder(4, 3, 2, 1, 1, 7, 30.0);
  const std::vector<ItemId> seq{0, 2, 4};
  const auto out = encode(p, seq, 1, nullptr, nullptr);
  CHECK(max_diff(out, reference_encode(p, seq, {})) < 1e-10);
}

TEST_CASE("multi-layer multi-head forward with relative encoding matches the reference") {
  std::mt19937_64 rng(8);
  auto p = make_encoder(9, 5, 4, 2, 2, 8);
  const std::vector<ItemId> ids{0, 0, 3, 7, 3,  1, 2, 9, 4, 5};
  const auto pe = t::random_tensor({2, 5, 5}, rng, false, 2.0);
  const auto out = encode(p, ids, 2, &pe, nullptr);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::vector<ItemId> seq(ids.begin() + static_cast<std::ptrdiff_t>(b * 5),
                                  ids.begin() + static_cast<std::ptrdiff_t>(b * 5 + 5));
    Mat m(5, std::vector<double>(5));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) m[i][j] = pe.values()[b * 25 + i * 5 + j];
    CHECK(max_diff(out, reference_encode(p, seq, m), b * 5) < 1e-9);
  }
}

TEST_CASE("zero relative encoding is bitwise identical to none") {
  auto p = make_encoder(9, 6, 4, 2, 2, 9);
  Rng rng(10);
  auto pge = init_pge(3, 4, rng, /*zero_projection=*/true);
  const std::vector<ItemId> ids{0, 1, 2, 3, 4, 5,  0, 0, 0, 0, 8, 9};
  const std::vector<UserId> users{0, 2};
  std::vector<graph::SubgraphMatrix> subs(2, graph::SubgraphMatrix{6, std::vector<double>(36, 1.7)});
  const auto enc = pge_encoding(pge, users, subs);
  CHECK(std::all_of(enc.values().begin(), enc.values().end(), [](double v) { return v == 0.0; }));
  CHECK(vec(encode(p, ids, 2, &enc, nullptr)) == vec(encode(p, ids, 2, nullptr, nullptr)));
}

TEST_CASE("a lone real item attends to itself with weight one") {
  auto p = make_encoder(5, 4, 4, 2, 2, 11);
  const std::vector<ItemId> ids{0, 0, 0, 3};
  EncodeTrace trace;
  encode(p, ids, 1, nullptr, nullptr, &trace);
  for (const auto& probs : trace.attention)
    for (std::size_t h = 0; h < 2; ++h) CHECK(probs.values()[h * 16 + 3 * 4 + 3] == 1.0);
}

TEST_CASE("attention rows are distributions over visible keys") {
  std::mt19937_64 rng(12);
  auto p = make_encoder(20, 8, 4, 2, 2, 12);
  std::uniform_int_distribution<ItemId> item(1, 20);
  std::uniform_int_distribution<std::size_t> pad(0, 7);
  std::vector<ItemId> ids(4 * 8);
  for (std::size_t b = 0; b < 4; ++b) {
    const auto np = pad(rng);
    for (std::size_t i = 0; i < 8; ++i) ids[b * 8 + i] = i < np ? 0 : item(rng);
  }
  const auto pe = t::random_tensor({4, 8, 8}, rng, false);
  EncodeTrace trace;
  const auto out = encode(p, ids, 4, &pe, nullptr, &trace);
  CHECK(std::all_of(out.values().begin(), out.values().end(), [](double v) { return std::isfinite(v); }));
  const auto mask = attention_mask(ids, 4, 8);
  for (const auto& probs : trace.attention)
    for (std::size_t bh = 0; bh < 8; ++bh)
      for (std::size_t q = 0; q < 8; ++q) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 8; ++k) {
          const double w = probs.values()[(bh * 8 + q) * 8 + k];
          CHECK(w >= 0.0);
          if (!mask[((bh / 2) * 8 + q) * 8 + k]) CHECK(w == 0.0);
          sum += w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
}

TEST_CASE("changing a later item leaves earlier outputs unchanged") {
  auto p = make_encoder(10, 6, 4, 2, 2, 13);
  std::vector<ItemId> ids{0, 1, 2, 3, 4, 5};
  const auto before = encode(p, ids, 1, nullptr, nullptr);
  ids[4] = 9;
  const auto after = encode(p, ids, 1, nullptr, nullptr);
  for (std::size_t i = 0; i < 4 * 4; ++i) CHECK(before.values()[i] == after.values()[i]);
  bool changed = false;
  for (std::size_t i = 16; i < 24; ++i) changed |= before.values()[i] != after.values()[i];
  CHECK(changed);
}

TEST_CASE("relative encoding scales subgraphs per user") {
  Rng rng(14);
  auto pge = init_pge(4, 3, rng);
  std::mt19937_64 r(15);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<graph::SubgraphMatrix> subs(3, graph::SubgraphMatrix{4, std::vector<double>(16)});
  for (auto& s : subs)
    for (auto& w : s.weights) w = u(r);
  const std::vector<UserId> users{3, 0, 3};
  const auto c = pge_weights(pge, users);
  const auto enc = pge_encoding(pge, users, subs);
  CHECK(enc.shape() == ad::Shape{3, 4, 4});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < 16; ++k) CHECK(enc.values()[b * 16 + k] == c.values()[b] * subs[b].weights[k]);
  CHECK(c.values()[0] == c.values()[2]);

  // Scalar formula tanh(s W1 + b1) W2 + b2 for one user.
  const auto s = to_mat(pge.user_embeddings)[3];
  const auto hidden = affine(s, pge.hidden_w, pge.hidden_b);
  std::vector<double> th(hidden.size());
  for (std::size_t i = 0; i < th.size(); ++i) th[i] = std::tanh(hidden[i]);
  CHECK(c.values()[0] == doctest::Approx(affine(th, pge.out_w, pge.out_b)[0]).epsilon(1e-13));

  std::vector<graph::SubgraphMatrix> zero(3, graph::SubgraphMatrix{4, std::vector<double>(16, 0.0)});
  const auto z = pge_encoding(pge, users, zero);
  CHECK(std::all_of(z.values().begin(), z.values().end(), [](double v) { return v == 0.0; }));
  CHECK_THROWS_AS(pge_encoding(pge, std::vector<UserId>{0}, subs), ShapeError);
}

TEST_CASE("gradients flow through the encoder into user vectors") {
  auto p = make_encoder(6, 4, 4, 1, 2, 16, 10.0);
  Rng rng(17);
  auto pge = init_pge(2, 4, rng);
  for (auto& x : pge.user_embeddings.mutable_values()) x *= 20;
  for (auto& x : pge.out_w.mutable_values()) x *= 50;
  const std::vector<ItemId> ids{0, 2, 5, 1, 3, 4, 6, 2};
  const std::vector<UserId> users{1, 0};
  std::mt19937_64 r(18);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<graph::SubgraphMatrix> subs(2, graph::SubgraphMatrix{4, std::vector<double>(16)});
  for (auto& s : subs)
    for (auto& w : s.weights) w = u(r);
  const auto w = t::random_tensor({8, 4}, r, false);
  auto loss = [&] {
    const auto enc = pge_encoding(pge, users, subs);
    return ad::weighted_sum(encode(p, ids, 2, &enc, nullptr), w.values());
  };
  const auto report = t::gradcheck({{"s_u", pge.user_embeddings},
                                    {"pge.hidden.w", pge.hidden_w},
                                    {"query.w", p.layers[0].query_w},
                                    {"positions", p.positions}},
                                   loss);
  CHECK_MESSAGE(report.worst < 1e-5, t::describe(report));
}

TEST_CASE("user representation takes the last real position") {
  const auto hidden = Tensor::from_values({6, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  const std::vector<ItemId> ids{0, 4, 7, 3, 0, 0};
  const auto r = user_repr(hidden, ids, 2);
  CHECK(vec(r) == std::vector<double>{4, 5, 6, 7});
  CHECK(last_real_positions(ids, 2, 3) == std::vector<std::size_t>{2, 0});

  std::mt19937_64 rng(19);
  std::uniform_int_distribution<ItemId> item(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ItemId> seq(7);
    for (auto& x : seq) x = item(rng);
    seq[0] = 1;
    std::size_t last = 0;
    for (std::size_t i = 0; i < 7; ++i)
      if (seq[i] != 0) last = i;
    CHECK(last_real_positions(seq, 1, 7)[0] == last);
  }
}

TEST_CASE("encoder rejects all-padding sequences and bad shapes") {
  auto p = make_encoder(5, 4, 4, 1, 2, 20);
  const std::vector<ItemId> pad(4, 0);
  CHECK_THROWS_AS(encode(p, pad, 1, nullptr, nullptr), DegenerateError);
  const std::vector<ItemId> short_ids{1, 2, 3};
  CHECK_THROWS_AS(encode(p, short_ids, 1, nullptr, nullptr), ShapeError);
  const std::vector<ItemId> ok{0, 1, 2, 3};
  const auto wrong_pe = Tensor::zeros({1, 3, 3});
  CHECK_THROWS_AS(encode(p, ok, 1, &wrong_pe, nullptr), ShapeError);
  Rng rng(1);
  CHECK_THROWS_AS(init_encoder({5, 4, 5, 1, 2, 0.0}, rng), ContractError);
}

TEST_CASE("initialization: padding row zero, truncated weights, same seed same values") {
  Rng a(21), b(21);
  const auto p = init_encoder({30, 10, 8, 2, 2, 0.2}, a);
  const auto q = init_encoder({30, 10, 8, 2, 2, 0.2}, b);
  for (std::size_t j = 0; j < 8; ++j) CHECK(p.item_embeddings.values()[j] == 0.0);
  for (double v : p.item_embeddings.values()) CHECK(std::abs(v) <= 0.04);
  CHECK(vec(p.layers[1].ffn_out_w) == vec(q.layers[1].ffn_out_w));
}

TEST_CASE("dropout only acts when a generator is supplied") {
  Rng r(22);
  auto p = init_encoder({10, 5, 4, 1, 2, 0.5}, r);
  const std::vector<ItemId> ids{0, 1, 2, 3, 4};
  const auto off1 = encode(p, ids, 1, nullptr, nullptr);
  const auto off2 = encode(p, ids, 1, nullptr, nullptr);
  CHECK(vec(off1) == vec(off2));
  Rng d1(5), d2(5);
  const auto on1 = encode(p, ids, 1, nullptr, &d1);
  const auto on2 = encode(p, ids, 1, nullptr, &d2);
  CHECK(vec(on1) == vec(on2));
  CHECK(vec(on1) != vec(off1));
}
