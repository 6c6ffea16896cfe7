#include "apgl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "apgl/autograd.hpp"
#include "apgl/error.hpp"

namespace apgl::ad {

namespace {

Node* raw(const Tensor& t) { return t.handle().get(); }

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (ta == Trans::No && tb == Trans::No) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ai[p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  } else if (ta == Trans::No && tb == Trans::Yes) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * n + j] += s;
      }
    }
  } else if (ta == Trans::Yes && tb == Trans::No) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double api = ap[i];
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
    }
  }
}

namespace {

Trans flip(Trans t) { return t == Trans::No ? Trans::Yes : Trans::No; }

// Gradients of C = op(A) op(B) for one (m, n, k) block.
void gemm_backward(Trans ta, Trans tb, std::size_t m, std::size_t n,
                   std::size_t k, const double* a, const double* b,
                   const double* g, double* ga, double* gb) {
  if (ga) {
    if (ta == Trans::No) {
      gemm(Trans::No, flip(tb), m, k, n, g, b, ga, true);
    } else {
      gemm(tb, Trans::Yes, k, m, n, b, g, ga, true);
    }
  }
  if (gb) {
    if (tb == Trans::No) {
      gemm(flip(ta), Trans::No, k, n, m, a, g, gb, true);
    } else {
      gemm(Trans::Yes, ta, n, k, m, g, a, gb, true);
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Trans ta, Trans tb) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = ta == Trans::No ? a.dim(0) : a.dim(1);
  const std::size_t k = ta == Trans::No ? a.dim(1) : a.dim(0);
  const std::size_t kb = tb == Trans::No ? b.dim(0) : b.dim(1);
  const std::size_t n = tb == Trans::No ? b.dim(1) : b.dim(0);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_string(a.shape()) + (ta == Trans::Yes ? "^T" : "") +
                     " x " + shape_string(b.shape()) +
                     (tb == Trans::Yes ? "^T" : ""));
  }
  std::vector<double> out(m * n);
  gemm(ta, tb, m, n, k, a.values().data(), b.values().data(), out.data(),
       false);
  Node* an = raw(a);
  Node* bn = raw(b);
  return make_result("matmul", {m, n}, std::move(out), {&a, &b},
                     [=](Node& self) {
                       gemm_backward(
                           ta, tb, m, n, k, an->value.data(), bn->value.data(),
                           self.grad.data(),
                           an->requires_grad ? an->grad_buffer().data()
                                             : nullptr,
                           bn->requires_grad ? bn->grad_buffer().data()
                                             : nullptr);
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b, Trans tb) {
  require_rank(a, 3, "bmm lhs");
  require_rank(b, 3, "bmm rhs");
  const std::size_t groups = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  const std::size_t kb = tb == Trans::No ? b.dim(1) : b.dim(2);
  const std::size_t n = tb == Trans::No ? b.dim(2) : b.dim(1);
  if (b.dim(0) != groups || k != kb) {
    throw ShapeError("bmm: incompatible shapes " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()) +
                     (tb == Trans::Yes ? "^T" : ""));
  }
  std::vector<double> out(groups * m * n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t g = 0; g < groups; ++g) {
    gemm(Trans::No, tb, m, n, k, av + g * m * k, bv + g * k * n,
         out.data() + g * m * n, false);
  }
  Node* an = raw(a);
  Node* bn = raw(b);
  return make_result(
      "bmm", {groups, m, n}, std::move(out), {&a, &b}, [=](Node& self) {
        double* ga = an->requires_grad ? an->grad_buffer().data() : nullptr;
        double* gb = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
        for (std::size_t g = 0; g < groups; ++g) {
          gemm_backward(Trans::No, tb, m, n, k, an->value.data() + g * m * k,
                        bn->value.data() + g * k * n,
                        self.grad.data() + g * m * n,
                        ga ? ga + g * m * k : nullptr,
                        gb ? gb + g * k * n : nullptr);
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Node* an = raw(a);
  Node* bn = raw(b);
  return make_result("add", a.shape(), std::move(out), {&a, &b},
                     [=](Node& self) {
                       for (Node* p : {an, bn}) {
                         if (!p->requires_grad) continue;
                         auto& g = p->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Node* an = raw(a);
  Node* bn = raw(b);
  return make_result("sub", a.shape(), std::move(out), {&a, &b},
                     [=](Node& self) {
                       if (an->requires_grad) {
                         auto& g = an->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                       if (bn->requires_grad) {
                         auto& g = bn->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] -= self.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Node* an = raw(a);
  Node* bn = raw(b);
  return make_result("mul", a.shape(), std::move(out), {&a, &b},
                     [=](Node& self) {
                       if (an->requires_grad) {
                         auto& g = an->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i] * bn->value[i];
                       }
                       if (bn->requires_grad) {
                         auto& g = bn->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i] * an->value[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  Node* an = raw(a);
  return make_result("scale", a.shape(), std::move(out), {&a},
                     [=](Node& self) {
                       auto& g = an->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[i] * factor;
                     });
}

Tensor add_tiled(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.numel();
  const std::size_t period = y.numel();
  if (period > n || n % period != 0) {
    throw ShapeError("add_tiled: " + shape_string(y.shape()) +
                     " does not tile " + shape_string(x.shape()));
  }
  std::vector<double> out(n);
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t base = 0; base < n; base += period) {
    for (std::size_t j = 0; j < period; ++j)
      out[base + j] = xv[base + j] + yv[j];
  }
  Node* xn = raw(x);
  Node* yn = raw(y);
  return make_result("add_tiled", x.shape(), std::move(out), {&x, &y},
                     [=](Node& self) {
                       if (xn->requires_grad) {
                         auto& g = xn->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           g[i] += self.grad[i];
                       }
                       if (yn->requires_grad) {
                         auto& g = yn->grad_buffer();
                         for (std::size_t base = 0; base < n; base += period)
                           for (std::size_t j = 0; j < period; ++j)
                             g[j] += self.grad[base + j];
                       }
                     });
}

Tensor add_head_bias(const Tensor& scores, const Tensor& bias,
                     std::size_t heads) {
  require_rank(scores, 3, "add_head_bias scores");
  require_rank(bias, 3, "add_head_bias bias");
  if (heads == 0 || scores.dim(0) != bias.dim(0) * heads ||
      scores.dim(1) != bias.dim(1) || scores.dim(2) != bias.dim(2)) {
    throw ShapeError("add_head_bias: " + shape_string(bias.shape()) +
                     " with " + std::to_string(heads) + " heads vs " +
                     shape_string(scores.shape()));
  }
  const std::size_t block = bias.dim(1) * bias.dim(2);
  const std::size_t groups = bias.dim(0);
  std::vector<double> out(scores.numel());
  auto sv = scores.values();
  auto bv = bias.values();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = (g * heads + h) * block;
      for (std::size_t j = 0; j < block; ++j)
        out[base + j] = sv[base + j] + bv[g * block + j];
    }
  Node* sn = raw(scores);
  Node* bn = raw(bias);
  return make_result(
      "add_head_bias", scores.shape(), std::move(out), {&scores, &bias},
      [=](Node& self) {
        if (sn->requires_grad) {
          auto& g = sn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t h = 0; h < heads; ++h) {
              const std::size_t base = (g * heads + h) * block;
              for (std::size_t j = 0; j < block; ++j)
                gb[g * block + j] += self.grad[base + j];
            }
        }
      });
}

Tensor softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (x.rank() < 1) throw ShapeError("softmax_rows: scalar input");
  if (!mask.empty() && mask.size() != x.numel()) {
    throw ShapeError("softmax_rows: mask has " + std::to_string(mask.size()) +
                     " entries for " + shape_string(x.shape()));
  }
  const std::size_t cols = last_dim(x);
  const std::size_t rows = x.numel() / cols;
  auto xv = x.values();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask.empty() && !mask[base + j]) continue;
      mx = std::max(mx, xv[base + j]);
      any = true;
    }
    if (!any) {
      throw DegenerateError("softmax_rows: row " + std::to_string(r) +
                            " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask.empty() && !mask[base + j]) continue;
      const double e = std::exp(xv[base + j] - mx);
      out[base + j] = e;
      total += e;
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < cols; ++j) out[base + j] *= inv;
  }
  Node* xn = raw(x);
  return make_result("softmax_rows", x.shape(), std::move(out), {&x},
                     [=](Node& self) {
                       auto& g = xn->grad_buffer();
                       const auto& y = self.value;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j)
                           dot += self.grad[base + j] * y[base + j];
                         for (std::size_t j = 0; j < cols; ++j)
                           g[base + j] += y[base + j] *
                                          (self.grad[base + j] - dot);
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
  }
  Node* xn = raw(x);
  return make_result("gelu", x.shape(), std::move(out), {&x}, [=](Node& self) {
    auto& g = xn->grad_buffer();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi *
                                std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xn->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor tanh(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  Node* xn = raw(x);
  return make_result("tanh", x.shape(), std::move(out), {&x}, [=](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor softplus(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  Node* xn = raw(x);
  return make_result("softplus", x.shape(), std::move(out), {&x},
                     [=](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = xn->value[i];
                         const double sig =
                             v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                    : std::exp(v) / (1.0 + std::exp(v));
                         g[i] += self.grad[i] * sig;
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_rank(x, 2, "layer_norm input");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw ShapeError("layer_norm: affine params " +
                     shape_string(gamma.shape()) + "/" +
                     shape_string(beta.shape()) + " for rows of width " +
                     std::to_string(cols));
  }
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xr[j] - mean) * is;
      xhat[r * cols + j] = h;
      out[r * cols + j] = h * gv[j] + bv[j];
    }
  }
  if (!records_history({&x, &gamma, &beta})) {
    return make_result("layer_norm", x.shape(), std::move(out), {}, nullptr);
  }
  Node* xn = raw(x);
  Node* gn = raw(gamma);
  Node* bn = raw(beta);
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double n = static_cast<double>(cols);
        if (gn->requires_grad) {
          auto& g = gn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j)
              g[j] += self.grad[r * cols + j] * xhat[r * cols + j];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j)
              g[j] += self.grad[r * cols + j];
        }
        if (xn->requires_grad) {
          auto& g = xn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0;
            double sum_dh = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              const double d = self.grad[r * cols + j] * gn->value[j];
              sum_d += d;
              sum_dh += d * xhat[r * cols + j];
            }
            for (std::size_t j = 0; j < cols; ++j) {
              const double d = self.grad[r * cols + j] * gn->value[j];
              g[r * cols + j] += inv_std[r] / n *
                                 (n * d - sum_d - xhat[r * cols + j] * sum_dh);
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout rate must lie in [0, 1), got " +
                        std::to_string(rate));
  }
  if (rate == 0.0) return x;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = unif(rng) < rate ? 0.0 : keep_scale;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  Node* xn = raw(x);
  return make_result("dropout", x.shape(), std::move(out), {&x},
                     [=, mask = std::move(mask)](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[i] * mask[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "gather_rows table");
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t rows = table.dim(0);
  const std::size_t cols = table.dim(1);
  std::vector<double> out(ids.size() * cols);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) +
                       " outside table " + shape_string(table.shape()));
    }
    std::copy_n(tv.data() + ids[i] * cols, cols, out.data() + i * cols);
  }
  if (!records_history({&table})) {
    return make_result("gather_rows", {ids.size(), cols}, std::move(out), {},
                       nullptr);
  }
  Node* tn = raw(table);
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result("gather_rows", {ids.size(), cols}, std::move(out),
                     {&table}, [=, saved = std::move(saved)](Node& self) {
                       auto& g = tn->grad_buffer();
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         double* dst = g.data() + saved[i] * cols;
                         const double* src = self.grad.data() + i * cols;
                         for (std::size_t j = 0; j < cols; ++j)
                           dst[j] += src[j];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " to " +
                     shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  Node* xn = raw(x);
  return make_result("reshape", std::move(shape), std::move(out), {&x},
                     [=](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[i];
                     });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq,
                   std::size_t heads) {
  require_rank(x, 2, "split_heads");
  const std::size_t d = x.dim(1);
  if (x.dim(0) != batch * seq || heads == 0 || d % heads != 0) {
    throw ShapeError("split_heads: " + shape_string(x.shape()) + " into " +
                     std::to_string(batch) + "x" + std::to_string(seq) +
                     " with " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  auto index = [=](std::size_t b, std::size_t h, std::size_t t) {
    return ((b * heads + h) * seq + t) * dh;
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(xv.data() + (b * seq + t) * d + h * dh, dh,
                    out.data() + index(b, h, t));
  Node* xn = raw(x);
  return make_result("split_heads", {batch * heads, seq, dh}, std::move(out),
                     {&x}, [=](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < seq; ++t)
                           for (std::size_t h = 0; h < heads; ++h) {
                             double* dst = g.data() + (b * seq + t) * d + h * dh;
                             const double* src = self.grad.data() + index(b, h, t);
                             for (std::size_t j = 0; j < dh; ++j)
                               dst[j] += src[j];
                           }
                     });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (heads == 0 || x.dim(0) != batch * heads) {
    throw ShapeError("merge_heads: " + shape_string(x.shape()) + " with " +
                     std::to_string(batch) + " sequences and " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t seq = x.dim(1);
  const std::size_t dh = x.dim(2);
  const std::size_t d = dh * heads;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  auto index = [=](std::size_t b, std::size_t h, std::size_t t) {
    return ((b * heads + h) * seq + t) * dh;
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(xv.data() + index(b, h, t), dh,
                    out.data() + (b * seq + t) * d + h * dh);
  Node* xn = raw(x);
  return make_result("merge_heads", {batch * seq, d}, std::move(out), {&x},
                     [=](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < seq; ++t)
                           for (std::size_t h = 0; h < heads; ++h) {
                             double* dst = g.data() + index(b, h, t);
                             const double* src =
                                 self.grad.data() + (b * seq + t) * d + h * dh;
                             for (std::size_t j = 0; j < dh; ++j)
                               dst[j] += src[j];
                           }
                     });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "row_dot lhs");
  require_same_shape(a, b, "row_dot");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      s += av[r * cols + j] * bv[r * cols + j];
    out[r] = s;
  }
  Node* an = raw(a);
  Node* bn = raw(b);
  return make_result("row_dot", {rows}, std::move(out), {&a, &b},
                     [=](Node& self) {
                       if (an->requires_grad) {
                         auto& g = an->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < cols; ++j)
                             g[r * cols + j] +=
                                 self.grad[r] * bn->value[r * cols + j];
                       }
                       if (bn->requires_grad) {
                         auto& g = bn->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < cols; ++j)
                             g[r * cols + j] +=
                                 self.grad[r] * an->value[r * cols + j];
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(x.numel());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      s += xv[r * cols + j] * xv[r * cols + j];
    const double nrm = std::sqrt(s);
    if (!std::isfinite(nrm)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) +
                         " is not finite");
    }
    if (!(nrm > 0.0)) {
      throw DegenerateError("l2_normalize_rows: row " + std::to_string(r) +
                            " has zero norm");
    }
    norms[r] = nrm;
    for (std::size_t j = 0; j < cols; ++j)
      out[r * cols + j] = xv[r * cols + j] / nrm;
  }
  Node* xn = raw(x);
  return make_result(
      "l2_normalize_rows", x.shape(), std::move(out), {&x},
      [=, norms = std::move(norms)](Node& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j)
            dot += self.grad[r * cols + j] * self.value[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j)
            g[r * cols + j] +=
                (self.grad[r * cols + j] - self.value[r * cols + j] * dot) /
                norms[r];
        }
      });
}

Tensor logsumexp_rows(const Tensor& x) {
  require_rank(x, 2, "logsumexp_rows");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(xr[j] - mx);
    out[r] = mx + std::log(s);
  }
  Node* xn = raw(x);
  return make_result("logsumexp_rows", {rows}, std::move(out), {&x},
                     [=](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < cols; ++j)
                           g[r * cols + j] +=
                               self.grad[r] *
                               std::exp(xn->value[r * cols + j] - self.value[r]);
                     });
}

Tensor diagonal(const Tensor& x) {
  require_rank(x, 2, "diagonal");
  if (x.dim(0) != x.dim(1)) {
    throw ShapeError("diagonal: non-square " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i * n + i];
  Node* xn = raw(x);
  return make_result("diagonal", {n}, std::move(out), {&x}, [=](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i * n + i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Node* xn = raw(x);
  return make_result("sum", {1}, {s}, {&x}, [=](Node& self) {
    auto& g = xn->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) +
                     " weights for " + shape_string(x.shape()));
  }
  double s = 0.0;
  auto xv = x.values();
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * xv[i];
  Node* xn = raw(x);
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("weighted_sum", {1}, {s}, {&x},
                     [=, w = std::move(w)](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[0] * w[i];
                     });
}

Tensor scale_blocks(const Tensor& coeffs, std::span<const double> blocks,
                    Shape block_shape) {
  const std::size_t groups = coeffs.numel();
  const std::size_t block = shape_numel(block_shape);
  if (blocks.size() != groups * block) {
    throw ShapeError("scale_blocks: " + std::to_string(blocks.size()) +
                     " values for " + std::to_string(groups) + " blocks of " +
                     shape_string(block_shape));
  }
  auto cv = coeffs.values();
  std::vector<double> out(blocks.size());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < block; ++j)
      out[g * block + j] = cv[g] * blocks[g * block + j];
  Shape shape{groups};
  shape.insert(shape.end(), block_shape.begin(), block_shape.end());
  if (!records_history({&coeffs})) {
    return make_result("scale_blocks", std::move(shape), std::move(out), {},
                       nullptr);
  }
  Node* cn = raw(coeffs);
  std::vector<double> saved(blocks.begin(), blocks.end());
  return make_result("scale_blocks", std::move(shape), std::move(out),
                     {&coeffs}, [=, saved = std::move(saved)](Node& self) {
                       auto& g = cn->grad_buffer();
                       for (std::size_t k = 0; k < groups; ++k) {
                         double s = 0.0;
                         for (std::size_t j = 0; j < block; ++j)
                           s += self.grad[k * block + j] * saved[k * block + j];
                         g[k] += s;
                       }
                     });
}

}  // namespace apgl::ad
