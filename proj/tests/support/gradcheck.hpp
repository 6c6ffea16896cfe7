#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "apgl/tensor.hpp"

namespace apgl::testing {

inline constexpr double kFiniteStep = 1e-5;

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true value
// is zero from turning round-off into huge relative errors.
inline double relative_error(double analytic, double numeric,
                             double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradInput {
  std::string name;
  ad::Tensor tensor;
};

// Compares the gradient of `loss()` with respect to every entry of every
// input against central differences. `loss` must rebuild the graph from the
// current input values on each call.
inline GradReport gradcheck(const std::vector<GradInput>& inputs,
                            const std::function<ad::Tensor()>& loss,
                            double h = kFiniteStep, double floor = 1e-6) {
  for (auto in : inputs) in.tensor.zero_grad();
  ad::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    const auto g = in.tensor.grad();
    analytic.emplace_back(in.tensor.numel(), 0.0);
    std::copy(g.begin(), g.end(), analytic.back().begin());
  }
  GradReport report;
  ad::NoGradGuard no_grad;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    auto t = inputs[p].tensor;
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[p][i], numeric, floor);
      ++report.checked;
      if (err > report.worst || report.checked == 1) {
        report.worst = err;
        report.worst_name = inputs[p].name;
        report.worst_index = i;
        report.analytic = analytic[p][i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

inline std::string describe(const GradReport& r) {
  return r.worst_name + "[" + std::to_string(r.worst_index) +
         "] analytic=" + std::to_string(r.analytic) +
         " numeric=" + std::to_string(r.numeric) +
         " rel=" + std::to_string(r.worst);
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng,
                                bool requires_grad = true, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = normal(rng);
  return ad::Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace apgl::testing
