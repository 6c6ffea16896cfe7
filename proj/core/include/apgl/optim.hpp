#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apgl/tensor.hpp"

namespace apgl::ad {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Ordered collection of learnable leaves. Order is insertion order and is
// what the optimizer and the checkpoint format iterate over.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  const Tensor* find(const std::string& name) const;
  Tensor* find(const std::string& name);

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t total_values() const;

 private:
  std::vector<NamedParameter> params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by position in the
// ParameterSet the optimizer was built for.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamOptions options);

  // Applies one update from the gradients currently held by the parameters.
  // Parameters without a gradient are skipped. Throws NumericError naming the
  // parameter if any gradient is NaN/Inf; nothing is modified in that case.
  void step(ParameterSet& params);

  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::int64_t steps) { step_ = steps; }

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace apgl::ad
