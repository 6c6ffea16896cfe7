#include "apgl/optim.hpp"

#include <cmath>

#include "apgl/error.hpp"

namespace apgl::ad {

void ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name)) throw ContractError("duplicate parameter name: " + name);
  params_.push_back({std::move(name), std::move(tensor)});
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

Tensor* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Adam::Adam(const ParameterSet& params, AdamOptions options)
    : options_(options) {
  if (!(options.lr > 0) || !(options.eps > 0) || options.beta1 < 0 ||
      options.beta1 >= 1 || options.beta2 < 0 || options.beta2 >= 1) {
    throw ContractError("invalid Adam hyper-parameters");
  }
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(ParameterSet& params) {
  if (params.size() != m_.size()) {
    throw ContractError("Adam built for " + std::to_string(m_.size()) +
                        " parameters, stepped with " +
                        std::to_string(params.size()));
  }
  std::size_t idx = 0;
  for (const auto& p : params) {
    if (p.tensor.numel() != m_[idx].size()) {
      throw ShapeError("Adam: parameter " + p.name + " changed size");
    }
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter " + p.name);
      }
    }
    ++idx;
  }

  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  idx = 0;
  for (auto& p : params) {
    auto grad = p.tensor.grad();
    auto& m = m_[idx];
    auto& v = v_[idx];
    ++idx;
    if (grad.empty()) continue;
    auto w = p.tensor.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace apgl::ad
