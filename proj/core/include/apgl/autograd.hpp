#pragma once

// Building blocks for defining differentiable operations outside ops.cpp
// (sparse propagation lives in the graph module, for example).

#include <functional>
#include <initializer_list>
#include <memory>
#include <string_view>
#include <vector>

#include "apgl/tensor.hpp"

namespace apgl::ad {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
  bool wants_grad() const { return requires_grad; }
};

// Wraps a freshly computed value as an operation result. History is only
// recorded when grad mode is on and at least one input requires grad; in
// that case `backward_fn` is attached and the inputs are kept alive.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace apgl::ad

namespace apgl::ad {

// True when an operation over `inputs` would record history right now.
bool records_history(std::initializer_list<const Tensor*> inputs);

}  // namespace apgl::ad
