#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "pflab/tensor.hpp"

namespace pflab {

// Leaf storage -> gradient tensor, as produced by one backward pass.
using GradMap = std::unordered_map<const TensorStorage*, Tensor>;

// Reverse-mode tape. Operations append nodes in topological order; backward
// sweeps once from the loss node down.
//
// Backward rules are themselves expressed through tape operations, so the
// gradients returned by backward() are differentiable: a scalar built from
// them (e.g. a dot product of parameter gradients) can be backpropagated
// again on the same tape. That second pass is what gradient-alignment
// crafting differentiates through.
class Tape {
 public:
  // Per-parent gradient contributions. `need[i]` tells the rule whether
  // parent i wants a gradient; skipped slots stay default-constructed.
  using Vjp = std::function<std::vector<Tensor>(
      Tape&, const Tensor& upstream, const std::vector<bool>& need)>;

  // Registers a leaf (parameter, input, constant). Idempotent per storage.
  int watch(const Tensor& leaf);

  // Records an operation result. `requires` is inherited from parents.
  int emit(Tensor out, std::vector<int> parents, Vjp vjp);

  int node_of(const Tensor& t) const;  // -1 when not on this tape
  bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_g; }
  const Tensor& node_output(int id) const { return nodes_[static_cast<size_t>(id)].out; }
  size_t node_count() const { return nodes_.size(); }

  // Backpropagates from a scalar loss recorded on this tape. Accumulates
  // into the .grad of every requires_grad leaf reachable from the loss and
  // returns the per-leaf gradient tensors (still attached to the tape, so
  // they can participate in further ops). Visits each node at most once.
  GradMap backward(const Tensor& loss);

 private:
  struct Node {
    Tensor out;
    std::vector<int> parents;
    Vjp vjp;
    bool requires_g = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const TensorStorage*, int> by_storage_;
};

}  // namespace pflab
