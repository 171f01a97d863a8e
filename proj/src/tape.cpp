#include "pflab/tape.hpp"

#include "pflab/common.hpp"
#include "pflab/ops.hpp"

namespace pflab {

int Tape::watch(const Tensor& leaf) {
  check(leaf.defined(), "Tape: undefined tensor");
  auto it = by_storage_.find(leaf.storage());
  if (it != by_storage_.end()) return it->second;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{leaf, {}, nullptr, leaf.requires_grad()});
  by_storage_.emplace(leaf.storage(), id);
  return id;
}

int Tape::emit(Tensor out, std::vector<int> parents, Vjp vjp) {
  bool req = false;
  for (int p : parents) req = req || nodes_[static_cast<size_t>(p)].requires_g;
  int id = static_cast<int>(nodes_.size());
  by_storage_.emplace(out.storage(), id);
  nodes_.push_back(Node{std::move(out), std::move(parents), std::move(vjp), req});
  return id;
}

int Tape::node_of(const Tensor& t) const {
  auto it = by_storage_.find(t.storage());
  return it == by_storage_.end() ? -1 : it->second;
}

GradMap Tape::backward(const Tensor& loss) {
  check(loss.defined() && loss.size() == 1 && loss.rank() == 0,
        "Tape::backward: loss must be a scalar");
  int loss_id = node_of(loss);
  check(loss_id >= 0, "Tape::backward: loss was not produced on this tape");

  // Upstream gradients per node id, over the snapshot [0, loss_id]. Nodes
  // emitted by backward rules get larger ids and are not revisited here.
  std::vector<Tensor> grads(static_cast<size_t>(loss_id) + 1);
  grads[static_cast<size_t>(loss_id)] = Tensor::scalar(1.0);
  watch(grads[static_cast<size_t>(loss_id)]);

  for (int id = loss_id; id >= 0; --id) {
    Tensor upstream = grads[static_cast<size_t>(id)];
    if (!upstream.defined()) continue;
    // Copy out what we need: emitting nodes may reallocate nodes_.
    Vjp vjp = nodes_[static_cast<size_t>(id)].vjp;
    std::vector<int> parents = nodes_[static_cast<size_t>(id)].parents;
    if (!vjp) continue;  // leaf or constant

    std::vector<bool> need(parents.size());
    bool any = false;
    for (size_t j = 0; j < parents.size(); ++j) {
      need[j] = nodes_[static_cast<size_t>(parents[j])].requires_g;
      any = any || need[j];
    }
    if (!any) continue;

    std::vector<Tensor> contrib = vjp(*this, upstream, need);
    check(contrib.size() == parents.size(),
          "Tape::backward: rule returned wrong arity");
    for (size_t j = 0; j < parents.size(); ++j) {
      if (!contrib[j].defined()) continue;
      size_t p = static_cast<size_t>(parents[j]);
      grads[p] = grads[p].defined() ? ops::add(*this, grads[p], contrib[j])
                                    : contrib[j];
    }
  }

  GradMap out;
  for (int id = 0; id <= loss_id; ++id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.vjp || !n.requires_g) continue;  // only requires_grad leaves
    Tensor& g = grads[static_cast<size_t>(id)];
    if (!g.defined()) continue;
    n.out.accumulate_grad(g.data());
    out.emplace(n.out.storage(), g);
  }
  return out;
}

}  // namespace pflab
