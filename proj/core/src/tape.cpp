#include "evmamba/tape.hpp"

#include <algorithm>

namespace evm {

namespace {
thread_local Tape* t_active = nullptr;
}

Tape* Tape::active() { return t_active; }

TapeScope::TapeScope(Tape& tape) : previous_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = previous_; }

NoGradScope::NoGradScope() : previous_(t_active) { t_active = nullptr; }
NoGradScope::~NoGradScope() { t_active = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_active) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

bool should_record(std::span<const Tensor> inputs) {
  if (!t_active) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor track(std::vector<Tensor> inputs, Tensor out, BackwardFn fn) {
  if (!should_record(std::span<const Tensor>(inputs))) return out;
  t_active->record(std::move(inputs), out, std::move(fn));
  return out;
}

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  if (consumed_) throw Error("cannot record on a consumed tape");
  output.node_->requires_grad = true;
  output.node_->is_leaf = false;
  entries_.push_back({std::move(inputs), output, std::move(fn)});
}

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error("backward called twice on the same tape");
  if (loss.numel() != 1) throw Error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  consumed_ = true;

  Gradients result;
  auto& grads = result.grads_;
  grads[loss.node()] = std::vector<double>(1, 1.0);
  result.shapes_[loss.node()] = loss.shape();

  std::vector<std::vector<double>*> slots;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = grads.find(it->output.node());
    if (found == grads.end()) continue;
    // Copy: inserting input slots may rehash the map.
    const std::vector<double> gout = found->second;
    slots.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const Tensor& in = it->inputs[i];
      if (!in.defined() || !in.requires_grad()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node());
      if (inserted) {
        slot->second.assign(in.numel(), 0.0);
        result.shapes_[in.node()] = in.shape();
      }
    }
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const Tensor& in = it->inputs[i];
      if (!in.defined() || !in.requires_grad()) continue;
      slots[i] = &grads[in.node()];
    }
    it->backward(gout, slots);
  }

  // Accumulate each leaf exactly once.
  for (auto& [node, g] : grads) {
    auto* n = const_cast<detail::TensorNode*>(node);
    if (!n->is_leaf || !n->requires_grad) continue;
    if (n->grad.size() != g.size()) n->grad.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
  }
  entries_.clear();
  return result;
}

Tensor Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.node());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), it->second);
}

bool Gradients::has(const Tensor& t) const { return grads_.count(t.node()) != 0; }

}  // namespace evm
