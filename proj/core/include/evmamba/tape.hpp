#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "evmamba/tensor.hpp"

namespace evm {

/// Gradient buffers handed to a backward rule, one slot per recorded input.
/// A null slot means that input does not need a gradient.
using GradSlots = std::span<std::vector<double>* const>;

/// Backward rule: given dL/d(output), accumulate (+=) into each input slot.
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSlots grad_in)>;

/// Result of a backward pass, keyed by tensor identity.
class Gradients {
 public:
  /// Gradient of the loss with respect to `t`; zeros when `t` was not reached.
  Tensor of(const Tensor& t) const;
  bool has(const Tensor& t) const;

 private:
  friend class Tape;
  std::unordered_map<const detail::TensorNode*, std::vector<double>> grads_;
  std::unordered_map<const detail::TensorNode*, Shape> shapes_;
};

/// Ordered record of differentiable ops. Entries are appended in execution
/// order, so the list is topologically sorted by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);

  /// Reverse sweep from a scalar loss. Leaf gradients are accumulated into
  /// each leaf's grad buffer. A tape can be consumed once.
  Gradients backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  /// Tape active on the calling thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target on this thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread for the scope lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// True when an op over `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Records `fn` if needed and returns `out` marked as tracked.
Tensor track(std::vector<Tensor> inputs, Tensor out, BackwardFn fn);

}  // namespace evm
