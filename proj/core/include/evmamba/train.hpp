#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "evmamba/data.hpp"
#include "evmamba/model.hpp"

namespace evm {

/// Linear warmup to base_lr followed by cosine decay to zero at total_steps.
class CosineSchedule {
 public:
  CosineSchedule(double base_lr, std::size_t warmup_steps, std::size_t total_steps);
  /// Rate for optimizer step `step` (0-based); at(total_steps) == 0.
  double at(std::size_t step) const;

 private:
  double base_lr_;
  std::size_t warmup_;
  std::size_t total_;
};

/// Adaptive moments with decoupled weight decay. Parameters are kept
/// representable in 32-bit floats after each step, matching the checkpoint
/// storage format.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
  };

  AdamW(std::vector<std::pair<std::string, Tensor>> params, Options opt);
  void step(double lr);
  void zero_grad();

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
    bool decay;
  };
  std::vector<Slot> slots_;
  Options opt_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::size_t warmup_epochs = 0;
  std::uint64_t seed = 0;
  double weight_decay = 0.05;
  bool flip = false;
  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch's batches
  double acc = 0.0;   // top-1 accuracy on the training split after the epoch
  double lr = 0.0;    // rate used by the epoch's last step
};

struct EvalReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

EvalReport evaluate(const Model& model, const Dataset& data, std::size_t batch = 32);

std::string metrics_header();
std::string metrics_line(const EpochMetrics& m);

/// Cross-entropy training. When `csv` is given the header and one line per
/// epoch are written and flushed as the run progresses. Throws on a
/// non-finite loss.
std::vector<EpochMetrics> train(Model& model, const Dataset& data, const TrainConfig& cfg, std::ostream* csv = nullptr,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace evm
