#include "evmamba/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "evmamba/tape.hpp"

namespace evm {

CosineSchedule::CosineSchedule(double base_lr, std::size_t warmup_steps, std::size_t total_steps)
    : base_lr_(base_lr), warmup_(warmup_steps), total_(total_steps) {
  if (total_steps == 0) throw Error("schedule: total steps must be positive");
  if (warmup_steps > total_steps) throw Error("schedule: warmup longer than the schedule");
}

double CosineSchedule::at(std::size_t step) const {
  if (step >= total_) return 0.0;
  if (step < warmup_) return base_lr_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
  const double progress = static_cast<double>(step - warmup_) / static_cast<double>(total_ - warmup_);
  return base_lr_ * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, Options opt) : opt_(opt) {
  for (auto& [name, t] : params) {
    const bool is_decay_log = name.size() >= 5 && name.compare(name.size() - 5, 5, "a_log") == 0;
    slots_.push_back({t, std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0),
                      t.rank() >= 2 && !is_decay_log});
    slots_.back().param.set_requires_grad(true);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    const Tensor g = s.param.grad();
    auto p = s.param.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * gi;
      s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * gi * gi;
      double v = p[i];
      if (s.decay) v -= lr * opt_.weight_decay * v;
      v -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + opt_.eps);
      p[i] = static_cast<float>(v);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("train: epochs must be positive");
  if (batch == 0) throw Error("train: batch size must be positive");
  if (warmup_epochs > epochs) throw Error("train: warmup longer than training");
  if (!(lr > 0.0)) throw Error("train: learning rate must be positive");
}

namespace {

Tensor batch_images(const Dataset& data, std::span<const std::size_t> idx, bool flip, Rng* rng) {
  const std::size_t per = data.images.numel() / data.size();
  Shape shape = data.images.shape();
  shape[0] = idx.size();
  std::vector<double> out;
  out.reserve(per * idx.size());
  for (auto i : idx) {
    auto src = data.images.data().subspan(i * per, per);
    if (flip && rng && rng->below(2) == 1) {
      const Tensor img(Shape(shape.begin() + 1, shape.end()), std::vector<double>(src.begin(), src.end()));
      const Tensor f = flip_horizontal(img);
      out.insert(out.end(), f.data().begin(), f.data().end());
    } else {
      out.insert(out.end(), src.begin(), src.end());
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

EvalReport evaluate(const Model& model, const Dataset& data, std::size_t batch) {
  data.validate();
  if (data.num_classes != model.spec().num_classes) {
    throw Error("evaluate: dataset has " + std::to_string(data.num_classes) + " classes, model predicts " +
                std::to_string(model.spec().num_classes));
  }
  NoGradScope no_grad;
  EvalReport rep;
  rep.confusion.assign(data.num_classes, std::vector<std::size_t>(data.num_classes, 0));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + batch, data.size()); ++i) idx.push_back(i);
    const Tensor logits = model.forward(batch_images(data, idx, false, nullptr));
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t pred = argmax_row(logits.data().subspan(r * k, k));
      const auto truth = static_cast<std::size_t>(data.labels[idx[r]]);
      rep.confusion[truth][pred] += 1;
      rep.correct += pred == truth;
      rep.total += 1;
    }
  }
  return rep;
}

std::string metrics_header() { return "epoch,loss,acc,lr"; }

std::string metrics_line(const EpochMetrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g", m.epoch, m.loss, m.acc, m.lr);
  return buf;
}

std::vector<EpochMetrics> train(Model& model, const Dataset& data, const TrainConfig& cfg, std::ostream* csv,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  data.validate();
  if (data.num_classes != model.spec().num_classes) {
    throw Error("train: dataset has " + std::to_string(data.num_classes) + " classes, model predicts " +
                std::to_string(model.spec().num_classes));
  }
  const std::size_t steps_per_epoch = (data.size() + cfg.batch - 1) / cfg.batch;
  const CosineSchedule schedule(cfg.lr, cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch);
  AdamW opt(model.named_parameters(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  if (csv) *csv << metrics_header() << '\n' << std::flush;
  std::vector<EpochMetrics> log;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch, hi = std::min(lo + cfg.batch, order.size());
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);
      const Tensor x = batch_images(data, idx, cfg.flip, &rng);

      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = cross_entropy(model.forward(x), labels);
      }
      if (!std::isfinite(loss.item())) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                    " (lr " + std::to_string(schedule.at(step)) + ")");
      }
      opt.zero_grad();
      tape.backward(loss);
      lr = schedule.at(step);
      opt.step(lr);
      opt.zero_grad();
      ++step;
      loss_sum += loss.item();
    }
    EpochMetrics m{epoch, loss_sum / static_cast<double>(steps_per_epoch), evaluate(model, data).accuracy(), lr};
    log.push_back(m);
    if (csv) *csv << metrics_line(m) << '\n' << std::flush;
    if (on_epoch) on_epoch(m);
  }
  return log;
}

}  // namespace evm
