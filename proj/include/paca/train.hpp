// SPDX-License-Identifier: Apache-2.0
#pragma once

// Supervised training: cross-entropy, AdamW, warmup + cosine schedule,
// global-norm clipping and a deterministic loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "paca/data.hpp"
#include "paca/model.hpp"
#include "paca/tensor.hpp"

namespace paca {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

// Argmax per row; ties go to the lowest class index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Decoupled weight decay; rank-1 tensors (biases, LayerNorm gamma/beta) are
// never decayed.
template <typename T>
class AdamW {
 public:
  AdamW(const ParamRegistry<T>& params, AdamWConfig cfg);

  // One update with learning rate `lr` from the gradients currently held by
  // the parameters. Missing gradients count as zero.
  void step(double lr);
  std::size_t steps() const { return t_; }
  const std::vector<double>& first_moment(const std::string& name) const { return state_.at(name).m; }
  const std::vector<double>& second_moment(const std::string& name) const { return state_.at(name).v; }

 private:
  struct Slot {
    Tensor<T> param;
    std::vector<double> m, v;
    bool decay;
  };
  AdamWConfig cfg_;
  std::map<std::string, Slot> state_;
  std::size_t t_ = 0;
};

// Linear warmup to `base` over `warmup` steps, then cosine decay to zero at
// `total`. `step` counts from 0.
double lr_at(std::size_t step, std::size_t total, std::size_t warmup, double base);

// Scales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before scaling.
template <typename T>
double clip_grad_norm(const ParamRegistry<T>& params, double max_norm);

template <typename T>
double grad_norm(const Tensor<T>& t);

struct TrainConfig {
  double lr = 5e-4;
  AdamWConfig adamw;
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  std::optional<std::size_t> warmup_steps;  // default: 5% of steps
  std::uint64_t seed = 0;
  std::optional<double> grad_clip = 5.0;
  std::size_t eval_every = 0;  // 0: evaluate only after the last step
  std::size_t eval_batch_size = 64;
  Augment augment;
  std::filesystem::path out_dir;  // empty: write nothing

  std::size_t warmup() const;
  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  std::optional<double> eval_top1;
};

struct TrainResult {
  std::vector<StepRecord> log;
  std::optional<double> best_eval;
  std::optional<std::size_t> best_step;
};

// Clears parameter gradients, runs forward + backward on one batch and leaves
// the gradients in the parameters. Returns the loss.
template <typename T>
double loss_and_grad(PacaModel<T>& model, const Tensor<T>& images, const std::vector<std::size_t>& labels);

// Trains in place. `eval_ds` defaults to the training set. With out_dir set,
// writes metrics.csv, final.ckpt and best.ckpt there.
template <typename T>
TrainResult train_loop(PacaModel<T>& model, const Dataset& train_ds, const Dataset* eval_ds, const TrainConfig& cfg);

template <typename T>
double evaluate(const PacaModel<T>& model, const Dataset& ds, std::size_t batch_size);

void write_metrics_csv(const std::vector<StepRecord>& log, const std::filesystem::path& path);

}  // namespace paca
