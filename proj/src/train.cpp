// SPDX-License-Identifier: Apache-2.0
#include "paca/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "paca/checkpoint.hpp"
#include "paca/ops.hpp"

namespace paca {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: expected logits [B, K], got " + logits.shape().to_string());
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  for (std::size_t label : labels) {
    if (label >= k) throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " >= " + std::to_string(k));
  }
  const auto x = logits.data();
  std::vector<T> probs(b * k);
  T total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = x.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      s += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    total += mx + std::log(s) - row[labels[i]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(b));
  check_finite("cross_entropy", out);
  record_op<T>("cross_entropy", {logits}, out, [logits, out, labels, probs = std::move(probs), b, k]() {
    const T g = out.grad()[0] / static_cast<T>(b);
    std::vector<T> d(b * k);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < k; ++j) d[i * k + j] = g * (probs[i * k + j] - (j == labels[i] ? T(1) : T(0)));
    logits.accumulate_grad(d);
  });
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [B, K], got " + logits.shape().to_string());
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    out[i] = best;
  }
  return out;
}

template <typename T>
AdamW<T>::AdamW(const ParamRegistry<T>& params, AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1)) {
    throw std::invalid_argument("AdamW: betas must lie in [0, 1)");
  }
  for (const auto& [name, t] : params) {
    state_.emplace(name, Slot{t, std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0), t.rank() >= 2});
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, slot] : state_) {
    auto w = slot.param.data();
    const auto g = slot.param.grad();
    const double decay = slot.decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1, vhat = slot.v[i] / bc2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

double lr_at(std::size_t step, std::size_t total, std::size_t warmup, double base) {
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

template <typename T>
double grad_norm(const Tensor<T>& t) {
  double s = 0;
  for (T g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

template <typename T>
double clip_grad_norm(const ParamRegistry<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& [name, t] : params)
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& [name, t] : params) {
      Tensor<T> handle = t;
      for (T& g : handle.grad_mut()) g *= factor;
    }
  }
  return norm;
}

std::size_t TrainConfig::warmup() const {
  return warmup_steps ? *warmup_steps : static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(steps)));
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("train: lr must be > 0");
  if (steps == 0) throw std::invalid_argument("train: steps must be >= 1");
  if (batch_size == 0 || eval_batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(adamw.beta1 >= 0 && adamw.beta1 < 1 && adamw.beta2 >= 0 && adamw.beta2 < 1)) {
    throw std::invalid_argument("train: betas must lie in [0, 1)");
  }
  if (adamw.weight_decay < 0) throw std::invalid_argument("train: weight decay must be >= 0");
  if (grad_clip && !(*grad_clip > 0)) throw std::invalid_argument("train: grad clip must be > 0");
}

template <typename T>
double loss_and_grad(PacaModel<T>& model, const Tensor<T>& images, const std::vector<std::size_t>& labels) {
  for (auto& [name, t] : model.params()) t.clear_grad();
  Tape<T> tape;
  Tensor<T> loss;
  {
    auto rec = tape.record();
    loss = cross_entropy(forward(model, images, false).logits, labels);
  }
  tape.backward(loss);
  return static_cast<double>(loss.item());
}

template <typename T>
double evaluate(const PacaModel<T>& model, const Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) return 0.0;
  BatchIterator<T> it(ds, batch_size, 0, false);
  Batch<T> batch;
  std::size_t correct = 0;
  while (it.next(batch)) {
    const auto pred = argmax_rows(forward(model, batch.images, false).logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void write_metrics_csv(const std::vector<StepRecord>& log, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,lr,loss,eval_top1\n";
  char buf[128];
  for (const StepRecord& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,", r.step, r.lr, r.loss);
    os << buf;
    if (r.eval_top1) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.eval_top1);
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

template <typename T>
TrainResult train_loop(PacaModel<T>& model, const Dataset& train_ds, const Dataset* eval_ds, const TrainConfig& cfg) {
  cfg.validate();
  if (train_ds.class_count != model.config().num_classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(train_ds.class_count) + " classes, model " +
                                std::to_string(model.config().num_classes));
  }
  const Dataset& eval_set = eval_ds != nullptr ? *eval_ds : train_ds;
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  AdamW<T> opt(model.params(), cfg.adamw);
  BatchIterator<T> it(train_ds, cfg.batch_size, mix_seed(cfg.seed, 1), true, cfg.augment);
  TrainResult result;
  Batch<T> batch;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (!it.next(batch)) it.next(batch);
    const double lr = lr_at(step, cfg.steps, cfg.warmup(), cfg.lr);
    double loss = 0;
    try {
      loss = loss_and_grad(model, batch.images, batch.labels);
    } catch (const NonFiniteError& e) {
      throw TrainingError(step, std::string("non-finite value: ") + e.what());
    }
    if (!std::isfinite(loss)) throw TrainingError(step, "non-finite loss");
    if (cfg.grad_clip) clip_grad_norm(model.params(), *cfg.grad_clip);
    opt.step(lr);

    StepRecord rec{step, lr, loss, std::nullopt};
    const bool last = step + 1 == cfg.steps;
    if (last || (cfg.eval_every != 0 && (step + 1) % cfg.eval_every == 0)) {
      rec.eval_top1 = evaluate(model, eval_set, cfg.eval_batch_size);
      if (!result.best_eval || *rec.eval_top1 > *result.best_eval) {
        result.best_eval = rec.eval_top1;
        result.best_step = step;
        if (!cfg.out_dir.empty()) save_checkpoint(model, cfg.out_dir / "best.ckpt");
      }
    }
    result.log.push_back(rec);
  }
  for (auto& [name, t] : model.params()) t.clear_grad();
  if (!cfg.out_dir.empty()) {
    save_checkpoint(model, cfg.out_dir / "final.ckpt");
    write_metrics_csv(result.log, cfg.out_dir / "metrics.csv");
  }
  return result;
}

#define PACA_INSTANTIATE_TRAIN(T)                                                                      \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);                                    \
  template class AdamW<T>;                                                                            \
  template double grad_norm(const Tensor<T>&);                                                        \
  template double clip_grad_norm(const ParamRegistry<T>&, double);                                    \
  template double loss_and_grad(PacaModel<T>&, const Tensor<T>&, const std::vector<std::size_t>&);    \
  template double evaluate(const PacaModel<T>&, const Dataset&, std::size_t);                         \
  template TrainResult train_loop(PacaModel<T>&, const Dataset&, const Dataset*, const TrainConfig&);

PACA_INSTANTIATE_TRAIN(float)
PACA_INSTANTIATE_TRAIN(double)

#undef PACA_INSTANTIATE_TRAIN

}  // namespace paca
