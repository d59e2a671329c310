// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "gruchat/corpus.hpp"
#include "gruchat/error.hpp"
#include "gruchat/grunet.hpp"

namespace gruchat {

struct TrainOptions {
  int batch_size = 32;
  int epochs = 1;
  /// Stop after this many updates; 0 means run all epochs.
  int max_steps = 0;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Called after every update with (update number starting at 1, loss).
  std::function<void(int, double)> on_step;
};

/// Raised when the loss stops being finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int step, double loss)
      : Error("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) + ")"),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Adam with bias correction.
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams<T>& like, double lr, double beta1, double beta2, double eps)
      : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void update(ModelParams<T>& params, ModelParams<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    std::vector<Mat<T>*> p, g, m, v;
    params.for_each_tensor([&](Mat<T>& x) { p.push_back(&x); });
    grads.for_each_tensor([&](Mat<T>& x) { g.push_back(&x); });
    m_.for_each_tensor([&](Mat<T>& x) { m.push_back(&x); });
    v_.for_each_tensor([&](Mat<T>& x) { v.push_back(&x); });
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T step = static_cast<T>(lr_ / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = b1 * m[i]->array() + (T(1) - b1) * g[i]->array();
      v[i]->array() = b2 * v[i]->array() + (T(1) - b2) * g[i]->array().square();
      p[i]->array() -= step * m[i]->array() / ((v[i]->array() * inv_c2).sqrt() + eps);
    }
  }

 private:
  ModelParams<T> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Rescales `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_global_norm(ModelParams<T>& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each_tensor([&](const Mat<T>& m) { sq += static_cast<double>(m.squaredNorm()); });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    grads.for_each_tensor([&](Mat<T>& m) { m *= scale; });
  }
  return norm;
}

template <class T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<double> loss_history;  // one entry per update
};

/// Trains from scratch on `text`. Hidden state is carried across consecutive
/// batches within an epoch and reset to zero at the start of each epoch.
template <class T = float>
TrainResult<T> train(std::string_view text, const Vocabulary& vocab, const ModelConfig& config, const TrainOptions& options) {
  config.validate();
  if (config.vocab_size != vocab.size()) throw InvalidArgument("train: config.vocab_size does not match vocabulary");
  if (options.epochs < 1 || options.batch_size < 1) throw InvalidArgument("train: epochs and batch_size must be >= 1");
  const std::vector<Batch> batches = make_batches(text, vocab, config.bptt_window, options.batch_size);

  TrainResult<T> result{init_params<T>(config), {}};
  AdamOptimizer<T> adam(result.params, config.learning_rate, options.beta1, options.beta2, options.adam_eps);
  int step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    NetState<T> state = NetState<T>::zeros(config, options.batch_size);
    for (const Batch& batch : batches) {
      if (options.max_steps > 0 && step >= options.max_steps) return result;
      BackwardResult<T> br = backward<T>(batch, result.params, state);
      if (!std::isfinite(br.loss)) throw TrainingDiverged(step, br.loss);
      clip_global_norm(br.grads, options.clip_norm);
      adam.update(result.params, br.grads);
      state = std::move(br.final_state);
      result.loss_history.push_back(br.loss);
      if (options.on_step) options.on_step(step + 1, br.loss);
      ++step;
    }
  }
  return result;
}

}  // namespace gruchat
