// SPDX-License-Identifier: Apache-2.0
//
// Character-level GRU stack.
//
// Each layer holds `blocks_per_layer` independent GRU cells of
// `units_per_block` units. Every block of a layer reads the concatenated
// outputs of all blocks of the layer below (layer 0 reads the one-hot
// character), and the concatenated top-layer output y is projected to
// logits = W^T y + b with W of shape [top_width x vocab_size].
//
// Per block, with input x and previous hidden h:
//   z  = sigmoid(Wz x + Uz h + bz)
//   r  = sigmoid(Wr x + Ur h + br)
//   c  = tanh(Wh x + Uh (r * h) + bh)
//   h' = (1 - z) * h + z * c
//
// Everything is templated on the scalar type: float for real models,
// double for gradient checking.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gruchat/corpus.hpp"
#include "gruchat/error.hpp"

namespace gruchat {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Floor applied to probabilities before taking logs.
inline constexpr double kProbFloor = 1e-12;

struct ModelConfig {
  int vocab_size = 0;
  int layers = 2;
  int blocks_per_layer = 1;
  int units_per_block = 128;
  int bptt_window = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  int layer_width() const noexcept { return blocks_per_layer * units_per_block; }
  int input_width(int layer) const noexcept { return layer == 0 ? vocab_size : layer_width(); }

  void validate() const {
    if (vocab_size < 1 || layers < 1 || blocks_per_layer < 1 || units_per_block < 1 || bptt_window < 1) {
      throw InvalidArgument("model config: all counts must be >= 1");
    }
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
      throw InvalidArgument("model config: learning_rate must be finite and >= 0");
    }
  }

  /// Total scalar count of a parameter set with this shape.
  std::uint64_t parameter_count() const noexcept {
    const auto n = static_cast<std::uint64_t>(units_per_block);
    std::uint64_t total = 0;
    for (int l = 0; l < layers; ++l) {
      const auto in = static_cast<std::uint64_t>(input_width(l));
      total += static_cast<std::uint64_t>(blocks_per_layer) * 3 * (n * in + n * n + n);
    }
    const auto v = static_cast<std::uint64_t>(vocab_size);
    return total + static_cast<std::uint64_t>(layer_width()) * v + v;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct GruBlock {
  Mat<T> wz, uz, bz;  // update gate
  Mat<T> wr, ur, br;  // reset gate
  Mat<T> wh, uh, bh;  // candidate
};

/// All trainable tensors. Biases are stored as single-column matrices so
/// that every tensor can be visited uniformly.
template <class T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::vector<GruBlock<T>>> blocks;  // [layer][block]
  Mat<T> w_out;                                  // [top_width x vocab]
  Mat<T> b_out;                                  // [vocab x 1]

  /// Visits tensors in the fixed serialization order: for each layer, for
  /// each block, wz uz bz wr ur br wh uh bh; then w_out, b_out.
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& layer : blocks) {
      for (auto& blk : layer) {
        for (Mat<T>* m : {&blk.wz, &blk.uz, &blk.bz, &blk.wr, &blk.ur, &blk.br, &blk.wh, &blk.uh, &blk.bh}) f(*m);
      }
    }
    f(w_out);
    f(b_out);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor([&](Mat<T>& m) { f(static_cast<const Mat<T>&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.blocks.resize(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      for (const auto& b : blocks[l]) {
        out.blocks[l].push_back({b.wz.template cast<U>(), b.uz.template cast<U>(), b.bz.template cast<U>(),
                                 b.wr.template cast<U>(), b.ur.template cast<U>(), b.br.template cast<U>(),
                                 b.wh.template cast<U>(), b.uh.template cast<U>(), b.bh.template cast<U>()});
      }
    }
    out.w_out = w_out.template cast<U>();
    out.b_out = b_out.template cast<U>();
    return out;
  }

  /// Same shapes, all zeros.
  ModelParams zeros_like() const {
    ModelParams out = *this;
    out.for_each_tensor([](Mat<T>& m) { m.setZero(); });
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.config == b.config)) return false;
    std::vector<const Mat<T>*> ta, tb;
    a.for_each_tensor([&](const Mat<T>& m) { ta.push_back(&m); });
    b.for_each_tensor([&](const Mat<T>& m) { tb.push_back(&m); });
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols() || *ta[i] != *tb[i]) return false;
    }
    return true;
  }
};

/// Hidden vectors per (layer, block); each is [units x batch].
template <class T>
struct NetState {
  std::vector<std::vector<Mat<T>>> h;

  static NetState zeros(const ModelConfig& config, int batch = 1) {
    NetState s;
    s.h.assign(static_cast<std::size_t>(config.layers),
               std::vector<Mat<T>>(static_cast<std::size_t>(config.blocks_per_layer),
                                   Mat<T>::Zero(config.units_per_block, batch)));
    return s;
  }

  T max_abs() const {
    T m = 0;
    for (const auto& layer : h)
      for (const auto& blk : layer)
        if (blk.size() > 0) m = std::max(m, blk.cwiseAbs().maxCoeff());
    return m;
  }

  friend bool operator==(const NetState&, const NetState&) = default;
};

template <class T>
struct StepOutput {
  Vec<T> logits;
  Vec<T> probs;
  NetState<T> state;
};

namespace detail {

/// Deterministic uniform [0,1) from a 64-bit engine, independent of the
/// standard library's distribution implementation.
inline double unit_uniform(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

template <class T>
Mat<T> sigmoid(const Mat<T>& a) {
  return (T(1) + (-a.array()).exp()).inverse().matrix();
}

template <class T>
void check_state(const NetState<T>& s, const ModelConfig& c, Eigen::Index batch) {
  if (static_cast<int>(s.h.size()) != c.layers) throw InvalidArgument("state: layer count mismatch");
  for (const auto& layer : s.h) {
    if (static_cast<int>(layer.size()) != c.blocks_per_layer) throw InvalidArgument("state: block count mismatch");
    for (const auto& blk : layer) {
      if (blk.rows() != c.units_per_block || blk.cols() != batch) throw InvalidArgument("state: dimension mismatch");
    }
  }
}

/// Activations of one block at one time step, kept for backprop.
template <class T>
struct BlockCache {
  Mat<T> h_prev, z, r, c;
};

template <class T>
struct StepCache {
  std::vector<Mat<T>> layer_input;              // [layer] -> [in x batch]
  std::vector<std::vector<BlockCache<T>>> blk;  // [layer][block]
  Mat<T> top;                                   // [top_width x batch]
  Mat<T> probs;                                 // [vocab x batch]
};

/// One time step for a batch of columns. Advances `state` in place and
/// returns logits [vocab x batch].
template <class T>
Mat<T> step(const Mat<T>& x, NetState<T>& state, const ModelParams<T>& p, StepCache<T>* cache) {
  const ModelConfig& c = p.config;
  const Eigen::Index batch = x.cols();
  const int n = c.units_per_block;
  if (cache) {
    cache->layer_input.resize(static_cast<std::size_t>(c.layers));
    cache->blk.assign(static_cast<std::size_t>(c.layers), std::vector<BlockCache<T>>(static_cast<std::size_t>(c.blocks_per_layer)));
  }
  Mat<T> input = x;
  for (int l = 0; l < c.layers; ++l) {
    Mat<T> output(c.layer_width(), batch);
    for (int b = 0; b < c.blocks_per_layer; ++b) {
      const GruBlock<T>& g = p.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)];
      Mat<T>& h = state.h[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)];
      Mat<T> z = sigmoid<T>((g.wz * input + g.uz * h).colwise() + g.bz.col(0));
      Mat<T> r = sigmoid<T>((g.wr * input + g.ur * h).colwise() + g.br.col(0));
      Mat<T> rh = r.cwiseProduct(h);
      Mat<T> cand = ((g.wh * input + g.uh * rh).colwise() + g.bh.col(0)).array().tanh().matrix();
      Mat<T> h_new = (T(1) - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(cand);
      if (cache) {
        auto& bc = cache->blk[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)];
        bc.h_prev = h;
        bc.z = std::move(z);
        bc.r = std::move(r);
        bc.c = std::move(cand);
      }
      output.middleRows(b * n, n) = h_new;
      h = std::move(h_new);
    }
    if (cache) cache->layer_input[static_cast<std::size_t>(l)] = std::move(input);
    input = std::move(output);
  }
  Mat<T> logits = (p.w_out.transpose() * input).colwise() + p.b_out.col(0);
  if (cache) cache->top = std::move(input);
  return logits;
}

template <class T>
Mat<T> one_hot_columns(std::span<const int> ids, int vocab) {
  Mat<T> x = Mat<T>::Zero(vocab, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || ids[j] >= vocab) throw InvalidArgument("input id out of range");
    x(ids[j], static_cast<Eigen::Index>(j)) = T(1);
  }
  return x;
}

}  // namespace detail

/// Column-wise softmax, shifted by the column max for stability.
template <class T>
Mat<T> softmax(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T m = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

template <class T>
Vec<T> softmax(const Vec<T>& logits) {
  return softmax<T>(Mat<T>(logits)).col(0);
}

/// Weights uniform in +-1/sqrt(fan_in) (fan_in = columns of input/recurrent
/// matrices, rows of the output projection), biases zero.
template <class T = float>
ModelParams<T> init_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 gen(config.seed);
  ModelParams<T> p;
  p.config = config;
  const int n = config.units_per_block;
  p.blocks.resize(static_cast<std::size_t>(config.layers));
  for (int l = 0; l < config.layers; ++l) {
    const int in = config.input_width(l);
    for (int b = 0; b < config.blocks_per_layer; ++b) {
      p.blocks[static_cast<std::size_t>(l)].push_back(
          {Mat<T>(n, in), Mat<T>(n, n), Mat<T>(n, 1), Mat<T>(n, in), Mat<T>(n, n), Mat<T>(n, 1), Mat<T>(n, in),
           Mat<T>(n, n), Mat<T>(n, 1)});
    }
  }
  p.w_out.resize(config.layer_width(), config.vocab_size);
  p.b_out.resize(config.vocab_size, 1);
  auto fill = [&](Mat<T>& m, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>((2.0 * detail::unit_uniform(gen) - 1.0) * bound);
  };
  for (auto& layer : p.blocks) {
    for (auto& blk : layer) {
      for (Mat<T>* w : {&blk.wz, &blk.uz, &blk.wr, &blk.ur, &blk.wh, &blk.uh}) fill(*w, static_cast<double>(w->cols()));
      for (Mat<T>* b : {&blk.bz, &blk.br, &blk.bh}) b->setZero();
    }
  }
  fill(p.w_out, static_cast<double>(p.w_out.rows()));
  p.b_out.setZero();
  return p;
}

/// Single step for one sequence position. `x` is the one-hot input.
template <class T>
StepOutput<T> gru_step(const Vec<T>& x, const NetState<T>& state, const ModelParams<T>& params) {
  const ModelConfig& c = params.config;
  if (x.size() != c.vocab_size) throw InvalidArgument("gru_step: input size does not match vocab_size");
  detail::check_state(state, c, 1);
  StepOutput<T> out;
  out.state = state;
  Mat<T> logits = detail::step<T>(Mat<T>(x), out.state, params, nullptr);
  out.logits = logits.col(0);
  out.probs = softmax<T>(logits).col(0);
  return out;
}

template <class T>
struct ForwardResult {
  std::vector<StepOutput<T>> steps;
  NetState<T> state;
};

/// Runs `seq` from `state`; step t consumes one_hot(seq[t]).
template <class T>
ForwardResult<T> forward(std::span<const int> seq, NetState<T> state, const ModelParams<T>& params) {
  if (seq.empty()) throw InvalidArgument("forward: empty sequence");
  const ModelConfig& c = params.config;
  detail::check_state(state, c, 1);
  ForwardResult<T> out;
  out.steps.reserve(seq.size());
  for (int id : seq) {
    Mat<T> logits = detail::step<T>(detail::one_hot_columns<T>(std::span<const int>(&id, 1), c.vocab_size), state, params, nullptr);
    out.steps.push_back({logits.col(0), softmax<T>(logits).col(0), state});
  }
  out.state = std::move(state);
  return out;
}

/// Advances a single-column state by one character and returns the next
/// distribution. Lighter than gru_step: no state copy is returned.
template <class T>
Vec<T> advance(int id, NetState<T>& state, const ModelParams<T>& params) {
  Mat<T> logits = detail::step<T>(detail::one_hot_columns<T>(std::span<const int>(&id, 1), params.config.vocab_size), state, params, nullptr);
  return softmax<T>(logits).col(0);
}

struct CrossEntropy {
  double nats_per_char = 0.0;
  /// Number of targets whose probability fell below the floor.
  int clamped = 0;
};

/// Mean over steps of -ln P(target); probabilities are floored at 1e-12.
template <class T>
CrossEntropy cross_entropy(std::span<const Vec<T>> step_probs, std::span<const int> targets) {
  if (step_probs.size() != targets.size()) throw InvalidArgument("cross_entropy: length mismatch");
  CrossEntropy ce;
  if (targets.empty()) return ce;
  double sum = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    double p = static_cast<double>(step_probs[t](targets[t]));
    if (p < kProbFloor) {
      p = kProbFloor;
      ++ce.clamped;
    }
    sum -= std::log(p);
  }
  ce.nats_per_char = sum / static_cast<double>(targets.size());
  return ce;
}

template <class T>
CrossEntropy cross_entropy(const std::vector<StepOutput<T>>& steps, std::span<const int> targets) {
  std::vector<Vec<T>> probs;
  probs.reserve(steps.size());
  for (const auto& s : steps) probs.push_back(s.probs);
  return cross_entropy<T>(std::span<const Vec<T>>(probs), targets);
}

template <class T>
struct BackwardResult {
  ModelParams<T> grads;
  double loss = 0.0;  // mean nats per character over the batch
  NetState<T> final_state;
};

/// Loss and analytic gradients for one batch with truncated BPTT: the
/// incoming `state` is treated as a constant, so no gradient flows past the
/// start of the window. The loss is the mean cross-entropy over all
/// batch x window positions, multiplied by `loss_scale`.
template <class T>
BackwardResult<T> backward(const Batch& batch, const ModelParams<T>& params, const NetState<T>& state, T loss_scale = T(1)) {
  const ModelConfig& c = params.config;
  const int bsz = batch.batch_size();
  const int window = batch.window();
  if (bsz < 1 || window < 1) throw InvalidArgument("backward: empty batch");
  detail::check_state(state, c, bsz);
  const int n = c.units_per_block;

  std::vector<detail::StepCache<T>> caches(static_cast<std::size_t>(window));
  NetState<T> s = state;
  double loss = 0.0;
  std::vector<int> column(static_cast<std::size_t>(bsz));
  for (int t = 0; t < window; ++t) {
    for (int b = 0; b < bsz; ++b) column[static_cast<std::size_t>(b)] = batch.inputs[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
    auto& cache = caches[static_cast<std::size_t>(t)];
    Mat<T> logits = detail::step<T>(detail::one_hot_columns<T>(column, c.vocab_size), s, params, &cache);
    cache.probs = softmax<T>(logits);
    for (int b = 0; b < bsz; ++b) {
      const int target = batch.targets[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
      if (target < 0 || target >= c.vocab_size) throw InvalidArgument("backward: target id out of range");
      loss -= std::log(std::max(static_cast<double>(cache.probs(target, b)), kProbFloor));
    }
  }
  const T norm = loss_scale / static_cast<T>(bsz * window);

  BackwardResult<T> out;
  out.loss = loss / static_cast<double>(bsz * window) * static_cast<double>(loss_scale);
  out.final_state = std::move(s);
  out.grads = params.zeros_like();
  ModelParams<T>& g = out.grads;

  // carry[l][b]: dLoss/dh_t flowing back from step t+1.
  std::vector<std::vector<Mat<T>>> carry = NetState<T>::zeros(c, bsz).h;
  for (int t = window - 1; t >= 0; --t) {
    auto& cache = caches[static_cast<std::size_t>(t)];
    Mat<T> dlogits = cache.probs;
    for (int b = 0; b < bsz; ++b) dlogits(batch.targets[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)], b) -= T(1);
    dlogits *= norm;
    g.w_out.noalias() += cache.top * dlogits.transpose();
    g.b_out.col(0) += dlogits.rowwise().sum();
    Mat<T> d_out = params.w_out * dlogits;  // gradient w.r.t. the current layer's output

    for (int l = c.layers - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      const Mat<T>& x = cache.layer_input[li];
      Mat<T> dx = Mat<T>::Zero(x.rows(), bsz);
      for (int b = 0; b < c.blocks_per_layer; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        const GruBlock<T>& w = params.blocks[li][bi];
        GruBlock<T>& gw = g.blocks[li][bi];
        const auto& bc = cache.blk[li][bi];
        Mat<T> dh = d_out.middleRows(b * n, n) + carry[li][bi];

        Mat<T> dcand = dh.cwiseProduct(bc.z);
        Mat<T> dz = dh.cwiseProduct(bc.c - bc.h_prev);
        Mat<T> dh_prev = dh.cwiseProduct((T(1) - bc.z.array()).matrix());

        Mat<T> da_h = dcand.cwiseProduct((T(1) - bc.c.array().square()).matrix());
        Mat<T> rh = bc.r.cwiseProduct(bc.h_prev);
        gw.wh.noalias() += da_h * x.transpose();
        gw.uh.noalias() += da_h * rh.transpose();
        gw.bh.col(0) += da_h.rowwise().sum();
        dx.noalias() += w.wh.transpose() * da_h;
        Mat<T> drh = w.uh.transpose() * da_h;
        Mat<T> dr = drh.cwiseProduct(bc.h_prev);
        dh_prev += drh.cwiseProduct(bc.r);

        Mat<T> da_z = dz.cwiseProduct(bc.z.cwiseProduct((T(1) - bc.z.array()).matrix()));
        gw.wz.noalias() += da_z * x.transpose();
        gw.uz.noalias() += da_z * bc.h_prev.transpose();
        gw.bz.col(0) += da_z.rowwise().sum();
        dx.noalias() += w.wz.transpose() * da_z;
        dh_prev.noalias() += w.uz.transpose() * da_z;

        Mat<T> da_r = dr.cwiseProduct(bc.r.cwiseProduct((T(1) - bc.r.array()).matrix()));
        gw.wr.noalias() += da_r * x.transpose();
        gw.ur.noalias() += da_r * bc.h_prev.transpose();
        gw.br.col(0) += da_r.rowwise().sum();
        dx.noalias() += w.wr.transpose() * da_r;
        dh_prev.noalias() += w.ur.transpose() * da_r;

        carry[li][bi] = std::move(dh_prev);
      }
      d_out = std::move(dx);
    }
  }
  return out;
}

/// Loss only; the same quantity `backward` differentiates.
template <class T>
double batch_loss(const Batch& batch, const ModelParams<T>& params, const NetState<T>& state) {
  const ModelConfig& c = params.config;
  const int bsz = batch.batch_size();
  detail::check_state(state, c, bsz);
  NetState<T> s = state;
  double loss = 0.0;
  std::vector<int> column(static_cast<std::size_t>(bsz));
  for (int t = 0; t < batch.window(); ++t) {
    for (int b = 0; b < bsz; ++b) column[static_cast<std::size_t>(b)] = batch.inputs[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
    Mat<T> probs = softmax<T>(detail::step<T>(detail::one_hot_columns<T>(column, c.vocab_size), s, params, nullptr));
    for (int b = 0; b < bsz; ++b)
      loss -= std::log(std::max(static_cast<double>(probs(batch.targets[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)], b)), kProbFloor));
  }
  return loss / static_cast<double>(bsz * batch.window());
}

}  // namespace gruchat
