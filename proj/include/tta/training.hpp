#ifndef TTA_TRAINING_HPP
#define TTA_TRAINING_HPP

// Supervised source training (cross-entropy, Adam) and plain evaluation.

#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/evaluation.hpp"
#include "tta/nn.hpp"
#include "tta/optim.hpp"
#include "tta/plr.hpp"

namespace tta {

struct TrainOptions {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 2e-3;
  double weight_decay = 0.0;
  bool augment = true;  // weak flip + crop on every sample
  bool cosine_decay = true;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double train_error = 0;
};

/// Trains `model` in place. All parameters, the head included, are updated.
template <class T>
std::vector<EpochLog> train_source(SplitModel<T>& model, const Dataset& data, const TrainOptions& o,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (data.size() == 0) throw DataError("train_source: empty dataset");
  Rng rng(o.seed);
  Optimizer opt(OptimizerKind::adam, o.learning_rate, model.trainable_indices());
  WeakAugmenter aug;
  aug.scale_low = 0.85;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<T> grad(model.param_vector().size());
  std::vector<EpochLog> logs;
  const int K = model.arch().num_classes;
  for (int ep = 0; ep < o.epochs; ++ep) {
    if (o.cosine_decay)
      opt.set_learning_rate(0.5 * o.learning_rate * (1.0 + std::cos(std::numbers::pi * ep / o.epochs)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double loss_sum = 0;
    std::size_t wrong = 0;
    for (std::size_t start = 0; start < order.size(); start += o.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(o.batch_size));
      if (end - start < 2) break;  // batch statistics need two samples
      std::vector<Image<T>> imgs;
      std::vector<int> labels;
      for (std::size_t q = start; q < end; ++q) {
        auto x = data.images[order[q]].template cast<T>();
        imgs.push_back(o.augment ? aug(x, rng) : std::move(x));
        labels.push_back(data.labels[order[q]]);
      }
      const int B = static_cast<int>(imgs.size());
      ForwardTrace<T> trace;
      auto res = model.forward(stack<T>(imgs), NormMode::batch_stats, true, &trace);
      Upstream<T> up;
      up.d_logits = Matrix<T>(B, K);
      for (int i = 0; i < B; ++i) {
        auto p = res.probs.row(i);
        loss_sum -= std::log(std::max(static_cast<double>(p[labels[i]]), 1e-12));
        if (argmax<T>(p) != static_cast<std::size_t>(labels[i])) ++wrong;
        for (int k = 0; k < K; ++k) up.d_logits(i, k) = (p[k] - (k == labels[i] ? T(1) : T(0))) / static_cast<T>(B);
      }
      std::ranges::fill(grad, T(0));
      model.backward(trace, up, grad, false);
      if (o.weight_decay > 0)
        for (std::size_t idx : opt.indices()) grad[idx] += static_cast<T>(o.weight_decay) * model.param_vector()[idx];
      opt.step(model.param_vector(), std::span<const T>(grad));
    }
    EpochLog log{ep, loss_sum / static_cast<double>(data.size()), 100.0 * static_cast<double>(wrong) / data.size()};
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

/// Softmax outputs in inference mode (running statistics), in dataset order.
template <class T>
std::vector<PredictionRecord> predict_dataset(const SplitModel<T>& model, const Dataset& data, int batch_size = 256) {
  std::vector<PredictionRecord> out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Image<T>> imgs;
    for (std::size_t q = start; q < end; ++q) imgs.push_back(data.images[q].template cast<T>());
    auto probs = model.forward(stack<T>(imgs), NormMode::running_stats).probs;
    for (int i = 0; i < probs.rows; ++i) {
      auto row = probs.row(i);
      out.push_back({std::vector<double>(row.begin(), row.end()), data.labels[start + i]});
    }
  }
  return out;
}

}  // namespace tta

#endif  // TTA_TRAINING_HPP
