#ifndef TTA_PLR_HPP
#define TTA_PLR_HPP

// Soft pseudo-label refinement: teacher outputs averaged over weak views, then
// averaged again over nearest neighbours held in per-class FIFO queues.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "tta/nn.hpp"
#include "tta/rng.hpp"
#include "tta/tensor.hpp"

namespace tta {

/// Random horizontal flip plus random resized crop, resampled back to the input size.
struct WeakAugmenter {
  int num_views = 5;
  double scale_low = 0.8;
  double scale_high = 1.0;
  double ratio_low = 3.0 / 4.0;
  double ratio_high = 4.0 / 3.0;
  double flip_prob = 0.5;

  static WeakAugmenter identity() { return {1, 1.0, 1.0, 1.0, 1.0, 0.0}; }

  template <class T>
  Image<T> operator()(const Image<T>& x, Rng& rng) const {
    const bool flip = rng.bernoulli(flip_prob);
    const double s = rng.uniform(scale_low, scale_high);
    const double r = std::exp(rng.uniform(std::log(ratio_low), std::log(ratio_high)));
    const double W = x.width, H = x.height;
    const double cw = std::min(W, W * std::sqrt(s * r));
    const double ch = std::min(H, H * std::sqrt(s / r));
    const double x0 = rng.uniform(0.0, 1.0) * (W - cw);
    const double y0 = rng.uniform(0.0, 1.0) * (H - ch);
    Image<T> out(x.channels, x.height, x.width);
    auto pix = [&](int c, int yy, int xx) {
      return x(c, std::clamp(yy, 0, x.height - 1), std::clamp(xx, 0, x.width - 1));
    };
    for (int oy = 0; oy < x.height; ++oy)
      for (int ox = 0; ox < x.width; ++ox) {
        const int tx = flip ? x.width - 1 - ox : ox;
        const double sx = x0 + (tx + 0.5) * cw / W - 0.5;
        const double sy = y0 + (oy + 0.5) * ch / H - 0.5;
        const int ix = static_cast<int>(std::floor(sx));
        const int iy = static_cast<int>(std::floor(sy));
        const T fx = static_cast<T>(sx - ix), fy = static_cast<T>(sy - iy);
        for (int c = 0; c < x.channels; ++c)
          out(c, oy, ox) = (1 - fx) * (1 - fy) * pix(c, iy, ix) + fx * (1 - fy) * pix(c, iy, ix + 1) +
                           (1 - fx) * fy * pix(c, iy + 1, ix) + fx * fy * pix(c, iy + 1, ix + 1);
      }
    return out;
  }
};

template <class T>
struct TeacherEnsemble {
  Matrix<T> features;  ///< z_t, B x D
  Matrix<T> probs;     ///< y_t, B x K
};

/// Averages teacher features and softmax outputs over `augmenter.num_views`
/// weak views of every image. Views are drawn view-major, image-minor.
template <class T>
TeacherEnsemble<T> ensemble_weak(const SplitModel<T>& teacher, std::span<const Image<T>> batch,
                                 const WeakAugmenter& augmenter, Rng& rng, NormMode norm = NormMode::running_stats) {
  if (batch.empty()) throw ShapeError("ensemble_weak: empty batch");
  if (augmenter.num_views < 1) throw std::invalid_argument("ensemble_weak: need at least one view");
  const int B = static_cast<int>(batch.size());
  TeacherEnsemble<T> acc{Matrix<T>(B, teacher.arch().feature_dim()), Matrix<T>(B, teacher.arch().num_classes)};
  std::vector<Image<T>> views(batch.size());
  for (int v = 0; v < augmenter.num_views; ++v) {
    for (int j = 0; j < B; ++j) views[j] = augmenter(batch[j], rng);
    auto res = teacher.forward(stack<T>(views), norm);
    for (std::size_t q = 0; q < acc.features.data.size(); ++q) acc.features.data[q] += res.features.data[q];
    for (std::size_t q = 0; q < acc.probs.data.size(); ++q) acc.probs.data[q] += res.probs.data[q];
  }
  const T inv = T(1) / static_cast<T>(augmenter.num_views);
  for (auto& v : acc.features.data) v *= inv;
  for (auto& v : acc.probs.data) v *= inv;
  return acc;
}

/// First index of the maximum (ties go to the lowest class).
template <class T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
  return 1.0 - dot / denom;
}

/// Class-balanced memory of (feature, soft label) pairs with FIFO eviction.
class RefinementQueue {
 public:
  struct Entry {
    std::vector<double> feature;
    std::vector<double> label;
    bool operator==(const Entry&) const = default;
  };

  RefinementQueue() = default;
  RefinementQueue(int num_classes, int capacity_per_class) : per_class_(num_classes), capacity_(capacity_per_class) {
    if (num_classes < 1 || capacity_per_class < 1) throw std::invalid_argument("queue needs classes and capacity >= 1");
  }

  [[nodiscard]] int num_classes() const { return static_cast<int>(per_class_.size()); }
  [[nodiscard]] int capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const {
    std::size_t n = 0;
    for (const auto& q : per_class_) n += q.size();
    return n;
  }
  [[nodiscard]] const std::deque<Entry>& class_entries(int k) const { return per_class_.at(k); }

  /// Appends to queue argmax(label); evicts that class's oldest entry when full.
  void enqueue(std::span<const double> feature, std::span<const double> label) {
    if (label.size() != per_class_.size()) throw ShapeError("enqueue: label length differs from class count");
    auto& q = per_class_[argmax(label)];
    q.push_back({{feature.begin(), feature.end()}, {label.begin(), label.end()}});
    if (static_cast<int>(q.size()) > capacity_) q.pop_front();
  }

  /// Mean soft label of the min(n, size) nearest stored features (cosine distance).
  [[nodiscard]] std::vector<double> refine(std::span<const double> feature, int n) const {
    if (size() == 0) throw std::logic_error("refine: the queue is empty");
    if (n < 1) throw std::invalid_argument("refine: n must be >= 1");
    std::vector<std::pair<double, const Entry*>> cand;
    for (const auto& q : per_class_)
      for (const auto& e : q) cand.emplace_back(cosine_distance(feature, e.feature), &e);
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(n), cand.size());
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> out(per_class_.size(), 0.0);
    for (std::size_t i = 0; i < take; ++i)
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += cand[i].second->label[k];
    for (auto& v : out) v /= static_cast<double>(take);
    return out;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["capacity"] = capacity_;
    auto classes = nlohmann::json::array();
    for (const auto& q : per_class_) {
      auto arr = nlohmann::json::array();
      for (const auto& e : q) arr.push_back({{"feature", e.feature}, {"label", e.label}});
      classes.push_back(arr);
    }
    j["classes"] = classes;
    return j;
  }

  static RefinementQueue from_json(const nlohmann::json& j) {
    const auto& classes = j.at("classes");
    RefinementQueue q(static_cast<int>(classes.size()), j.at("capacity").get<int>());
    for (std::size_t k = 0; k < classes.size(); ++k)
      for (const auto& e : classes[k])
        q.per_class_[k].push_back({e.at("feature").get<std::vector<double>>(), e.at("label").get<std::vector<double>>()});
    return q;
  }

  bool operator==(const RefinementQueue&) const = default;

 private:
  std::vector<std::deque<Entry>> per_class_;
  int capacity_ = 1;
};

/// Runs the weak-view ensemble, then enqueues and refines sample by sample in
/// batch order. Returns the refined soft pseudo-labels (B x K).
template <class T>
Matrix<T> refine_pseudo_labels(const SplitModel<T>& teacher, std::span<const Image<T>> batch,
                               const WeakAugmenter& augmenter, RefinementQueue& queue, int num_neighbors, Rng& rng,
                               NormMode norm = NormMode::running_stats) {
  auto ens = ensemble_weak(teacher, batch, augmenter, rng, norm);
  Matrix<T> out(ens.probs.rows, ens.probs.cols);
  for (int i = 0; i < ens.probs.rows; ++i) {
    std::vector<double> z(ens.features.row(i).begin(), ens.features.row(i).end());
    std::vector<double> y(ens.probs.row(i).begin(), ens.probs.row(i).end());
    queue.enqueue(z, y);
    const auto refined = queue.refine(z, num_neighbors);
    for (int k = 0; k < out.cols; ++k) out(i, k) = static_cast<T>(refined[k]);
  }
  return out;
}

}  // namespace tta

#endif  // TTA_PLR_HPP
