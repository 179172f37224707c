#ifndef TTA_ADV_AUGMENT_HPP
#define TTA_ADV_AUGMENT_HPP

// Online adversarial augmentation policy.
//
// The search space is every unordered N-combination of registry ops, applied in
// registry order. Each sub-policy i has N magnitudes (row i of M) and a
// selection probability p_i. For an image x and sampled index i the policy
// loss is
//
//   L_aug(x, i) = sum_k q_k log q_k + lambda1 / L * sum_l ||mu_l(x~) - mu_l(x)||^2
//
// with q the teacher prediction on x~ = rho_i(x, M_i) and mu_l the channel means
// of teacher block l. The score-function estimate of the gradient of the
// expected loss is
//
//   d/dM_i : grad_M L_aug(x, i)        d/dp_i : L_aug(x, i) / p_i
//
// and zero elsewhere. P is projected back onto {p : sum p = 1, p >= floor}
// after each step and M is clamped to [0, 1].

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tta/nn.hpp"
#include "tta/objectives.hpp"
#include "tta/rng.hpp"
#include "tta/transforms.hpp"

namespace tta {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SubPolicy {
  std::vector<OpKind> ops;
  bool operator==(const SubPolicy&) const = default;
};

inline std::string describe(const SubPolicy& sp) {
  std::string s;
  for (std::size_t i = 0; i < sp.ops.size(); ++i) {
    if (i) s += "+";
    s += op_name(sp.ops[i]);
  }
  return s;
}

inline std::vector<OpKind> all_ops() {
  std::vector<OpKind> v;
  for (const auto& info : kOpRegistry) v.push_back(info.kind);
  return v;
}

/// All C(|op_set|, n) combinations, ops kept in registry order, lexicographic.
inline std::vector<SubPolicy> enumerate_subpolicies(std::span<const OpKind> op_set, int n) {
  if (n < 1 || n > static_cast<int>(op_set.size()))
    throw ConfigError("sub-policy dimension must lie in [1, " + std::to_string(op_set.size()) + "], got " +
                      std::to_string(n));
  std::vector<OpKind> sorted(op_set.begin(), op_set.end());
  std::ranges::sort(sorted, [](OpKind a, OpKind b) { return static_cast<int>(a) < static_cast<int>(b); });
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("op set has duplicates");
  std::vector<SubPolicy> out;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const int total = static_cast<int>(sorted.size());
  while (true) {
    SubPolicy sp;
    for (int i : idx) sp.ops.push_back(sorted[i]);
    out.push_back(std::move(sp));
    int j = n - 1;
    while (j >= 0 && idx[j] == total - n + j) --j;
    if (j < 0) break;
    ++idx[j];
    for (int q = j + 1; q < n; ++q) idx[q] = idx[q - 1] + 1;
  }
  return out;
}

/// Euclidean projection onto {p : sum p = 1, p_i >= floor}.
inline void project_to_floored_simplex(std::vector<double>& p, double floor) {
  const std::size_t n = p.size();
  if (n == 0) return;
  const double mass = 1.0 - floor * static_cast<double>(n);
  if (mass < 0) throw ConfigError("probability floor too large for the number of sub-policies");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = p[i] - floor;
  std::vector<double> u = v;
  std::ranges::sort(u, std::greater<>());
  double cum = 0, theta = 0;
  for (std::size_t j = 0; j < n; ++j) {
    cum += u[j];
    const double t = (cum - mass) / static_cast<double>(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  for (std::size_t i = 0; i < n; ++i) p[i] = std::max(v[i] - theta, 0.0) + floor;
}

struct PolicyGradient {
  std::vector<double> d_probs;  ///< |P|
  Matrix<double> d_magnitudes;  ///< |P| x N
};

/// Component of a P-gradient that lies in the simplex's tangent space (sum zero).
/// Adding a constant to every entry does not change a projected update.
inline std::vector<double> tangent_component(std::span<const double> d_probs) {
  double mean = 0;
  for (double v : d_probs) mean += v;
  mean /= static_cast<double>(d_probs.size());
  std::vector<double> out(d_probs.begin(), d_probs.end());
  for (auto& v : out) v -= mean;
  return out;
}

struct PolicyState {
  std::vector<SubPolicy> sub_policies;
  Matrix<double> magnitudes;  ///< M, |P| x N
  std::vector<double> probs;  ///< P
  std::vector<long> sample_counts;
  double gamma = 0.1;
  double prob_floor = 1e-4;

  PolicyState() = default;

  /// Uniform P, all magnitudes 0.5.
  PolicyState(std::span<const OpKind> op_set, int n, double gamma_ = 0.1, double floor = 1e-4)
      : sub_policies(enumerate_subpolicies(op_set, n)), gamma(gamma_), prob_floor(floor) {
    const auto count = sub_policies.size();
    magnitudes = Matrix<double>(static_cast<int>(count), n, 0.5);
    probs.assign(count, 1.0 / static_cast<double>(count));
    if (prob_floor * static_cast<double>(count) > 1.0) prob_floor = 1.0 / static_cast<double>(count);
    sample_counts.assign(count, 0);
  }

  [[nodiscard]] std::size_t size() const { return sub_policies.size(); }
  [[nodiscard]] int dim() const { return magnitudes.cols; }

  PolicyGradient zero_gradient() const {
    return {std::vector<double>(size(), 0.0), Matrix<double>(magnitudes.rows, magnitudes.cols, 0.0)};
  }

  /// [P, M] <- [P, M] - step * grad, then project P and clamp M.
  void apply_step(const PolicyGradient& g, double step) {
    bool moved = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double delta = step * g.d_probs[i];
      moved = moved || delta != 0.0;
      probs[i] -= delta;
    }
    for (std::size_t i = 0; i < magnitudes.data.size(); ++i)
      magnitudes.data[i] = std::clamp(magnitudes.data[i] - step * g.d_magnitudes.data[i], 0.0, 1.0);
    if (moved) project_to_floored_simplex(probs, prob_floor);
  }

  std::size_t sample(Rng& rng) { return rng.categorical<double>(probs); }

  [[nodiscard]] std::vector<std::size_t> ranked_by_probability() const {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    return order;
  }

  template <class T>
  Image<T> apply(const Image<T>& x, std::size_t i) const {
    std::vector<T> m(dim());
    for (int j = 0; j < dim(); ++j) m[j] = static_cast<T>(magnitudes(static_cast<int>(i), j));
    return apply_ops<T>(x, sub_policies[i].ops, m);
  }

  template <class T>
  AugmentedView<T> apply_with_tangents(const Image<T>& x, std::size_t i) const {
    std::vector<T> m(dim());
    for (int j = 0; j < dim(); ++j) m[j] = static_cast<T>(magnitudes(static_cast<int>(i), j));
    return apply_ops_with_tangents<T>(x, sub_policies[i].ops, m);
  }
};

inline nlohmann::json policy_to_json(const PolicyState& p) {
  nlohmann::json j;
  j["gamma"] = p.gamma;
  j["prob_floor"] = p.prob_floor;
  j["probs"] = p.probs;
  j["sample_counts"] = p.sample_counts;
  j["dim"] = p.dim();
  j["magnitudes"] = p.magnitudes.data;
  auto names = nlohmann::json::array();
  for (const auto& sp : p.sub_policies) {
    auto ops = nlohmann::json::array();
    for (auto k : sp.ops) ops.push_back(std::string(op_name(k)));
    names.push_back(ops);
  }
  j["sub_policies"] = names;
  return j;
}

inline OpKind op_from_name(const std::string& name) {
  for (const auto& info : kOpRegistry)
    if (info.name == name) return info.kind;
  throw ConfigError("unknown augmentation op '" + name + "'");
}

inline PolicyState policy_from_json(const nlohmann::json& j) {
  PolicyState p;
  p.gamma = j.at("gamma").get<double>();
  p.prob_floor = j.at("prob_floor").get<double>();
  p.probs = j.at("probs").get<std::vector<double>>();
  p.sample_counts = j.at("sample_counts").get<std::vector<long>>();
  const int dim = j.at("dim").get<int>();
  for (const auto& ops : j.at("sub_policies")) {
    SubPolicy sp;
    for (const auto& n : ops) sp.ops.push_back(op_from_name(n.get<std::string>()));
    p.sub_policies.push_back(std::move(sp));
  }
  p.magnitudes = Matrix<double>(static_cast<int>(p.sub_policies.size()), dim);
  p.magnitudes.data = j.at("magnitudes").get<std::vector<double>>();
  if (p.magnitudes.data.size() != p.sub_policies.size() * static_cast<std::size_t>(dim))
    throw ConfigError("policy state: magnitude table has the wrong size");
  return p;
}

/// r(x~, x) = (1/L) sum_l ||mu_l(x~) - mu_l(x)||^2 for one item, with the
/// gradient w.r.t. the augmented-view means.
template <class T>
T feature_stat_distance(std::span<const std::vector<T>> aug_means, std::span<const std::vector<T>> clean_means,
                        std::vector<std::vector<T>>* d_aug = nullptr) {
  if (aug_means.size() != clean_means.size() || aug_means.empty()) throw ShapeError("regularizer: layer count mismatch");
  const T invL = T(1) / static_cast<T>(aug_means.size());
  T r = 0;
  if (d_aug) d_aug->assign(aug_means.size(), {});
  for (std::size_t l = 0; l < aug_means.size(); ++l) {
    if (aug_means[l].size() != clean_means[l].size()) throw ShapeError("regularizer: layer width mismatch");
    if (d_aug) (*d_aug)[l].resize(aug_means[l].size());
    for (std::size_t c = 0; c < aug_means[l].size(); ++c) {
      const T diff = aug_means[l][c] - clean_means[l][c];
      r += diff * diff;
      if (d_aug) (*d_aug)[l][c] = T(2) * invL * diff;
    }
  }
  return r * invL;
}

/// Policy loss of a batch of (image, sub-policy) pairs with magnitude gradients.
template <class T>
struct AugLossBatch {
  std::vector<double> loss;                        ///< L_aug per item
  std::vector<double> entropy;                     ///< teacher entropy on x~ per item
  std::vector<std::vector<double>> d_magnitudes;   ///< per item, length N
  std::vector<Image<T>> augmented;
};

/// Evaluates L_aug for item j = (images[j], sub-policy indices[j]). With the
/// teacher in running-statistics mode items are independent; in batch mode the
/// augmented and clean batches are normalized separately and a magnitude
/// gradient also picks up the item's effect on the others through the batch
/// statistics. Gradients flow only to the magnitudes; the teacher is never modified.
template <class T>
AugLossBatch<T> loss_aug_batch(const SplitModel<T>& teacher, std::span<const Image<T>> images,
                               std::span<const std::size_t> indices, const PolicyState& policy, double lambda1,
                               bool with_gradient = true, NormMode norm = NormMode::running_stats) {
  if (images.empty()) throw ShapeError("loss_aug: empty batch");
  if (images.size() != indices.size()) throw ShapeError("loss_aug: one sub-policy index per image required");
  const int B = static_cast<int>(images.size());
  AugLossBatch<T> out;
  std::vector<AugmentedView<T>> views;
  views.reserve(B);
  for (int j = 0; j < B; ++j) {
    if (with_gradient) views.push_back(policy.apply_with_tangents(images[j], indices[j]));
    else views.push_back({policy.apply(images[j], indices[j]), {}});
    out.augmented.push_back(views.back().image);
  }
  ForwardTrace<T> trace;
  auto aug = teacher.forward(stack<T>(out.augmented), norm, with_gradient ? &trace : nullptr);
  auto clean = teacher.forward(stack(images), norm);

  std::vector<T> neg_ent;
  auto ne = negative_entropy_rows(aug.probs, neg_ent);
  const int L = static_cast<int>(aug.block_means.size());
  Upstream<T> up;
  up.d_logits = softmax_backward(aug.probs, ne.d_probs);
  up.d_block_means.resize(L);
  for (int l = 0; l < L; ++l) up.d_block_means[l] = Matrix<T>(B, aug.block_means[l].cols);

  out.loss.resize(B);
  out.entropy.resize(B);
  for (int j = 0; j < B; ++j) {
    std::vector<std::vector<T>> am(L), cm(L), dm;
    for (int l = 0; l < L; ++l) {
      auto ra = aug.block_means[l].row(j);
      auto rc = clean.block_means[l].row(j);
      am[l].assign(ra.begin(), ra.end());
      cm[l].assign(rc.begin(), rc.end());
    }
    const T r = feature_stat_distance<T>(am, cm, &dm);
    out.loss[j] = static_cast<double>(neg_ent[j]) + lambda1 * static_cast<double>(r);
    out.entropy[j] = -static_cast<double>(neg_ent[j]);
    for (int l = 0; l < L; ++l)
      for (std::size_t c = 0; c < dm[l].size(); ++c)
        up.d_block_means[l](j, static_cast<int>(c)) = static_cast<T>(lambda1) * dm[l][c];
  }
  if (!with_gradient) return out;

  auto d_input = teacher.backward(trace, up, {}, true);
  out.d_magnitudes.resize(B);
  for (int j = 0; j < B; ++j) {
    const T* g = d_input->sample(j);
    for (const auto& tangent : views[j].d_magnitudes) {
      double dot = 0;
      for (std::size_t q = 0; q < tangent.size(); ++q) dot += static_cast<double>(g[q]) * tangent.data[q];
      out.d_magnitudes[j].push_back(dot);
    }
  }
  return out;
}

/// Single-image policy loss.
template <class T>
double loss_aug(const SplitModel<T>& teacher, const Image<T>& x, const PolicyState& policy, std::size_t index,
                double lambda1) {
  const std::size_t idx[1] = {index};
  return loss_aug_batch<T>(teacher, std::span<const Image<T>>(&x, 1), idx, policy, lambda1, false).loss[0];
}

/// Score-function estimate for one sampled index given its loss and magnitude gradient.
inline PolicyGradient score_function_estimate(const PolicyState& policy, std::size_t index, double loss,
                                              std::span<const double> d_magnitudes) {
  auto g = policy.zero_gradient();
  if (d_magnitudes.size() != static_cast<std::size_t>(policy.dim())) throw ShapeError("estimator: gradient width");
  for (int q = 0; q < policy.dim(); ++q) g.d_magnitudes(static_cast<int>(index), q) = d_magnitudes[q];
  g.d_probs[index] = loss / policy.probs[index];
  return g;
}

/// Exact gradient of E_{i~P}[L_aug(x, i)] by enumerating the search space.
inline PolicyGradient exact_expected_gradient(const PolicyState& policy, std::span<const double> losses,
                                              const Matrix<double>& d_magnitudes) {
  auto g = policy.zero_gradient();
  for (std::size_t i = 0; i < policy.size(); ++i) {
    g.d_probs[i] = losses[i];
    for (int q = 0; q < policy.dim(); ++q)
      g.d_magnitudes(static_cast<int>(i), q) = policy.probs[i] * d_magnitudes(static_cast<int>(i), q);
  }
  return g;
}

template <class T>
PolicyGradient estimate_gradient(const Image<T>& x, std::size_t index, const PolicyState& policy,
                                 const SplitModel<T>& teacher, double lambda1) {
  const std::size_t idx[1] = {index};
  auto res = loss_aug_batch<T>(teacher, std::span<const Image<T>>(&x, 1), idx, policy, lambda1, true);
  return score_function_estimate(policy, index, res.loss[0], res.d_magnitudes[0]);
}

template <class T>
struct PolicyUpdate {
  std::vector<Image<T>> augmented;
  std::vector<std::size_t> indices;
  std::vector<double> losses;
  std::vector<double> entropies;
};

/// Samples one sub-policy per image i.i.d. from P, returns the augmented views
/// (made with the pre-update magnitudes) and takes one step of size gamma / B
/// along the summed estimates.
template <class T>
PolicyUpdate<T> update_policy(PolicyState& policy, std::span<const Image<T>> batch, const SplitModel<T>& teacher,
                              double lambda1, Rng& rng, NormMode norm = NormMode::running_stats) {
  if (batch.empty()) throw ShapeError("update_policy: empty batch");
  PolicyUpdate<T> out;
  for (std::size_t j = 0; j < batch.size(); ++j) out.indices.push_back(policy.sample(rng));
  auto res = loss_aug_batch<T>(teacher, batch, out.indices, policy, lambda1, true, norm);
  auto total = policy.zero_gradient();
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto i = out.indices[j];
    ++policy.sample_counts[i];
    auto g = score_function_estimate(policy, i, res.loss[j], res.d_magnitudes[j]);
    total.d_probs[i] += g.d_probs[i];
    for (int q = 0; q < policy.dim(); ++q)
      total.d_magnitudes(static_cast<int>(i), q) += g.d_magnitudes(static_cast<int>(i), q);
  }
  for (double v : total.d_probs) require_finite<double>(std::span<const double>(&v, 1), "policy gradient");
  policy.apply_step(total, policy.gamma / static_cast<double>(batch.size()));
  out.augmented = std::move(res.augmented);
  out.losses = std::move(res.loss);
  out.entropies = std::move(res.entropy);
  return out;
}

}  // namespace tta

#endif  // TTA_ADV_AUGMENT_HPP
