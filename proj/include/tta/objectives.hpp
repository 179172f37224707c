#ifndef TTA_OBJECTIVES_HPP
#define TTA_OBJECTIVES_HPP

// Self-learning losses over probability rows (B x K matrices, one row per image).
// Each loss returns its value together with the gradient w.r.t. the rows that
// carry gradient; pseudo-labels are always treated as constants.

#include <cmath>
#include <span>
#include <vector>

#include "tta/nn.hpp"
#include "tta/tensor.hpp"

namespace tta {

/// Floor applied to every probability that goes into a logarithm.
inline constexpr double kLogFloor = 1e-8;

template <class T>
T safe_log(T p) {
  return std::log(std::max(p, static_cast<T>(kLogFloor)));
}

template <class T>
struct LossGrad {
  T value = 0;
  Matrix<T> d_probs;  ///< gradient w.r.t. the probability rows that carry gradient
};

namespace detail {
template <class T>
void require_simplex_batch(const Matrix<T>& a, const char* what) {
  if (a.rows < 1) throw ShapeError(std::string(what) + ": empty batch");
}
template <class T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError(std::string(what) + ": prediction blocks differ in shape");
}
}  // namespace detail

/// Batch marginal (1/B) sum_i p_i.
template <class T>
std::vector<T> marginal(const Matrix<T>& probs) {
  std::vector<T> m(probs.cols, T(0));
  for (int i = 0; i < probs.rows; ++i)
    for (int k = 0; k < probs.cols; ++k) m[k] += probs(i, k);
  for (auto& v : m) v /= static_cast<T>(probs.rows);
  return m;
}

/// Flipped cross-entropy plus negative marginal entropy:
///   -(1/B) sum_i sum_k p_ik log yhat_ik + sum_k pbar_k log pbar_k.
template <class T>
LossGrad<T> loss_pl(const Matrix<T>& student_probs, const Matrix<T>& pseudo_labels) {
  detail::require_simplex_batch(student_probs, "loss_pl");
  detail::require_same_shape(student_probs, pseudo_labels, "loss_pl");
  const int B = student_probs.rows, K = student_probs.cols;
  const T invB = T(1) / static_cast<T>(B);
  LossGrad<T> out{T(0), Matrix<T>(B, K)};
  T fce = 0;
  for (int i = 0; i < B; ++i)
    for (int k = 0; k < K; ++k) {
      const T lq = safe_log(pseudo_labels(i, k));
      fce -= student_probs(i, k) * lq;
      out.d_probs(i, k) = -invB * lq;
    }
  fce *= invB;
  const auto pbar = marginal(student_probs);
  T neg_ent = 0;
  std::vector<T> d_pbar(K);
  for (int k = 0; k < K; ++k) {
    neg_ent += pbar[k] * safe_log(pbar[k]);
    d_pbar[k] = safe_log(pbar[k]) + (pbar[k] >= static_cast<T>(kLogFloor) ? T(1) : T(0));
  }
  for (int i = 0; i < B; ++i)
    for (int k = 0; k < K; ++k) out.d_probs(i, k) += invB * d_pbar[k];
  out.value = fce + neg_ent;
  return out;
}

/// KL(yhat || q) for one pair of rows.
template <class T>
T loss_kd(std::span<const T> student_probs_aug, std::span<const T> pseudo_label) {
  if (student_probs_aug.size() != pseudo_label.size()) throw ShapeError("loss_kd: length mismatch");
  T kl = 0;
  for (std::size_t k = 0; k < pseudo_label.size(); ++k)
    kl += pseudo_label[k] * (safe_log(pseudo_label[k]) - safe_log(student_probs_aug[k]));
  return kl;
}

/// Mean KL over the batch with gradient w.r.t. the augmented-view probabilities.
template <class T>
LossGrad<T> loss_kd_batch(const Matrix<T>& student_probs_aug, const Matrix<T>& pseudo_labels) {
  detail::require_simplex_batch(student_probs_aug, "loss_kd");
  detail::require_same_shape(student_probs_aug, pseudo_labels, "loss_kd");
  const int B = student_probs_aug.rows, K = student_probs_aug.cols;
  const T invB = T(1) / static_cast<T>(B);
  LossGrad<T> out{T(0), Matrix<T>(B, K)};
  for (int i = 0; i < B; ++i) {
    out.value += loss_kd<T>(student_probs_aug.row(i), pseudo_labels.row(i));
    for (int k = 0; k < K; ++k) {
      const T q = student_probs_aug(i, k);
      out.d_probs(i, k) = q >= static_cast<T>(kLogFloor) ? -invB * pseudo_labels(i, k) / q : T(0);
    }
  }
  out.value *= invB;
  return out;
}

template <class T>
struct BatchPredictions {
  Matrix<T> student_probs;      ///< f_s(x_i)
  Matrix<T> pseudo_labels;      ///< yhat_i
  Matrix<T> student_probs_aug;  ///< f_s(x~_i)
};

template <class T>
struct TotalLoss {
  T value = 0;
  T pl = 0;
  T kd = 0;
  Matrix<T> d_student_probs;
  Matrix<T> d_student_probs_aug;
};

/// L_pl + (lambda2 / B) sum_i KL(yhat_i || f_s(x~_i)).
template <class T>
TotalLoss<T> loss_tesla(const BatchPredictions<T>& batch, T lambda2) {
  detail::require_same_shape(batch.student_probs, batch.pseudo_labels, "loss_tesla");
  detail::require_same_shape(batch.student_probs, batch.student_probs_aug, "loss_tesla");
  auto pl = loss_pl(batch.student_probs, batch.pseudo_labels);
  auto kd = loss_kd_batch(batch.student_probs_aug, batch.pseudo_labels);
  TotalLoss<T> out;
  out.pl = pl.value;
  out.kd = kd.value;
  out.value = pl.value + lambda2 * kd.value;
  out.d_student_probs = std::move(pl.d_probs);
  out.d_student_probs_aug = std::move(kd.d_probs);
  for (auto& g : out.d_student_probs_aug.data) g *= lambda2;
  return out;
}

/// Per-row sum_k p_k log p_k (negative entropy) with gradient per row.
template <class T>
LossGrad<T> negative_entropy_rows(const Matrix<T>& probs, std::vector<T>& per_row) {
  LossGrad<T> out{T(0), Matrix<T>(probs.rows, probs.cols)};
  per_row.assign(probs.rows, T(0));
  for (int i = 0; i < probs.rows; ++i) {
    for (int k = 0; k < probs.cols; ++k) {
      const T p = probs(i, k);
      per_row[i] += p * safe_log(p);
      out.d_probs(i, k) = safe_log(p) + (p >= static_cast<T>(kLogFloor) ? T(1) : T(0));
    }
    out.value += per_row[i];
  }
  return out;
}

/// Mean Shannon entropy of the rows; gradient scaled for the mean.
template <class T>
LossGrad<T> mean_entropy(const Matrix<T>& probs) {
  detail::require_simplex_batch(probs, "mean_entropy");
  std::vector<T> rows;
  auto ne = negative_entropy_rows(probs, rows);
  const T invB = T(1) / static_cast<T>(probs.rows);
  LossGrad<T> out{-ne.value * invB, std::move(ne.d_probs)};
  for (auto& g : out.d_probs.data) g *= -invB;
  return out;
}

/// Cross-entropy against hard labels, mean over the batch.
template <class T>
LossGrad<T> cross_entropy_hard(const Matrix<T>& probs, std::span<const int> labels) {
  detail::require_simplex_batch(probs, "cross_entropy");
  if (labels.size() != static_cast<std::size_t>(probs.rows)) throw ShapeError("cross_entropy: label count mismatch");
  const T invB = T(1) / static_cast<T>(probs.rows);
  LossGrad<T> out{T(0), Matrix<T>(probs.rows, probs.cols)};
  for (int i = 0; i < probs.rows; ++i) {
    const T p = probs(i, labels[i]);
    out.value -= safe_log(p) * invB;
    out.d_probs(i, labels[i]) = p >= static_cast<T>(kLogFloor) ? -invB / p : T(0);
  }
  return out;
}

/// Terms of the mutual-information decomposition of the flipped cross-entropy,
/// each evaluated directly from its definition over a finite X.
struct MiTerms {
  double flipped_ce = 0;       ///< H(Y; Yhat | X)
  double marginal_entropy = 0; ///< H(Y)
  double mutual_info = 0;      ///< I(Y; X)
  double conditional_kl = 0;   ///< D_KL(Y || Yhat | X)
  [[nodiscard]] double lhs() const { return flipped_ce - marginal_entropy; }
  [[nodiscard]] double rhs() const { return -mutual_info + conditional_kl; }
  [[nodiscard]] double residual() const { return std::abs(lhs() - rhs()); }
};

/// Evaluates both sides of  H(Y;Yhat|X) - H(Y) = -I(Y;X) + D_KL(Y||Yhat|X)
/// for rows p(Y|x) and p(Yhat|x). X is uniform unless weights are given.
/// Zero-probability terms follow the 0 log 0 = 0 convention; no flooring.
inline MiTerms mi_identity_terms(const Matrix<double>& p_y_given_x, const Matrix<double>& p_yhat_given_x,
                                 std::span<const double> x_weights = {}) {
  detail::require_same_shape(p_y_given_x, p_yhat_given_x, "mi_identity");
  const int nx = p_y_given_x.rows, K = p_y_given_x.cols;
  std::vector<double> px(nx, 1.0 / nx);
  if (!x_weights.empty()) {
    if (x_weights.size() != static_cast<std::size_t>(nx)) throw ShapeError("mi_identity: weight count mismatch");
    double s = 0;
    for (double w : x_weights) s += w;
    for (int i = 0; i < nx; ++i) px[i] = x_weights[i] / s;
  }
  MiTerms t;
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < K; ++k) {
      const double p = p_y_given_x(i, k);
      if (p > 0) t.flipped_ce -= px[i] * p * std::log(p_yhat_given_x(i, k));
    }
  std::vector<double> py(K, 0.0);
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < K; ++k) py[k] += px[i] * p_y_given_x(i, k);
  for (int k = 0; k < K; ++k)
    if (py[k] > 0) t.marginal_entropy -= py[k] * std::log(py[k]);
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < K; ++k) {
      const double joint = px[i] * p_y_given_x(i, k);
      if (joint > 0) t.mutual_info += joint * std::log(joint / (px[i] * py[k]));
    }
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < K; ++k) {
      const double p = p_y_given_x(i, k);
      if (p > 0) t.conditional_kl += px[i] * p * std::log(p / p_yhat_given_x(i, k));
    }
  return t;
}

inline double verify_mi_identity(const Matrix<double>& p_y_given_x, const Matrix<double>& p_yhat_given_x,
                                 std::span<const double> x_weights = {}) {
  return mi_identity_terms(p_y_given_x, p_yhat_given_x, x_weights).residual();
}

}  // namespace tta

#endif  // TTA_OBJECTIVES_HPP
