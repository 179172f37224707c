#ifndef TTA_NN_HPP
#define TTA_NN_HPP

// Small convolutional classifier with hand-written backward passes.
//
// Architecture: L blocks of [conv3x3(pad 1) -> batchnorm -> relu -> avgpool2],
// then global average pooling (the encoder output, D = channels of the last
// block) and a linear classifier head producing K logits.
//
// All parameters and normalization buffers live in one flat ParamStore so that
// EMA updates, optimizers and checkpoints all work on contiguous spans.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tta/rng.hpp"
#include "tta/tensor.hpp"

namespace tta {

enum class ParamKind { trainable, frozen, buffer };

struct TensorEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
  ParamKind kind = ParamKind::trainable;
};

template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<int> shape, ParamKind kind) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    TensorEntry e{std::move(name), std::move(shape), values_.size(), count, kind};
    values_.resize(values_.size() + count, T(0));
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
  }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  const std::vector<TensorEntry>& entries() const { return entries_; }

  std::span<T> tensor(std::size_t id) { return {values_.data() + entries_[id].offset, entries_[id].count}; }
  std::span<const T> tensor(std::size_t id) const {
    return {values_.data() + entries_[id].offset, entries_[id].count};
  }
  const TensorEntry& entry(std::size_t id) const { return entries_[id]; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return std::nullopt;
  }

  void set_kind(std::size_t id, ParamKind kind) { entries_[id].kind = kind; }

 private:
  std::vector<T> values_;
  std::vector<TensorEntry> entries_;
};

struct ArchConfig {
  int in_channels = 3;
  int height = 32;
  int width = 32;
  std::vector<int> block_channels{16, 32, 32};
  int num_classes = 10;

  [[nodiscard]] int feature_dim() const { return block_channels.back(); }
  [[nodiscard]] int num_blocks() const { return static_cast<int>(block_channels.size()); }
  bool operator==(const ArchConfig&) const = default;
};

enum class NormMode {
  batch_stats,    ///< normalize with statistics of the current batch
  running_stats,  ///< normalize with stored running statistics (per-sample independent)
};

template <class T>
struct ForwardResult {
  Matrix<T> features;                 ///< B x D, encoder output z = g(x)
  Matrix<T> logits;                   ///< B x K
  Matrix<T> probs;                    ///< B x K, softmax(logits)
  std::vector<Matrix<T>> block_means; ///< per block, B x C_l channel means of the block output
};

template <class T>
struct BlockTrace {
  Tensor4<T> input;
  std::vector<T> cols;       // per-sample im2col buffers, concatenated
  Tensor4<T> xhat;           // normalized conv output
  std::vector<T> invstd;     // per channel
  Tensor4<T> bn_out;         // pre-activation
  Tensor4<T> output;         // post relu + pool
};

template <class T>
struct ForwardTrace {
  NormMode mode = NormMode::running_stats;
  std::vector<BlockTrace<T>> blocks;
  Matrix<T> features;
};

/// Gradients arriving from the losses. Any member may be empty (rows == 0).
template <class T>
struct Upstream {
  Matrix<T> d_logits;
  Matrix<T> d_features;
  std::vector<Matrix<T>> d_block_means;
};

template <class T>
void softmax_rows(const Matrix<T>& logits, Matrix<T>& probs) {
  probs = Matrix<T>(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    auto z = logits.row(i);
    auto p = probs.row(i);
    const T mx = *std::max_element(z.begin(), z.end());
    T sum = 0;
    for (int k = 0; k < logits.cols; ++k) {
      p[k] = std::exp(z[k] - mx);
      sum += p[k];
    }
    for (int k = 0; k < logits.cols; ++k) p[k] /= sum;
  }
}

/// Pulls a gradient w.r.t. probabilities back through the softmax.
template <class T>
Matrix<T> softmax_backward(const Matrix<T>& probs, const Matrix<T>& d_probs) {
  Matrix<T> d_logits(probs.rows, probs.cols);
  for (int i = 0; i < probs.rows; ++i) {
    T dot = 0;
    for (int k = 0; k < probs.cols; ++k) dot += probs(i, k) * d_probs(i, k);
    for (int k = 0; k < probs.cols; ++k) d_logits(i, k) = probs(i, k) * (d_probs(i, k) - dot);
  }
  return d_logits;
}

template <class T>
class SplitModel {
 public:
  using Scalar = T;
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  using MutMap = Eigen::Map<RowMat>;

  static constexpr T bn_eps = T(1e-5);
  static constexpr T bn_momentum = T(0.1);

  SplitModel() = default;

  explicit SplitModel(ArchConfig arch) : arch_(std::move(arch)) {
    if (arch_.block_channels.empty()) throw std::invalid_argument("architecture needs at least one block");
    int in = arch_.in_channels;
    int h = arch_.height, w = arch_.width;
    for (int l = 0; l < arch_.num_blocks(); ++l) {
      if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("spatial size must stay even through pooling");
      const int out = arch_.block_channels[l];
      const std::string p = "block" + std::to_string(l);
      Ids ids;
      ids.conv_w = store_.add(p + ".conv.weight", {out, in, 3, 3}, ParamKind::trainable);
      ids.conv_b = store_.add(p + ".conv.bias", {out}, ParamKind::trainable);
      ids.bn_w = store_.add(p + ".bn.weight", {out}, ParamKind::trainable);
      ids.bn_b = store_.add(p + ".bn.bias", {out}, ParamKind::trainable);
      ids.bn_mean = store_.add(p + ".bn.running_mean", {out}, ParamKind::buffer);
      ids.bn_var = store_.add(p + ".bn.running_var", {out}, ParamKind::buffer);
      blocks_.push_back(ids);
      in = out;
      h /= 2;
      w /= 2;
    }
    head_w_ = store_.add("head.weight", {arch_.num_classes, arch_.feature_dim()}, ParamKind::trainable);
    head_b_ = store_.add("head.bias", {arch_.num_classes}, ParamKind::trainable);
    for (const auto& b : blocks_) {
      std::ranges::fill(store_.tensor(b.bn_w), T(1));
      std::ranges::fill(store_.tensor(b.bn_var), T(1));
    }
  }

  /// He-normal conv weights, uniform head; biases zero.
  void initialize(Rng& rng) {
    for (const auto& b : blocks_) {
      auto w = store_.tensor(b.conv_w);
      const auto& shape = store_.entry(b.conv_w).shape;
      const double fan_in = static_cast<double>(shape[1]) * 9.0;
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : w) v = static_cast<T>(stddev * rng.normal());
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch_.feature_dim()));
    for (auto& v : store_.tensor(head_w_)) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  const ArchConfig& arch() const { return arch_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::span<T> param_vector() { return store_.values(); }
  std::span<const T> param_vector() const { return store_.values(); }

  void freeze_head() {
    store_.set_kind(head_w_, ParamKind::frozen);
    store_.set_kind(head_b_, ParamKind::frozen);
  }
  [[nodiscard]] bool head_frozen() const { return store_.entry(head_w_).kind == ParamKind::frozen; }

  /// Copy of the classifier head parameters (weight then bias).
  [[nodiscard]] std::vector<T> head_params() const {
    std::vector<T> out;
    auto w = store_.tensor(head_w_);
    auto b = store_.tensor(head_b_);
    out.insert(out.end(), w.begin(), w.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }

  /// Indices into param_vector() of entries matching a predicate on the entry.
  template <class Pred>
  std::vector<std::size_t> select(Pred pred) const {
    std::vector<std::size_t> idx;
    for (const auto& e : store_.entries())
      if (pred(e))
        for (std::size_t i = 0; i < e.count; ++i) idx.push_back(e.offset + i);
    return idx;
  }

  std::vector<std::size_t> trainable_indices() const {
    return select([](const TensorEntry& e) { return e.kind == ParamKind::trainable; });
  }

  /// Forward pass. With a trace the activations needed by backward() are kept.
  ForwardResult<T> forward(const Tensor4<T>& x, NormMode mode, bool update_running_stats = false,
                           ForwardTrace<T>* trace = nullptr) {
    return forward_impl(x, mode, update_running_stats, trace);
  }

  /// Const forward: running statistics are never touched.
  ForwardResult<T> forward(const Tensor4<T>& x, NormMode mode, ForwardTrace<T>* trace = nullptr) const {
    return const_cast<SplitModel*>(this)->forward_impl(x, mode, false, trace);
  }

  /// Backpropagates upstream gradients. Parameter gradients (same layout as
  /// param_vector()) are accumulated into `param_grad` when it is non-empty;
  /// frozen and buffer entries are left untouched. Returns d(loss)/d(input)
  /// when `want_input_grad` is set.
  std::optional<Tensor4<T>> backward(const ForwardTrace<T>& trace, const Upstream<T>& up, std::span<T> param_grad,
                                     bool want_input_grad) const {
    const int L = arch_.num_blocks();
    const int B = trace.features.rows;
    const int D = arch_.feature_dim();
    const int K = arch_.num_classes;
    const bool grads = !param_grad.empty();

    Matrix<T> d_feat(B, D, T(0));
    if (up.d_features.rows > 0) d_feat = up.d_features;
    if (up.d_logits.rows > 0) {
      auto W = store_.tensor(head_w_);
      for (int i = 0; i < B; ++i)
        for (int k = 0; k < K; ++k) {
          const T g = up.d_logits(i, k);
          if (g == T(0)) continue;
          for (int d = 0; d < D; ++d) d_feat(i, d) += g * W[static_cast<std::size_t>(k) * D + d];
        }
      if (grads && store_.entry(head_w_).kind == ParamKind::trainable) {
        auto gw = param_grad.subspan(store_.entry(head_w_).offset, store_.entry(head_w_).count);
        auto gb = param_grad.subspan(store_.entry(head_b_).offset, store_.entry(head_b_).count);
        for (int i = 0; i < B; ++i)
          for (int k = 0; k < K; ++k) {
            gb[k] += up.d_logits(i, k);
            for (int d = 0; d < D; ++d) gw[static_cast<std::size_t>(k) * D + d] += up.d_logits(i, k) * trace.features(i, d);
          }
      }
    }

    // global average pool
    const auto& last = trace.blocks.back().output;
    Tensor4<T> d_out(last.n, last.c, last.h, last.w);
    {
      const T inv = T(1) / static_cast<T>(last.plane());
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < last.c; ++c) {
          T* dst = d_out.sample(i) + c * last.plane();
          std::fill(dst, dst + last.plane(), d_feat(i, c) * inv);
        }
    }

    for (int l = L - 1; l >= 0; --l) {
      const auto& bt = trace.blocks[l];
      const auto& ids = blocks_[l];
      if (!up.d_block_means.empty() && up.d_block_means[l].rows > 0) {
        const T inv = T(1) / static_cast<T>(bt.output.plane());
        for (int i = 0; i < B; ++i)
          for (int c = 0; c < bt.output.c; ++c) {
            T* dst = d_out.sample(i) + c * bt.output.plane();
            const T g = up.d_block_means[l](i, c) * inv;
            for (std::size_t p = 0; p < bt.output.plane(); ++p) dst[p] += g;
          }
      }
      // avgpool + relu backward
      Tensor4<T> d_bn(bt.bn_out.n, bt.bn_out.c, bt.bn_out.h, bt.bn_out.w);
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < d_bn.c; ++c)
          for (int y = 0; y < d_bn.h; ++y)
            for (int x = 0; x < d_bn.w; ++x) {
              const T g = d_out.at(i, c, y / 2, x / 2) * T(0.25);
              d_bn.at(i, c, y, x) = bt.bn_out.at(i, c, y, x) > T(0) ? g : T(0);
            }
      // batchnorm backward
      const int C = d_bn.c;
      const std::size_t HW = d_bn.plane();
      auto gamma = store_.tensor(ids.bn_w);
      Tensor4<T> d_conv(d_bn.n, d_bn.c, d_bn.h, d_bn.w);
      for (int c = 0; c < C; ++c) {
        T sum_dy = 0, sum_dy_xhat = 0;
        for (int i = 0; i < B; ++i) {
          const T* dy = d_bn.sample(i) + c * HW;
          const T* xh = bt.xhat.sample(i) + c * HW;
          for (std::size_t p = 0; p < HW; ++p) {
            sum_dy += dy[p];
            sum_dy_xhat += dy[p] * xh[p];
          }
        }
        if (grads && store_.entry(ids.bn_w).kind == ParamKind::trainable) {
          param_grad[store_.entry(ids.bn_w).offset + c] += sum_dy_xhat;
          param_grad[store_.entry(ids.bn_b).offset + c] += sum_dy;
        }
        const T scale = gamma[c] * bt.invstd[c];
        const T m = static_cast<T>(static_cast<std::size_t>(B) * HW);
        for (int i = 0; i < B; ++i) {
          const T* dy = d_bn.sample(i) + c * HW;
          const T* xh = bt.xhat.sample(i) + c * HW;
          T* dx = d_conv.sample(i) + c * HW;
          if (trace.mode == NormMode::batch_stats) {
            for (std::size_t p = 0; p < HW; ++p) dx[p] = scale * (dy[p] - sum_dy / m - xh[p] * sum_dy_xhat / m);
          } else {
            for (std::size_t p = 0; p < HW; ++p) dx[p] = scale * dy[p];
          }
        }
      }
      // conv backward
      const auto& in = bt.input;
      const int Cin = in.c;
      const int H = in.h, W = in.w;
      const int Cout = d_conv.c;
      const std::size_t col_rows = static_cast<std::size_t>(Cin) * 9;
      ConstMap Wm(store_.tensor(ids.conv_w).data(), Cout, static_cast<Eigen::Index>(col_rows));
      const bool conv_grads = grads && store_.entry(ids.conv_w).kind == ParamKind::trainable;
      const bool need_dx = l > 0 || want_input_grad;
      Tensor4<T> d_in;
      if (need_dx) d_in = Tensor4<T>(in.n, in.c, in.h, in.w);
      RowMat dcol;
      for (int i = 0; i < B; ++i) {
        ConstMap dy(d_conv.sample(i), Cout, static_cast<Eigen::Index>(HW));
        ConstMap col(bt.cols.data() + static_cast<std::size_t>(i) * col_rows * HW, static_cast<Eigen::Index>(col_rows),
                     static_cast<Eigen::Index>(HW));
        if (conv_grads) {
          MutMap gw(param_grad.data() + store_.entry(ids.conv_w).offset, Cout, static_cast<Eigen::Index>(col_rows));
          gw.noalias() += dy * col.transpose();
          auto gb = param_grad.subspan(store_.entry(ids.conv_b).offset, Cout);
          // fixed summation order; Eigen's vectorized sum depends on alignment
          for (int c = 0; c < Cout; ++c) {
            const T* p = d_conv.sample(i) + c * HW;
            T s = 0;
            for (std::size_t q = 0; q < HW; ++q) s += p[q];
            gb[c] += s;
          }
        }
        if (need_dx) {
          dcol.noalias() = Wm.transpose() * dy;
          col2im(dcol.data(), Cin, H, W, d_in.sample(i));
        }
      }
      if (l > 0) d_out = std::move(d_in);
      else if (want_input_grad) return d_in;
    }
    return std::nullopt;
  }

  std::size_t block_param_id(int block, const std::string& field) const {
    const auto& b = blocks_.at(block);
    if (field == "conv.weight") return b.conv_w;
    if (field == "conv.bias") return b.conv_b;
    if (field == "bn.weight") return b.bn_w;
    if (field == "bn.bias") return b.bn_b;
    if (field == "bn.running_mean") return b.bn_mean;
    if (field == "bn.running_var") return b.bn_var;
    throw std::invalid_argument("unknown block field " + field);
  }
  std::size_t head_weight_id() const { return head_w_; }
  std::size_t head_bias_id() const { return head_b_; }

 private:
  struct Ids {
    std::size_t conv_w, conv_b, bn_w, bn_b, bn_mean, bn_var;
  };

  static void im2col(const T* img, int C, int H, int W, T* col) {
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T* row = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - 1;
            for (int x = 0; x < W; ++x) {
              const int sx = x + kx - 1;
              row[static_cast<std::size_t>(y) * W + x] =
                  (sy >= 0 && sy < H && sx >= 0 && sx < W) ? img[(static_cast<std::size_t>(c) * H + sy) * W + sx] : T(0);
            }
          }
        }
  }

  static void col2im(const T* col, int C, int H, int W, T* img) {
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T* row = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < W; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= W) continue;
              img[(static_cast<std::size_t>(c) * H + sy) * W + sx] += row[static_cast<std::size_t>(y) * W + x];
            }
          }
        }
  }

  ForwardResult<T> forward_impl(const Tensor4<T>& x, NormMode mode, bool update_running, ForwardTrace<T>* trace) {
    if (x.n <= 0) throw ShapeError("forward: empty batch");
    if (x.c != arch_.in_channels || x.h != arch_.height || x.w != arch_.width)
      throw ShapeError("forward: input shape does not match the architecture");
    const int B = x.n;
    ForwardResult<T> res;
    if (trace) {
      trace->mode = mode;
      trace->blocks.assign(arch_.num_blocks(), {});
    }
    Tensor4<T> cur = x;
    for (int l = 0; l < arch_.num_blocks(); ++l) {
      const auto& ids = blocks_[l];
      const std::string where = "block" + std::to_string(l);
      const int Cin = cur.c, H = cur.h, W = cur.w;
      const int Cout = arch_.block_channels[l];
      const std::size_t HW = static_cast<std::size_t>(H) * W;
      const std::size_t col_rows = static_cast<std::size_t>(Cin) * 9;

      Tensor4<T> conv(B, Cout, H, W);
      std::vector<T> cols(static_cast<std::size_t>(B) * col_rows * HW);
      ConstMap Wm(store_.tensor(ids.conv_w).data(), Cout, static_cast<Eigen::Index>(col_rows));
      auto bias = store_.tensor(ids.conv_b);
      for (int i = 0; i < B; ++i) {
        T* col = cols.data() + static_cast<std::size_t>(i) * col_rows * HW;
        im2col(cur.sample(i), Cin, H, W, col);
        ConstMap cm(col, static_cast<Eigen::Index>(col_rows), static_cast<Eigen::Index>(HW));
        MutMap out(conv.sample(i), Cout, static_cast<Eigen::Index>(HW));
        out.noalias() = Wm * cm;
        for (int c = 0; c < Cout; ++c) out.row(c).array() += bias[c];
      }
      require_finite<T>(conv.data, where + ".conv");

      // batchnorm
      auto gamma = store_.tensor(ids.bn_w);
      auto beta = store_.tensor(ids.bn_b);
      auto rmean = store_.tensor(ids.bn_mean);
      auto rvar = store_.tensor(ids.bn_var);
      Tensor4<T> xhat(B, Cout, H, W);
      Tensor4<T> bn(B, Cout, H, W);
      std::vector<T> invstd(Cout);
      const T count = static_cast<T>(static_cast<std::size_t>(B) * HW);
      for (int c = 0; c < Cout; ++c) {
        T mean, var;
        if (mode == NormMode::batch_stats) {
          T s = 0;
          for (int i = 0; i < B; ++i) {
            const T* p = conv.sample(i) + c * HW;
            for (std::size_t q = 0; q < HW; ++q) s += p[q];
          }
          mean = s / count;
          T ss = 0;
          for (int i = 0; i < B; ++i) {
            const T* p = conv.sample(i) + c * HW;
            for (std::size_t q = 0; q < HW; ++q) ss += (p[q] - mean) * (p[q] - mean);
          }
          var = ss / count;
          if (update_running) {
            const T unbiased = count > T(1) ? ss / (count - T(1)) : var;
            rmean[c] = (T(1) - bn_momentum) * rmean[c] + bn_momentum * mean;
            rvar[c] = (T(1) - bn_momentum) * rvar[c] + bn_momentum * unbiased;
          }
        } else {
          mean = rmean[c];
          var = rvar[c];
        }
        invstd[c] = T(1) / std::sqrt(var + bn_eps);
        for (int i = 0; i < B; ++i) {
          const T* p = conv.sample(i) + c * HW;
          T* xh = xhat.sample(i) + c * HW;
          T* o = bn.sample(i) + c * HW;
          for (std::size_t q = 0; q < HW; ++q) {
            xh[q] = (p[q] - mean) * invstd[c];
            o[q] = gamma[c] * xh[q] + beta[c];
          }
        }
      }
      require_finite<T>(bn.data, where + ".bn");

      // relu + 2x2 average pool
      Tensor4<T> pooled(B, Cout, H / 2, W / 2);
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < Cout; ++c)
          for (int y = 0; y < H / 2; ++y)
            for (int xx = 0; xx < W / 2; ++xx) {
              T s = 0;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) s += std::max(T(0), bn.at(i, c, 2 * y + dy, 2 * xx + dx));
              pooled.at(i, c, y, xx) = s * T(0.25);
            }

      Matrix<T> means(B, Cout);
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < Cout; ++c) {
          const T* p = pooled.sample(i) + c * pooled.plane();
          T s = 0;
          for (std::size_t q = 0; q < pooled.plane(); ++q) s += p[q];
          means(i, c) = s / static_cast<T>(pooled.plane());
        }
      res.block_means.push_back(std::move(means));

      if (trace) {
        auto& bt = trace->blocks[l];
        bt.input = std::move(cur);
        bt.cols = std::move(cols);
        bt.xhat = std::move(xhat);
        bt.invstd = std::move(invstd);
        bt.bn_out = std::move(bn);
        bt.output = pooled;
      }
      cur = std::move(pooled);
    }

    // the encoder output is the mean of the last block, already computed
    res.features = res.block_means.back();
    const int D = arch_.feature_dim(), K = arch_.num_classes;
    res.logits = Matrix<T>(B, K);
    auto Wh = store_.tensor(head_w_);
    auto bh = store_.tensor(head_b_);
    for (int i = 0; i < B; ++i)
      for (int k = 0; k < K; ++k) {
        T s = bh[k];
        for (int d = 0; d < D; ++d) s += Wh[static_cast<std::size_t>(k) * D + d] * res.features(i, d);
        res.logits(i, k) = s;
      }
    require_finite<T>(res.logits.data, "head");
    softmax_rows(res.logits, res.probs);
    if (trace) trace->features = res.features;
    return res;
  }

  ArchConfig arch_;
  ParamStore<T> store_;
  std::vector<Ids> blocks_;
  std::size_t head_w_ = 0;
  std::size_t head_b_ = 0;
};

/// Parameter-by-parameter copy between models of matching layout but possibly
/// different scalar types.
template <class Dst, class Src>
void copy_params(SplitModel<Dst>& dst, const SplitModel<Src>& src) {
  if (!(dst.arch() == src.arch())) throw ShapeError("copy_params: architecture mismatch");
  auto d = dst.param_vector();
  auto s = src.param_vector();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Dst>(s[i]);
}

}  // namespace tta

#endif  // TTA_NN_HPP
