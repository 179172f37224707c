#ifndef TTA_TEST_UTIL_HPP
#define TTA_TEST_UTIL_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "tta/nn.hpp"
#include "tta/rng.hpp"
#include "tta/tensor.hpp"

namespace tta::testing {

template <class T = double>
Image<T> random_image(Rng& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
  Image<T> img(c, h, w);
  for (auto& v : img.data) v = static_cast<T>(rng.uniform(lo, hi));
  return img;
}

/// Smooth, structured test image: blobs plus gradients, values kept inside (0.05, 0.95).
template <class T = double>
Image<T> smooth_image(Rng& rng, int c, int h, int w) {
  Image<T> img(c, h, w);
  const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0), ph = rng.uniform(0, 6.28);
  for (int ch = 0; ch < c; ++ch) {
    const double a = rng.uniform(0.2, 0.4);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = 0.5 + a * std::sin(fx * x * 6.28 / w + ph + ch) * std::cos(fy * y * 6.28 / h - ch);
        img(ch, y, x) = static_cast<T>(v);
      }
  }
  return img;
}

/// Dirichlet(1) draw via normalized exponentials.
inline std::vector<double> random_simplex(Rng& rng, int k) {
  std::vector<double> p(k);
  double s = 0;
  for (auto& v : p) {
    v = -std::log(std::max(rng.uniform(), 1e-300));
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

inline Matrix<double> random_simplex_rows(Rng& rng, int rows, int k) {
  Matrix<double> m(rows, k);
  for (int i = 0; i < rows; ++i) {
    auto p = random_simplex(rng, k);
    for (int j = 0; j < k; ++j) m(i, j) = p[j];
  }
  return m;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += std::max(a[i] * a[i], b[i] * b[i]);
  }
  return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

/// Central difference of f along every coordinate of x.
inline std::vector<double> central_difference(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                              double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline SplitModel<double> tiny_model(Rng& rng, int num_classes = 5, int size = 8) {
  ArchConfig a;
  a.in_channels = 3;
  a.height = size;
  a.width = size;
  a.block_channels = {4, 6};
  a.num_classes = num_classes;
  SplitModel<double> m(a);
  m.initialize(rng);
  // non-trivial normalization parameters
  for (int l = 0; l < a.num_blocks(); ++l) {
    for (auto& v : m.params().tensor(m.block_param_id(l, "bn.weight"))) v = rng.uniform(0.5, 1.5);
    for (auto& v : m.params().tensor(m.block_param_id(l, "bn.bias"))) v = rng.uniform(-0.2, 0.3);
    for (auto& v : m.params().tensor(m.block_param_id(l, "bn.running_mean"))) v = rng.uniform(-0.2, 0.2);
    for (auto& v : m.params().tensor(m.block_param_id(l, "bn.running_var"))) v = rng.uniform(0.5, 2.0);
    for (auto& v : m.params().tensor(m.block_param_id(l, "conv.bias"))) v = rng.uniform(-0.1, 0.1);
  }
  return m;
}

}  // namespace tta::testing

#endif  // TTA_TEST_UTIL_HPP
