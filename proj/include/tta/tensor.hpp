#ifndef TTA_TENSOR_HPP
#define TTA_TENSOR_HPP

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tta {

/// Thrown when an activation, loss, or gradient stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when tensors that must agree in shape do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A single image stored channel-major (C x H x W), values nominally in [0,1].
template <class T>
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Image() = default;
  Image(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  T& operator()(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  const T& operator()(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  [[nodiscard]] bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <class U>
  [[nodiscard]] Image<U> cast() const {
    Image<U> out(channels, height, width);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Image&) const = default;
};

/// Batch of feature maps in NCHW layout.
template <class T>
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  [[nodiscard]] std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }

  T& at(int i, int ch, int y, int x) { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
  const T& at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
};

/// Row-major dense matrix; rows are batch items.
template <class T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T(0)) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  bool operator==(const Matrix&) const = default;
};

template <class T>
Tensor4<T> stack(std::span<const Image<T>> images) {
  if (images.empty()) throw ShapeError("cannot stack an empty image batch");
  const auto& first = images.front();
  Tensor4<T> out(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw ShapeError("images in a batch must share one shape");
    std::copy(images[i].data.begin(), images[i].data.end(), out.sample(static_cast<int>(i)));
  }
  return out;
}

template <class T>
Image<T> unstack(const Tensor4<T>& t, int i) {
  Image<T> img(t.c, t.h, t.w);
  std::copy(t.sample(i), t.sample(i) + t.sample_size(), img.data.begin());
  return img;
}

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
void require_finite(std::span<const T> values, const std::string& where) {
  if (!all_finite(values)) throw NumericError("non-finite value in " + where);
}

}  // namespace tta

#endif  // TTA_TENSOR_HPP
