#ifndef TTA_TRANSFORMS_HPP
#define TTA_TRANSFORMS_HPP

// Image operations of the augmentation search space, each parameterized by a
// magnitude m in [0, 1], with forward-mode derivatives.
//
// For every op we provide the output, d(output)/dm, and the Jacobian-vector
// product w.r.t. the input image, so the tangent of an earlier op's magnitude
// can be pushed through later ops of a sub-policy. Outputs are clamped to
// [0, 1]; tangents are zeroed where the clamp is active.
//
// Magnitude maps (m = 0.5 is the identity unless noted; f = 0.1 + 1.8 m):
//
//   AutoContrast  per-channel min/max stretch           no magnitude, straight-through
//   Equalize      per-channel 256-bin histogram eq.      no magnitude, straight-through
//   Invert        1 - x                                  no magnitude, straight-through
//   Posterize     keep 8 - floor(4 m) bits (m < .25: id) straight-through
//   Solarize      x + s((x - t) / 0.005) (1 - 2x),       identity at m = 0
//                 t = 1.1 - 1.2 m, s = logistic
//   Contrast      mu + f (x - mu), mu = image gray mean
//   Brightness    f x
//   Color         g + f (x - g), g = pixel luminance
//   Sharpness     b + f (x - b), b = 3x3 smooth (border kept)
//   ShearX/Y      shear factor 0.3 (2m - 1), about the center
//   TranslateX/Y  shift 0.3 (2m - 1) of the image extent
//   Rotate        (2m - 1) 30 degrees about the center
//
// Geometric ops resample bilinearly with zero fill. Straight-through ops use
// d(output)/dm = 1 per pixel; their input Jacobian is the identity except
// Invert (-1) and AutoContrast (1 / (max - min)).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

enum class OpKind {
  AutoContrast,
  Equalize,
  Invert,
  Solarize,
  Posterize,
  Contrast,
  Brightness,
  Color,
  ShearX,
  ShearY,
  TranslateX,
  TranslateY,
  Rotate,
  Sharpness,
};

struct OpInfo {
  OpKind kind;
  std::string_view name;
  bool differentiable;
  double identity_magnitude;  ///< NaN when the op has no identity setting
};

inline constexpr double kNoIdentity = std::numeric_limits<double>::quiet_NaN();

/// Canonical registry order; sub-policies list their ops in this order.
inline constexpr std::array<OpInfo, 14> kOpRegistry{{
    {OpKind::AutoContrast, "AutoContrast", false, kNoIdentity},
    {OpKind::Equalize, "Equalize", false, kNoIdentity},
    {OpKind::Invert, "Invert", false, kNoIdentity},
    {OpKind::Solarize, "Solarize", true, 0.0},
    {OpKind::Posterize, "Posterize", false, 0.0},
    {OpKind::Contrast, "Contrast", true, 0.5},
    {OpKind::Brightness, "Brightness", true, 0.5},
    {OpKind::Color, "Color", true, 0.5},
    {OpKind::ShearX, "ShearX", true, 0.5},
    {OpKind::ShearY, "ShearY", true, 0.5},
    {OpKind::TranslateX, "TranslateX", true, 0.5},
    {OpKind::TranslateY, "TranslateY", true, 0.5},
    {OpKind::Rotate, "Rotate", true, 0.5},
    {OpKind::Sharpness, "Sharpness", true, 0.5},
}};

inline const OpInfo& op_info(OpKind k) { return kOpRegistry[static_cast<std::size_t>(k)]; }
inline std::string_view op_name(OpKind k) { return op_info(k).name; }

inline constexpr double kShearRange = 0.3;
inline constexpr double kTranslateRange = 0.3;
inline constexpr double kRotateDegrees = 30.0;
inline constexpr double kSolarizeTemperature = 0.005;

template <class T>
T enhance_factor(T m) {
  return T(0.1) + T(1.8) * m;
}

template <class T>
struct OpOutput {
  Image<T> image;
  Image<T> d_magnitude;
};

namespace detail {

template <class T>
T logistic(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

/// Luminance plane replicated on all channels (single-channel images pass through).
template <class T>
Image<T> grayscale(const Image<T>& x) {
  Image<T> g(x.channels, x.height, x.width);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx) {
      T v = x.channels >= 3 ? T(0.299) * x(0, y, xx) + T(0.587) * x(1, y, xx) + T(0.114) * x(2, y, xx) : x(0, y, xx);
      for (int c = 0; c < x.channels; ++c) g(c, y, xx) = v;
    }
  return g;
}

template <class T>
T gray_mean(const Image<T>& x) {
  const auto g = grayscale(x);
  T s = 0;
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx) s += g(0, y, xx);
  return s / static_cast<T>(x.plane());
}

template <class T>
Image<T> smooth(const Image<T>& x) {
  Image<T> b = x;
  for (int c = 0; c < x.channels; ++c)
    for (int y = 1; y + 1 < x.height; ++y)
      for (int xx = 1; xx + 1 < x.width; ++xx) {
        T s = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) s += x(c, y + dy, xx + dx);
        s += T(4) * x(c, y, xx);
        b(c, y, xx) = s / T(13);
      }
  return b;
}

/// Combination a*x + (1-a)*base, elementwise.
template <class T>
Image<T> blend(const Image<T>& base, const Image<T>& x, T a) {
  Image<T> out(x.channels, x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = base.data[i] + a * (x.data[i] - base.data[i]);
  return out;
}

struct SamplePoint {
  double sx, sy;    // source coordinate
  double dsx, dsy;  // derivative of the source coordinate w.r.t. magnitude
};

template <class T, class Map>
OpOutput<T> resample(const Image<T>& x, Map map) {
  OpOutput<T> out{Image<T>(x.channels, x.height, x.width), Image<T>(x.channels, x.height, x.width)};
  auto pix = [&](int c, int yy, int xx) -> T {
    return (xx >= 0 && xx < x.width && yy >= 0 && yy < x.height) ? x(c, yy, xx) : T(0);
  };
  for (int oy = 0; oy < x.height; ++oy)
    for (int ox = 0; ox < x.width; ++ox) {
      const SamplePoint sp = map(ox, oy);
      const int x0 = static_cast<int>(std::floor(sp.sx));
      const int y0 = static_cast<int>(std::floor(sp.sy));
      const T fx = static_cast<T>(sp.sx - x0);
      const T fy = static_cast<T>(sp.sy - y0);
      for (int c = 0; c < x.channels; ++c) {
        const T p00 = pix(c, y0, x0), p10 = pix(c, y0, x0 + 1), p01 = pix(c, y0 + 1, x0), p11 = pix(c, y0 + 1, x0 + 1);
        out.image(c, oy, ox) = (1 - fx) * (1 - fy) * p00 + fx * (1 - fy) * p10 + (1 - fx) * fy * p01 + fx * fy * p11;
        const T dvx = (1 - fy) * (p10 - p00) + fy * (p11 - p01);
        const T dvy = (1 - fx) * (p01 - p00) + fx * (p11 - p10);
        out.d_magnitude(c, oy, ox) = dvx * static_cast<T>(sp.dsx) + dvy * static_cast<T>(sp.dsy);
      }
    }
  return out;
}

/// Source-coordinate map of a geometric op at magnitude m.
inline auto geometric_map(OpKind k, double m, int height, int width) {
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  return [=](int ox, int oy) -> SamplePoint {
    const double dx = ox - cx, dy = oy - cy;
    switch (k) {
      case OpKind::ShearX: {
        const double s = kShearRange * (2 * m - 1);
        return {ox + s * dy, double(oy), 2 * kShearRange * dy, 0.0};
      }
      case OpKind::ShearY: {
        const double s = kShearRange * (2 * m - 1);
        return {double(ox), oy + s * dx, 0.0, 2 * kShearRange * dx};
      }
      case OpKind::TranslateX: {
        const double t = kTranslateRange * width * (2 * m - 1);
        return {ox - t, double(oy), -2 * kTranslateRange * width, 0.0};
      }
      case OpKind::TranslateY: {
        const double t = kTranslateRange * height * (2 * m - 1);
        return {double(ox), oy - t, 0.0, -2 * kTranslateRange * height};
      }
      case OpKind::Rotate: {
        const double scale = kRotateDegrees * std::numbers::pi / 180.0;
        const double th = (2 * m - 1) * scale;
        const double c = std::cos(th), s = std::sin(th);
        const double dth = 2 * scale;
        return {cx + c * dx + s * dy, cy - s * dx + c * dy, (-s * dx + c * dy) * dth, (-c * dx - s * dy) * dth};
      }
      default: return {double(ox), double(oy), 0.0, 0.0};
    }
  };
}

inline bool is_geometric(OpKind k) {
  return k == OpKind::ShearX || k == OpKind::ShearY || k == OpKind::TranslateX || k == OpKind::TranslateY ||
         k == OpKind::Rotate;
}

template <class T>
int quantize(T v) {
  return std::clamp(static_cast<int>(std::lround(static_cast<double>(v) * 255.0)), 0, 255);
}

template <class T>
Image<T> equalize(const Image<T>& x) {
  Image<T> out = x;
  for (int c = 0; c < x.channels; ++c) {
    std::array<long, 256> hist{};
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) ++hist[quantize(x(c, y, xx))];
    long last = 0;
    for (int i = 255; i >= 0; --i)
      if (hist[i] > 0) {
        last = hist[i];
        break;
      }
    long total = 0;
    for (long h : hist) total += h;
    const long step = (total - last) / 255;
    if (step == 0) continue;
    std::array<int, 256> lut{};
    long n = step / 2;
    for (int i = 0; i < 256; ++i) {
      lut[i] = static_cast<int>(std::min(255L, n / step));
      n += hist[i];
    }
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) out(c, y, xx) = static_cast<T>(lut[quantize(x(c, y, xx))]) / T(255);
  }
  return out;
}

template <class T>
std::vector<std::pair<T, T>> channel_range(const Image<T>& x) {
  std::vector<std::pair<T, T>> r(x.channels);
  for (int c = 0; c < x.channels; ++c) {
    const auto* p = x.data.data() + c * x.plane();
    auto [lo, hi] = std::minmax_element(p, p + x.plane());
    r[c] = {*lo, *hi};
  }
  return r;
}

inline int posterize_shift(double m) { return std::clamp(static_cast<int>(std::floor(4.0 * m)), 0, 4); }

}  // namespace detail

/// Unclamped output of an op and its magnitude derivative.
template <class T>
OpOutput<T> op_forward_raw(OpKind k, const Image<T>& x, T m) {
  const T f = enhance_factor(m);
  OpOutput<T> out;
  auto ones = [&] { return Image<T>(x.channels, x.height, x.width, T(1)); };
  switch (k) {
    case OpKind::AutoContrast: {
      out.image = x;
      const auto r = detail::channel_range(x);
      for (int c = 0; c < x.channels; ++c) {
        const T span = r[c].second - r[c].first;
        if (span <= T(1e-12)) continue;
        T* p = out.image.data.data() + c * x.plane();
        for (std::size_t i = 0; i < x.plane(); ++i) p[i] = (p[i] - r[c].first) / span;
      }
      out.d_magnitude = ones();
      break;
    }
    case OpKind::Equalize:
      out.image = detail::equalize(x);
      out.d_magnitude = ones();
      break;
    case OpKind::Invert:
      out.image = x;
      for (auto& v : out.image.data) v = T(1) - v;
      out.d_magnitude = ones();
      break;
    case OpKind::Posterize: {
      out.image = x;
      const int s = detail::posterize_shift(static_cast<double>(m));
      if (s > 0)
        for (auto& v : out.image.data) v = static_cast<T>((detail::quantize(v) >> s) << s) / T(255);
      out.d_magnitude = ones();
      break;
    }
    case OpKind::Solarize: {
      const T tau = static_cast<T>(kSolarizeTemperature);
      const T t = T(1.1) - T(1.2) * m;
      out.image = Image<T>(x.channels, x.height, x.width);
      out.d_magnitude = Image<T>(x.channels, x.height, x.width);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x.data[i];
        const T s = detail::logistic((v - t) / tau);
        out.image.data[i] = v + s * (T(1) - T(2) * v);
        out.d_magnitude.data[i] = s * (T(1) - s) * (T(1.2) / tau) * (T(1) - T(2) * v);
      }
      break;
    }
    case OpKind::Contrast: {
      const T mu = detail::gray_mean(x);
      out.image = Image<T>(x.channels, x.height, x.width);
      out.d_magnitude = Image<T>(x.channels, x.height, x.width);
      for (std::size_t i = 0; i < x.size(); ++i) {
        out.image.data[i] = mu + f * (x.data[i] - mu);
        out.d_magnitude.data[i] = T(1.8) * (x.data[i] - mu);
      }
      break;
    }
    case OpKind::Brightness:
      out.image = x;
      out.d_magnitude = x;
      for (auto& v : out.image.data) v *= f;
      for (auto& v : out.d_magnitude.data) v *= T(1.8);
      break;
    case OpKind::Color:
    case OpKind::Sharpness: {
      const Image<T> base = k == OpKind::Color ? detail::grayscale(x) : detail::smooth(x);
      out.image = detail::blend(base, x, f);
      out.d_magnitude = Image<T>(x.channels, x.height, x.width);
      for (std::size_t i = 0; i < x.size(); ++i) out.d_magnitude.data[i] = T(1.8) * (x.data[i] - base.data[i]);
      break;
    }
    case OpKind::ShearX:
    case OpKind::ShearY:
    case OpKind::TranslateX:
    case OpKind::TranslateY:
    case OpKind::Rotate:
      out = detail::resample(x, detail::geometric_map(k, static_cast<double>(m), x.height, x.width));
      break;
  }
  return out;
}

/// Jacobian-vector product of the (unclamped) op w.r.t. its input image.
template <class T>
Image<T> op_input_jvp(OpKind k, const Image<T>& x, T m, const Image<T>& dx) {
  const T f = enhance_factor(m);
  switch (k) {
    case OpKind::Equalize:
    case OpKind::Posterize:
      return dx;
    case OpKind::Invert: {
      Image<T> out = dx;
      for (auto& v : out.data) v = -v;
      return out;
    }
    case OpKind::AutoContrast: {
      Image<T> out = dx;
      const auto r = detail::channel_range(x);
      for (int c = 0; c < x.channels; ++c) {
        const T span = r[c].second - r[c].first;
        if (span <= T(1e-12)) continue;
        T* p = out.data.data() + c * x.plane();
        for (std::size_t i = 0; i < x.plane(); ++i) p[i] /= span;
      }
      return out;
    }
    case OpKind::Solarize: {
      const T tau = static_cast<T>(kSolarizeTemperature);
      const T t = T(1.1) - T(1.2) * m;
      Image<T> out(dx.channels, dx.height, dx.width);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T v = x.data[i];
        const T s = detail::logistic((v - t) / tau);
        out.data[i] = dx.data[i] * (T(1) + s * (T(1) - s) / tau * (T(1) - T(2) * v) - T(2) * s);
      }
      return out;
    }
    case OpKind::Contrast: {
      const T dmu = detail::gray_mean(dx);
      Image<T> out(dx.channels, dx.height, dx.width);
      for (std::size_t i = 0; i < dx.size(); ++i) out.data[i] = dmu + f * (dx.data[i] - dmu);
      return out;
    }
    case OpKind::Brightness: {
      Image<T> out = dx;
      for (auto& v : out.data) v *= f;
      return out;
    }
    case OpKind::Color: return detail::blend(detail::grayscale(dx), dx, f);
    case OpKind::Sharpness: return detail::blend(detail::smooth(dx), dx, f);
    case OpKind::ShearX:
    case OpKind::ShearY:
    case OpKind::TranslateX:
    case OpKind::TranslateY:
    case OpKind::Rotate:
      return detail::resample(dx, detail::geometric_map(k, static_cast<double>(m), x.height, x.width)).image;
  }
  return dx;
}

/// Clamped op output with its magnitude derivative.
template <class T>
OpOutput<T> apply_op(OpKind k, const Image<T>& x, T m) {
  auto out = op_forward_raw(k, x, m);
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    T& v = out.image.data[i];
    if (v < T(0) || v > T(1)) {
      v = std::clamp(v, T(0), T(1));
      if (op_info(k).differentiable) out.d_magnitude.data[i] = T(0);
    }
  }
  return out;
}

/// An augmented image and d(image)/d(m_i) for every magnitude of the sub-policy.
template <class T>
struct AugmentedView {
  Image<T> image;
  std::vector<Image<T>> d_magnitudes;
};

/// Applies ops in order, propagating magnitude tangents. Deterministic.
template <class T>
AugmentedView<T> apply_ops_with_tangents(const Image<T>& x, std::span<const OpKind> ops, std::span<const T> mags) {
  if (ops.size() != mags.size()) throw ShapeError("sub-policy: one magnitude per op required");
  AugmentedView<T> v{x, {}};
  for (std::size_t j = 0; j < ops.size(); ++j) {
    auto raw = op_forward_raw(ops[j], v.image, mags[j]);
    for (auto& t : v.d_magnitudes) t = op_input_jvp(ops[j], v.image, mags[j], t);
    v.d_magnitudes.push_back(std::move(raw.d_magnitude));
    for (std::size_t i = 0; i < raw.image.size(); ++i) {
      T& val = raw.image.data[i];
      if (val < T(0) || val > T(1)) {
        val = std::clamp(val, T(0), T(1));
        for (std::size_t q = 0; q < v.d_magnitudes.size(); ++q) {
          // straight-through unit gradients of non-differentiable ops survive the clamp
          if (q == j && !op_info(ops[j]).differentiable) continue;
          v.d_magnitudes[q].data[i] = T(0);
        }
      }
    }
    v.image = std::move(raw.image);
  }
  return v;
}

template <class T>
Image<T> apply_ops(const Image<T>& x, std::span<const OpKind> ops, std::span<const T> mags) {
  if (ops.size() != mags.size()) throw ShapeError("sub-policy: one magnitude per op required");
  Image<T> cur = x;
  for (std::size_t j = 0; j < ops.size(); ++j) cur = apply_op(ops[j], cur, mags[j]).image;
  return cur;
}

}  // namespace tta

#endif  // TTA_TRANSFORMS_HPP
