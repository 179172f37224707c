#ifndef TTA_SYNTH_HPP
#define TTA_SYNTH_HPP

// Procedural 10-class image set used as a clean source domain when no real
// dataset is at hand. Each class is a shape drawn over a smooth two-tone
// background with random colour, position, scale and brightness.
//
//   0 disk   1 square   2 triangle   3 cross   4 ring
//   5 horizontal stripes   6 vertical stripes   7 checker   8 X   9 crescent

#include <array>
#include <cmath>
#include <numbers>

#include "tta/dataset.hpp"
#include "tta/rng.hpp"

namespace tta {

inline constexpr std::array<const char*, 10> kSynthClassNames{"disk",    "square",  "triangle", "cross", "ring",
                                                              "hstripes", "vstripes", "checker", "x",     "crescent"};

namespace detail {

// Shape membership in local coordinates u, v in [-1, 1] (already rotated and scaled).
inline bool synth_inside(int cls, double u, double v) {
  const double r = std::hypot(u, v);
  switch (cls) {
    case 0: return r <= 0.85;
    case 1: return std::abs(u) <= 0.72 && std::abs(v) <= 0.72;
    case 2: return v <= 0.7 && v >= -0.8 + 1.7 * std::abs(u) * 1.0 - 0.1 && std::abs(u) <= 0.9;
    case 3: return (std::abs(u) <= 0.25 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.25 && std::abs(u) <= 0.9);
    case 4: return r <= 0.9 && r >= 0.5;
    case 5: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85 && std::fmod(v + 2.0, 0.56) < 0.28;
    case 6: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85 && std::fmod(u + 2.0, 0.56) < 0.28;
    case 7:
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85 &&
             ((static_cast<int>(std::floor((u + 2.0) / 0.43)) + static_cast<int>(std::floor((v + 2.0) / 0.43))) % 2 == 0);
    case 8: return std::max(std::abs(u), std::abs(v)) <= 0.9 && (std::abs(u - v) <= 0.3 || std::abs(u + v) <= 0.3);
    case 9: return r <= 0.85 && std::hypot(u - 0.38, v) > 0.62;
    default: return false;
  }
}

}  // namespace detail

struct SynthOptions {
  int height = 32;
  int width = 32;
  double max_rotation = 0.35;  // radians; larger angles would confuse stripes and the cross
};

/// One image of class `cls`; pixels in [0, 1].
inline Image<float> synth_image(int cls, Rng& rng, const SynthOptions& o = {}) {
  Image<float> img(3, o.height, o.width);
  // background: a linear gradient between two dull colours plus low-frequency waves
  std::array<double, 3> bg0{}, bg1{}, fg{};
  for (auto& c : bg0) c = rng.uniform(0.1, 0.6);
  for (auto& c : bg1) c = rng.uniform(0.1, 0.6);
  const double gang = rng.uniform(0, 2 * std::numbers::pi);
  const double wf = rng.uniform(0.15, 0.45), wp = rng.uniform(0, 2 * std::numbers::pi), wa = rng.uniform(0.0, 0.08);
  // foreground contrasts with the background mean
  const double bg_lum = (bg0[0] + bg0[1] + bg0[2] + bg1[0] + bg1[1] + bg1[2]) / 6.0;
  const bool bright = rng.bernoulli(bg_lum < 0.35 ? 0.85 : 0.5);
  for (auto& c : fg) c = bright ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.25);
  const double brightness = rng.uniform(-0.1, 0.1);

  const double scale = rng.uniform(0.28, 0.42) * std::min(o.height, o.width);
  const double cx = o.width / 2.0 + rng.uniform(-0.15, 0.15) * o.width;
  const double cy = o.height / 2.0 + rng.uniform(-0.15, 0.15) * o.height;
  const double rot = rng.uniform(-o.max_rotation, o.max_rotation);
  const double cr = std::cos(rot), sr = std::sin(rot);
  constexpr int ss = 3;  // supersampling for soft edges

  for (int y = 0; y < o.height; ++y)
    for (int x = 0; x < o.width; ++x) {
      const double t = 0.5 + 0.5 * ((x / double(o.width) - 0.5) * std::cos(gang) + (y / double(o.height) - 0.5) * std::sin(gang)) * 1.4;
      const double wave = wa * std::sin(wf * (x + 0.7 * y) + wp);
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - cx, py = y + (sy + 0.5) / ss - cy;
          const double u = (cr * px + sr * py) / scale, v = (-sr * px + cr * py) / scale;
          hits += detail::synth_inside(cls, u, v) ? 1 : 0;
        }
      const double cover = hits / double(ss * ss);
      for (int c = 0; c < 3; ++c) {
        const double b = bg0[c] * (1 - t) + bg1[c] * t + wave;
        img(c, y, x) = static_cast<float>(std::clamp((1 - cover) * b + cover * fg[c] + brightness, 0.0, 1.0));
      }
    }
  return img;
}

/// Balanced set of `count` images (labels cycle 0..9), quantized to 8 bits.
inline Dataset make_synthetic_dataset(std::size_t count, std::uint64_t seed, const SynthOptions& o = {}) {
  Dataset ds;
  ds.height = o.height;
  ds.width = o.width;
  ds.channels = 3;
  ds.num_classes = 10;
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(i % 10);
    Rng rng = Rng::stream(seed, i);
    auto img = synth_image(cls, rng, o);
    quantize_to_bytes(img);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(cls);
  }
  ds.manifest_extra["generator"] = {{"kind", "synthetic-shapes"}, {"seed", seed}};
  return ds;
}

}  // namespace tta

#endif  // TTA_SYNTH_HPP
