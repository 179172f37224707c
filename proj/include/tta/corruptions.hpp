#ifndef TTA_CORRUPTIONS_HPP
#define TTA_CORRUPTIONS_HPP

// Desk-scale common corruptions with five severities each. Schedules
// approximate the usual benchmark tables at 32x32; they are not the released
// benchmark parameters.
//
//   gaussian_noise    sigma            .08  .12  .18  .26  .38
//   shot_noise        photons lambda   60   25   12   5    3
//   impulse_noise     s&p fraction     .03  .06  .09  .17  .27
//   defocus_blur      disk radius px   1.0  1.5  2.0  2.5  3.0
//   motion_blur       length px        3    5    7    9    11   (random angle)
//   snow              flake density    .02  .04  .06  .08  .10  (plus whitening)
//   contrast          scale            .40  .30  .20  .10  .05
//   brightness        HSV value shift  .1   .2   .3   .4   .5
//   pixelate          size factor      .85  .75  .65  .55  .45
//   jpeg_compression  quality          80   65   58   50   40
//
// Every image gets its own random stream derived from (seed, index), so a set
// is a deterministic function of (clean set, name, severity, seed).

#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <nlohmann/json.hpp>

#include "tta/adv_augment.hpp"
#include "tta/dataset.hpp"
#include "tta/rng.hpp"

namespace tta {

inline const std::array<std::string, 10>& corruption_names() {
  static const std::array<std::string, 10> names{"gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur",
                                                 "motion_blur",    "snow",       "contrast",      "brightness",
                                                 "pixelate",       "jpeg_compression"};
  return names;
}

struct CorruptionSpec {
  std::string name;
  int severity = 1;
  std::uint64_t seed = 0;

  void validate() const {
    bool known = false;
    for (const auto& n : corruption_names()) known = known || n == name;
    if (!known) {
      std::string list;
      for (const auto& n : corruption_names()) list += (list.empty() ? "" : ", ") + n;
      throw ConfigError("unknown corruption '" + name + "'; valid names: " + list);
    }
    if (severity < 1 || severity > 5) throw ConfigError("corruption severity must be 1..5, got " + std::to_string(severity));
  }

  [[nodiscard]] nlohmann::json to_json() const { return {{"name", name}, {"severity", severity}, {"seed", seed}}; }
};

inline double gaussian_noise_sigma(int severity) {
  static constexpr double s[5] = {0.08, 0.12, 0.18, 0.26, 0.38};
  return s[severity - 1];
}

namespace detail {

inline Image<float> convolve(const Image<float>& x, const std::vector<std::pair<int, int>>& offsets,
                             const std::vector<double>& weights) {
  Image<float> out(x.channels, x.height, x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        double s = 0;
        for (std::size_t q = 0; q < offsets.size(); ++q) {
          const int sy = std::clamp(y + offsets[q].first, 0, x.height - 1);
          const int sx = std::clamp(xx + offsets[q].second, 0, x.width - 1);
          s += weights[q] * x(c, sy, sx);
        }
        out(c, y, xx) = static_cast<float>(s);
      }
  return out;
}

inline Image<float> disk_blur(const Image<float>& x, double radius) {
  std::vector<std::pair<int, int>> off;
  std::vector<double> w;
  const int r = static_cast<int>(std::ceil(radius));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= radius * radius + 1e-9) {
        off.emplace_back(dy, dx);
        w.push_back(1.0);
      }
  for (auto& v : w) v /= static_cast<double>(off.size());
  return convolve(x, off, w);
}

inline Image<float> motion_blur(const Image<float>& x, int length, double angle) {
  std::vector<std::pair<int, int>> off;
  std::vector<double> w;
  for (int t = 0; t < length; ++t) {
    const double d = static_cast<double>(t) - (length - 1) / 2.0;
    off.emplace_back(static_cast<int>(std::lround(d * std::sin(angle))), static_cast<int>(std::lround(d * std::cos(angle))));
    w.push_back(1.0 / length);
  }
  return convolve(x, off, w);
}

inline Image<float> jpeg_roundtrip(const Image<float>& x, int quality) {
  struct ErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
  };
  auto on_error = [](j_common_ptr cinfo) { std::longjmp(reinterpret_cast<ErrorMgr*>(cinfo->err)->jump, 1); };

  std::vector<unsigned char> raw(static_cast<std::size_t>(x.height) * x.width * x.channels);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx)
      for (int c = 0; c < x.channels; ++c)
        raw[(static_cast<std::size_t>(y) * x.width + xx) * x.channels + c] = to_byte(x(c, y, xx));

  unsigned char* buf = nullptr;
  unsigned long size = 0;
  jpeg_compress_struct cinfo{};
  ErrorMgr err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buf);
    throw DataError("jpeg compression failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &size);
  cinfo.image_width = static_cast<JDIMENSION>(x.width);
  cinfo.image_height = static_cast<JDIMENSION>(x.height);
  cinfo.input_components = x.channels;
  cinfo.in_color_space = x.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.next_scanline) * x.width * x.channels;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  jpeg_decompress_struct dinfo{};
  ErrorMgr derr{};
  dinfo.err = jpeg_std_error(&derr.pub);
  derr.pub.error_exit = on_error;
  if (setjmp(derr.jump)) {
    jpeg_destroy_decompress(&dinfo);
    std::free(buf);
    throw DataError("jpeg decompression failed");
  }
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, buf, size);
  jpeg_read_header(&dinfo, TRUE);
  jpeg_start_decompress(&dinfo);
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW row = raw.data() + static_cast<std::size_t>(dinfo.output_scanline) * x.width * x.channels;
    jpeg_read_scanlines(&dinfo, &row, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  std::free(buf);

  Image<float> out(x.channels, x.height, x.width);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx)
      for (int c = 0; c < x.channels; ++c)
        out(c, y, xx) = static_cast<float>(raw[(static_cast<std::size_t>(y) * x.width + xx) * x.channels + c]) / 255.0f;
  return out;
}

// Area-weighted box downsampling to round(factor * size), then centre-aligned
// bilinear upsampling back to the input size.
inline Image<float> pixelate(const Image<float>& x, double factor) {
  const int h = std::max(1, static_cast<int>(std::lround(x.height * factor)));
  const int w = std::max(1, static_cast<int>(std::lround(x.width * factor)));
  auto weights = [](int src, int dst) {
    // weights[d][s]: share of source cell s inside destination cell d
    std::vector<std::vector<double>> wt(dst, std::vector<double>(src, 0.0));
    const double step = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
      const double lo = d * step, hi = (d + 1) * step;
      for (int q = static_cast<int>(std::floor(lo)); q < std::min(src, static_cast<int>(std::ceil(hi))); ++q)
        wt[d][q] = (std::min(hi, q + 1.0) - std::max(lo, static_cast<double>(q))) / step;
    }
    return wt;
  };
  const auto wy = weights(x.height, h), wx = weights(x.width, w);
  Image<float> small(x.channels, h, w);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0;
        for (int sy = 0; sy < x.height; ++sy) {
          if (wy[y][sy] == 0) continue;
          for (int sx = 0; sx < x.width; ++sx) acc += wy[y][sy] * wx[xx][sx] * x(c, sy, sx);
        }
        small(c, y, xx) = static_cast<float>(acc);
      }
  Image<float> out(x.channels, x.height, x.width);
  for (int y = 0; y < x.height; ++y) {
    const double sy = std::clamp((y + 0.5) * h / x.height - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int xx = 0; xx < x.width; ++xx) {
      const double sx = std::clamp((xx + 0.5) * w / x.width - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int c = 0; c < x.channels; ++c)
        out(c, y, xx) = static_cast<float>((1 - fy) * ((1 - fx) * small(c, y0, x0) + fx * small(c, y0, x1)) +
                                           fy * ((1 - fx) * small(c, y1, x0) + fx * small(c, y1, x1)));
    }
  }
  return out;
}

inline float luminance(const Image<float>& x, int y, int xx) {
  if (x.channels < 3) return x(0, y, xx);
  return 0.299f * x(0, y, xx) + 0.587f * x(1, y, xx) + 0.114f * x(2, y, xx);
}

}  // namespace detail

/// Corrupts one image in [0, 1]; the result is clamped to [0, 1].
inline Image<float> corrupt_image(const Image<float>& x, const CorruptionSpec& spec, Rng& rng) {
  const int s = spec.severity - 1;
  Image<float> out = x;
  const std::string& n = spec.name;
  if (n == "gaussian_noise") {
    const double sigma = gaussian_noise_sigma(spec.severity);
    for (auto& v : out.data) v = static_cast<float>(v + sigma * rng.normal());
  } else if (n == "shot_noise") {
    static constexpr double lam[5] = {60, 25, 12, 5, 3};
    for (auto& v : out.data) v = static_cast<float>(static_cast<double>(rng.poisson(v * lam[s])) / lam[s]);
  } else if (n == "impulse_noise") {
    static constexpr double amount[5] = {0.03, 0.06, 0.09, 0.17, 0.27};
    for (auto& v : out.data)
      if (rng.bernoulli(amount[s])) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
  } else if (n == "defocus_blur") {
    static constexpr double radius[5] = {1.0, 1.5, 2.0, 2.5, 3.0};
    out = detail::disk_blur(x, radius[s]);
  } else if (n == "motion_blur") {
    static constexpr int length[5] = {3, 5, 7, 9, 11};
    out = detail::motion_blur(x, length[s], rng.uniform(-std::numbers::pi / 4, std::numbers::pi / 4));
  } else if (n == "snow") {
    static constexpr double density[5] = {0.02, 0.04, 0.06, 0.08, 0.10};
    static constexpr double keep[5] = {0.9, 0.8, 0.7, 0.6, 0.5};
    static constexpr int streak[5] = {3, 3, 5, 5, 7};
    Image<float> flakes(1, x.height, x.width);
    for (auto& v : flakes.data) v = rng.bernoulli(density[s]) ? static_cast<float>(rng.uniform(0.6, 1.0)) : 0.0f;
    flakes = detail::motion_blur(flakes, streak[s], rng.uniform(-1.2, -0.4));
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        const float g = detail::luminance(x, y, xx) * 1.5f + 0.5f;
        for (int c = 0; c < x.channels; ++c) {
          const float v = x(c, y, xx);
          const float white = static_cast<float>(keep[s]) * v + static_cast<float>(1 - keep[s]) * std::max(v, g);
          out(c, y, xx) = white + 2.0f * flakes(0, y, xx);
        }
      }
  } else if (n == "contrast") {
    static constexpr double scale[5] = {0.4, 0.3, 0.2, 0.1, 0.05};
    double mean = 0;
    for (float v : x.data) mean += v;
    mean /= static_cast<double>(x.size());
    for (auto& v : out.data) v = static_cast<float>((v - mean) * scale[s] + mean);
  } else if (n == "brightness") {
    static constexpr double shift[5] = {0.1, 0.2, 0.3, 0.4, 0.5};
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        float v = 0;
        for (int c = 0; c < x.channels; ++c) v = std::max(v, x(c, y, xx));
        const float nv = std::min(1.0f, v + static_cast<float>(shift[s]));
        for (int c = 0; c < x.channels; ++c)
          out(c, y, xx) = v > 1e-6f ? x(c, y, xx) * nv / v : nv;  // HSV value shift keeps hue and saturation
      }
  } else if (n == "pixelate") {
    static constexpr double factor[5] = {0.85, 0.75, 0.65, 0.55, 0.45};
    out = detail::pixelate(x, factor[s]);
  } else if (n == "jpeg_compression") {
    static constexpr int quality[5] = {80, 65, 58, 50, 40};
    out = detail::jpeg_roundtrip(x, quality[s]);
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline std::string corruption_spec_hash(const CorruptionSpec& spec, const std::string& clean_digest) {
  nlohmann::json j = spec.to_json();
  j["clean_images_sha256"] = clean_digest;
  return sha256_hex(j.dump());
}

/// Corrupted copy of a clean set; the manifest records the spec and its hash.
inline Dataset build_corrupted_set(const Dataset& clean, const CorruptionSpec& spec, const std::string& clean_digest) {
  spec.validate();
  Dataset out = clean;
  out.manifest_extra = nlohmann::json::object();
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng rng = Rng::stream(spec.seed, i);
    out.images[i] = corrupt_image(clean.images[i], spec, rng);
    quantize_to_bytes(out.images[i]);
  }
  out.manifest_extra["corruption"] = spec.to_json();
  out.manifest_extra["clean_images_sha256"] = clean_digest;
  out.manifest_extra["spec_hash"] = corruption_spec_hash(spec, clean_digest);
  return out;
}

}  // namespace tta

#endif  // TTA_CORRUPTIONS_HPP
