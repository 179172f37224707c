#ifndef TTA_DATASET_HPP
#define TTA_DATASET_HPP

// On-disk image sets.
//
// A dataset directory holds
//   images.bin     N images, uint8, HWC order, row-major, concatenated
//   labels.txt     one integer label per line (-1 when unknown)
//   manifest.json  {"count", "height", "width", "channels", "num_classes", ...}
// Pixel values map to [0, 1] by v / 255.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tta/tensor.hpp"

namespace tta {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;
  std::vector<Image<float>> images;
  std::vector<int> labels;
  nlohmann::json manifest_extra = nlohmann::json::object();

  [[nodiscard]] std::size_t size() const { return images.size(); }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Rounds every pixel to the 8-bit grid used on disk.
template <class T>
void quantize_to_bytes(Image<T>& img) {
  for (auto& v : img.data) v = static_cast<T>(to_byte(static_cast<double>(v)) / 255.0);
}

inline std::string sha256_hex(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw DataError("sha256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

inline std::string file_sha256(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read '" + p.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  if (ds.labels.size() != ds.images.size()) throw DataError("dataset: label count differs from image count");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(ds.size() * static_cast<std::size_t>(ds.height) * ds.width * ds.channels);
  for (const auto& img : ds.images) {
    if (img.channels != ds.channels || img.height != ds.height || img.width != ds.width)
      throw DataError("dataset: image shape differs from the dataset shape");
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < img.channels; ++c) bytes.push_back(to_byte(img(c, y, x)));
  }
  {
    std::ofstream os(dir / "images.bin", std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("cannot write images to '" + dir.string() + "'");
  }
  {
    std::ofstream os(dir / "labels.txt");
    for (int l : ds.labels) os << l << '\n';
  }
  nlohmann::json m = ds.manifest_extra;
  m["count"] = ds.size();
  m["height"] = ds.height;
  m["width"] = ds.width;
  m["channels"] = ds.channels;
  m["num_classes"] = ds.num_classes;
  m["images_sha256"] = file_sha256(dir / "images.bin");
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << '\n';
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("'" + dir.string() + "' has no manifest.json");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in '" + dir.string() + "': " + e.what());
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto m = read_manifest(dir);
  Dataset ds;
  std::size_t count = 0;
  try {
    count = m.at("count").get<std::size_t>();
    ds.height = m.at("height").get<int>();
    ds.width = m.at("width").get<int>();
    ds.channels = m.at("channels").get<int>();
    ds.num_classes = m.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest in '" + dir.string() + "' lacks a field: " + e.what());
  }
  ds.manifest_extra = m;
  const std::size_t per = static_cast<std::size_t>(ds.height) * ds.width * ds.channels;
  std::ifstream is(dir / "images.bin", std::ios::binary);
  if (!is) throw DataError("'" + dir.string() + "' has no images.bin");
  std::vector<std::uint8_t> bytes(per * count);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw DataError("images.bin in '" + dir.string() + "' is shorter than the manifest says");
  ds.images.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Image<float> img(ds.channels, ds.height, ds.width);
    const std::uint8_t* p = bytes.data() + n * per;
    for (int y = 0; y < ds.height; ++y)
      for (int x = 0; x < ds.width; ++x)
        for (int c = 0; c < ds.channels; ++c) img(c, y, x) = static_cast<float>(*p++) / 255.0f;
    ds.images.push_back(std::move(img));
  }
  std::ifstream ls(dir / "labels.txt");
  if (!ls) throw DataError("'" + dir.string() + "' has no labels.txt");
  int l = 0;
  while (ls >> l) ds.labels.push_back(l);
  if (ds.labels.size() != count) throw DataError("labels.txt in '" + dir.string() + "' has the wrong number of lines");
  return ds;
}

}  // namespace tta

#endif  // TTA_DATASET_HPP
