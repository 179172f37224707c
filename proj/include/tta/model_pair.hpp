#ifndef TTA_MODEL_PAIR_HPP
#define TTA_MODEL_PAIR_HPP

// Student / EMA-teacher pair and the checkpoint file format.
//
// Checkpoint layout (all integers and floats little-endian):
//
//   bytes 0..7   magic "TTACKPT1"
//   u64          length N of the JSON header
//   N bytes      JSON header:
//                  { "arch": {in_channels, height, width, block_channels, num_classes},
//                    "tensors": [ {name, shape, kind, offset, count}, ... ] }
//   f64 * total  parameter values, tensors concatenated at their offsets
//
// `kind` is one of "trainable", "frozen", "buffer". Offsets count f64 values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "tta/nn.hpp"

namespace tta {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'T', 'T', 'A', 'C', 'K', 'P', 'T', '1'};

inline const char* to_string(ParamKind k) {
  switch (k) {
    case ParamKind::trainable: return "trainable";
    case ParamKind::frozen: return "frozen";
    case ParamKind::buffer: return "buffer";
  }
  return "?";
}

inline ParamKind param_kind_from_string(const std::string& s) {
  if (s == "trainable") return ParamKind::trainable;
  if (s == "frozen") return ParamKind::frozen;
  if (s == "buffer") return ParamKind::buffer;
  throw CheckpointError("unknown tensor kind '" + s + "'");
}

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"in_channels", a.in_channels},
          {"height", a.height},
          {"width", a.width},
          {"block_channels", a.block_channels},
          {"num_classes", a.num_classes}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.in_channels = j.at("in_channels").get<int>();
  a.height = j.at("height").get<int>();
  a.width = j.at("width").get<int>();
  a.block_channels = j.at("block_channels").get<std::vector<int>>();
  a.num_classes = j.at("num_classes").get<int>();
  return a;
}

namespace detail {
inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline void write_f64(std::ostream& os, double d) { write_u64(os, std::bit_cast<std::uint64_t>(d)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }
}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const SplitModel<T>& model) {
  nlohmann::json header;
  header["arch"] = arch_to_json(model.arch());
  header["tensors"] = nlohmann::json::array();
  for (const auto& e : model.params().entries())
    header["tensors"].push_back(
        {{"name", e.name}, {"shape", e.shape}, {"kind", to_string(e.kind)}, {"offset", e.offset}, {"count", e.count}});
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, 8);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (T v : model.param_vector()) detail::write_f64(os, static_cast<double>(v));
  if (!os) throw CheckpointError("failed writing '" + path + "'");
}

struct CheckpointContents {
  ArchConfig arch;
  nlohmann::json tensors;
  std::vector<double> values;
};

inline CheckpointContents read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  const auto len = detail::read_u64(is);
  if (len > (1ULL << 30)) throw CheckpointError("checkpoint header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint header");
  CheckpointContents c;
  try {
    auto header = nlohmann::json::parse(text);
    c.arch = arch_from_json(header.at("arch"));
    c.tensors = header.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  std::size_t total = 0;
  for (const auto& t : c.tensors) total = std::max(total, t.at("offset").get<std::size_t>() + t.at("count").get<std::size_t>());
  c.values.resize(total);
  for (auto& v : c.values) v = detail::read_f64(is);
  return c;
}

/// Loads a checkpoint into a freshly built model. When `expected` is given the
/// stored architecture must match it. Every tensor the architecture needs must
/// be present with the right shape; the error names the first missing layer.
template <class T>
SplitModel<T> load_model(const std::string& path, const std::optional<ArchConfig>& expected = std::nullopt) {
  auto c = read_checkpoint(path);
  if (expected && !(*expected == c.arch))
    throw CheckpointError("checkpoint architecture does not match the configured architecture");
  SplitModel<T> model(c.arch);
  auto values = model.param_vector();
  for (std::size_t id = 0; id < model.params().entries().size(); ++id) {
    const auto& e = model.params().entry(id);
    const nlohmann::json* found = nullptr;
    for (const auto& t : c.tensors)
      if (t.at("name").get<std::string>() == e.name) found = &t;
    if (!found) throw CheckpointError("checkpoint is missing layer '" + e.name + "'");
    if ((*found).at("shape").get<std::vector<int>>() != e.shape)
      throw CheckpointError("shape mismatch for layer '" + e.name + "'");
    const auto off = (*found).at("offset").get<std::size_t>();
    for (std::size_t i = 0; i < e.count; ++i) values[e.offset + i] = static_cast<T>(c.values.at(off + i));
    if (param_kind_from_string((*found).at("kind").get<std::string>()) == ParamKind::frozen)
      model.params().set_kind(id, ParamKind::frozen);
  }
  return model;
}

enum class OutputMode { features, probs, both };

template <class T>
struct ModelOutput {
  std::optional<Matrix<T>> features;
  std::optional<Matrix<T>> probs;
};

template <class T>
ModelOutput<T> forward(const SplitModel<T>& model, std::span<const Image<T>> batch, OutputMode mode,
                       NormMode norm = NormMode::running_stats) {
  if (batch.empty()) throw ShapeError("forward: empty batch");
  auto res = model.forward(stack(batch), norm);
  ModelOutput<T> out;
  if (mode != OutputMode::probs) out.features = std::move(res.features);
  if (mode != OutputMode::features) out.probs = std::move(res.probs);
  return out;
}

/// Student and mean-teacher networks sharing one frozen classifier head.
template <class T>
class ModelPair {
 public:
  ModelPair() = default;

  /// theta_s = theta_t = theta_0, head frozen in both.
  explicit ModelPair(const SplitModel<T>& source, T alpha) : student_(source), teacher_(source), alpha_(alpha) {
    if (!(alpha >= T(0) && alpha <= T(1))) throw std::invalid_argument("EMA momentum must lie in [0, 1]");
    student_.freeze_head();
    teacher_.freeze_head();
  }

  static ModelPair from_checkpoint(const std::string& path, T alpha,
                                   const std::optional<ArchConfig>& expected = std::nullopt) {
    return ModelPair(load_model<T>(path, expected), alpha);
  }

  SplitModel<T>& student() { return student_; }
  const SplitModel<T>& student() const { return student_; }
  const SplitModel<T>& teacher() const { return teacher_; }
  T alpha() const { return alpha_; }

  /// theta_t <- alpha * theta_t + (1 - alpha) * theta_s over every non-frozen
  /// entry, normalization running statistics included.
  void ema_update() {
    auto t = teacher_.param_vector();
    auto s = student_.param_vector();
    for (const auto& e : teacher_.params().entries()) {
      if (e.kind == ParamKind::frozen) continue;
      for (std::size_t i = e.offset; i < e.offset + e.count; ++i) t[i] = alpha_ * t[i] + (T(1) - alpha_) * s[i];
    }
  }

  /// Restores both parameter vectors (run-checkpoint resume).
  void set_state(std::span<const T> student_values, std::span<const T> teacher_values) {
    auto s = student_.param_vector();
    auto t = teacher_.param_vector();
    if (student_values.size() != s.size() || teacher_values.size() != t.size())
      throw CheckpointError("model state size mismatch");
    std::ranges::copy(student_values, s.begin());
    std::ranges::copy(teacher_values, t.begin());
  }

 private:
  SplitModel<T> student_;
  SplitModel<T> teacher_;
  T alpha_ = T(0.99);
};

}  // namespace tta

#endif  // TTA_MODEL_PAIR_HPP
