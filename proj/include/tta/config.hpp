#ifndef TTA_CONFIG_HPP
#define TTA_CONFIG_HPP

// Run configuration files: one `key = value` per line, `#` starts a comment.
//
//   data = corrupted/gaussian_noise-5      # dataset directory
//   checkpoint = source.ckpt
//   out = runs/tesla
//   method = tesla                          # tesla source_only entropy_min pl_hard bn_stats
//   protocol = N-O                          # or N-M
//   epochs = 1
//   batch_size = 64
//   learning_rate = 1e-3
//   optimizer = adam                        # or sgd
//   alpha = 0.99                            # EMA momentum
//   lambda1 = 1.0
//   lambda2 = 1.0
//   n = 1                                   # neighbours used for refinement
//   N_Q = 1                                 # queue length per class
//   num_weak_views = 5
//   N = 2                                   # transforms per sub-policy
//   gamma = 0.1                             # policy learning rate
//   seed = 0
//
// Further keys: split (all, val, test), val_fraction, shuffle, ece_bins,
// predict_before_adapt, evaluate_teacher, frozen_norm_stats,
// teacher_norm (batch or running), entropy_min_all_params, sgd_momentum.
// Relative paths are resolved against the directory holding the config file.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tta/engine.hpp"

namespace tta {

enum class Split { all, val, test };

inline Split split_from_string(const std::string& s) {
  if (s == "all") return Split::all;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected all, val or test)");
}
inline const char* to_string(Split s) { return s == Split::all ? "all" : s == Split::val ? "val" : "test"; }

struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path checkpoint;
  std::filesystem::path out = "runs/out";
  AdaptationConfig adapt;
  Split split = Split::all;
  double val_fraction = 0.1;  // leading share of the set used as the validation split
  bool shuffle = true;        // stream order drawn from the seed
  int ece_bins = 15;

  void validate() const {
    adapt.validate();
    if (data.empty()) throw ConfigError("config: 'data' is required");
    if (checkpoint.empty()) throw ConfigError("config: 'checkpoint' is required");
    if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in (0, 1)");
    if (ece_bins < 1) throw ConfigError("ece_bins must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  V v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw ConfigError("config: bad value '" + text + "' for '" + key + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + text + "'");
}

}  // namespace detail

/// Applies one key. Throws ConfigError on unknown keys or malformed values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value,
                             const std::filesystem::path& base = {}) {
  using detail::parse_bool;
  using detail::parse_value;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base.empty() ? base / p : p;
  };
  auto& a = c.adapt;
  if (key == "data") c.data = path(value);
  else if (key == "checkpoint") c.checkpoint = path(value);
  else if (key == "out") c.out = path(value);
  else if (key == "method") a.method = method_from_string(value);
  else if (key == "protocol") a.protocol = protocol_from_string(value);
  else if (key == "epochs") a.epochs = parse_value<int>(key, value);
  else if (key == "batch_size") a.batch_size = parse_value<int>(key, value);
  else if (key == "learning_rate") a.learning_rate = parse_value<double>(key, value);
  else if (key == "optimizer") {
    try {
      a.optimizer = optimizer_from_string(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "sgd_momentum") a.sgd_momentum = parse_value<double>(key, value);
  else if (key == "alpha") a.alpha = parse_value<double>(key, value);
  else if (key == "lambda1") a.lambda1 = parse_value<double>(key, value);
  else if (key == "lambda2") a.lambda2 = parse_value<double>(key, value);
  else if (key == "n") a.num_neighbors = parse_value<int>(key, value);
  else if (key == "N_Q") a.queue_size = parse_value<int>(key, value);
  else if (key == "num_weak_views") a.num_weak_views = parse_value<int>(key, value);
  else if (key == "N") a.subpolicy_dim = parse_value<int>(key, value);
  else if (key == "gamma") a.gamma = parse_value<double>(key, value);
  else if (key == "seed") a.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "predict_before_adapt") a.predict_before_adapt = parse_bool(key, value);
  else if (key == "evaluate_teacher") a.evaluate_teacher = parse_bool(key, value);
  else if (key == "frozen_norm_stats") a.frozen_norm_stats = parse_bool(key, value);
  else if (key == "entropy_min_all_params") a.entropy_min_all_params = parse_bool(key, value);
  else if (key == "teacher_norm") {
    if (value == "batch") a.teacher_norm = NormMode::batch_stats;
    else if (value == "running") a.teacher_norm = NormMode::running_stats;
    else throw ConfigError("teacher_norm expects batch or running, got '" + value + "'");
  } else if (key == "split") c.split = split_from_string(value);
  else if (key == "val_fraction") c.val_fraction = parse_value<double>(key, value);
  else if (key == "shuffle") c.shuffle = parse_bool(key, value);
  else if (key == "ece_bins") c.ece_bins = parse_value<int>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline RunConfig parse_config(std::istream& is, const std::filesystem::path& base = {}) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    set_config_value(c, key, value, base);
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot read config '" + file.string() + "'");
  return parse_config(is, file.parent_path());
}

/// Canonical key = value dump (paths as given after resolution).
inline std::string to_config_text(const RunConfig& c) {
  const auto& a = c.adapt;
  std::ostringstream os;
  os.precision(17);
  os << "data = " << c.data.string() << "\ncheckpoint = " << c.checkpoint.string() << "\nout = " << c.out.string()
     << "\nmethod = " << to_string(a.method) << "\nprotocol = " << to_string(a.protocol) << "\nepochs = " << a.epochs
     << "\nbatch_size = " << a.batch_size << "\nlearning_rate = " << a.learning_rate
     << "\noptimizer = " << to_string(a.optimizer) << "\nsgd_momentum = " << a.sgd_momentum << "\nalpha = " << a.alpha
     << "\nlambda1 = " << a.lambda1 << "\nlambda2 = " << a.lambda2 << "\nn = " << a.num_neighbors
     << "\nN_Q = " << a.queue_size << "\nnum_weak_views = " << a.num_weak_views << "\nN = " << a.subpolicy_dim
     << "\ngamma = " << a.gamma << "\nseed = " << a.seed << std::boolalpha
     << "\npredict_before_adapt = " << a.predict_before_adapt << "\nevaluate_teacher = " << a.evaluate_teacher
     << "\nfrozen_norm_stats = " << a.frozen_norm_stats << "\nentropy_min_all_params = " << a.entropy_min_all_params
     << "\nteacher_norm = " << (a.teacher_norm == NormMode::batch_stats ? "batch" : "running")
     << "\nsplit = " << to_string(c.split) << "\nval_fraction = " << c.val_fraction << "\nshuffle = " << c.shuffle
     << "\nece_bins = " << c.ece_bins << "\n";
  return os.str();
}

}  // namespace tta

#endif  // TTA_CONFIG_HPP
