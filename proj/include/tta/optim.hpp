#ifndef TTA_OPTIM_HPP
#define TTA_OPTIM_HPP

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tta {

enum class OptimizerKind { adam, sgd };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam" || s == "Adam") return OptimizerKind::adam;
  if (s == "sgd" || s == "SGD") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

/// Adam or SGD with momentum over a fixed subset of a flat parameter vector.
/// Moments are stored per selected index in selection order.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, std::vector<std::size_t> indices, double momentum = 0.9)
      : kind_(kind), lr_(lr), momentum_(momentum), indices_(std::move(indices)), m_(indices_.size(), 0.0),
        v_(kind == OptimizerKind::adam ? indices_.size() : 0, 0.0) {}

  template <class T>
  void step(std::span<T> params, std::span<const T> grads) {
    ++t_;
    if (kind_ == OptimizerKind::adam) {
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (std::size_t q = 0; q < indices_.size(); ++q) {
        const double g = static_cast<double>(grads[indices_[q]]);
        m_[q] = beta1_ * m_[q] + (1.0 - beta1_) * g;
        v_[q] = beta2_ * v_[q] + (1.0 - beta2_) * g * g;
        const double upd = lr_ * (m_[q] / bc1) / (std::sqrt(v_[q] / bc2) + eps_);
        params[indices_[q]] = static_cast<T>(static_cast<double>(params[indices_[q]]) - upd);
      }
    } else {
      for (std::size_t q = 0; q < indices_.size(); ++q) {
        const double g = static_cast<double>(grads[indices_[q]]);
        m_[q] = momentum_ * m_[q] + g;
        params[indices_[q]] = static_cast<T>(static_cast<double>(params[indices_[q]]) - lr_ * m_[q]);
      }
    }
  }

  [[nodiscard]] const std::vector<std::size_t>& indices() const { return indices_; }
  [[nodiscard]] OptimizerKind kind() const { return kind_; }
  [[nodiscard]] double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"kind", to_string(kind_)}, {"lr", lr_},         {"momentum", momentum_}, {"t", t_},
            {"indices", indices_},      {"m", m_},           {"v", v_}};
  }

  static Optimizer from_json(const nlohmann::json& j) {
    Optimizer o(optimizer_from_string(j.at("kind").get<std::string>()), j.at("lr").get<double>(),
                j.at("indices").get<std::vector<std::size_t>>(), j.at("momentum").get<double>());
    o.t_ = j.at("t").get<long>();
    o.m_ = j.at("m").get<std::vector<double>>();
    o.v_ = j.at("v").get<std::vector<double>>();
    return o;
  }

 private:
  OptimizerKind kind_ = OptimizerKind::adam;
  double lr_ = 1e-3;
  double momentum_ = 0.9;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<std::size_t> indices_;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace tta

#endif  // TTA_OPTIM_HPP
