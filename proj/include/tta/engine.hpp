#ifndef TTA_ENGINE_HPP
#define TTA_ENGINE_HPP

// Streaming adaptation loop.
//
// One step of the self-learning method on a batch X runs, in this order:
//   1. pseudo_labels   teacher weak-view ensemble + queue refinement -> Yhat
//   2. policy_update   sample sub-policies, build X~, step [P, M] (teacher as of step start)
//   3. student_update  one optimizer step on L_pl(X, Yhat) + lambda2 * mean KL(Yhat || f_s(X~))
//   4. teacher_update  EMA of the student into the teacher
//   5. predict         student probabilities on the clean batch
// Baseline methods (source_only, bn_stats, entropy_min, pl_hard) skip the
// stages they do not use.

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tta/adv_augment.hpp"
#include "tta/evaluation.hpp"
#include "tta/model_pair.hpp"
#include "tta/objectives.hpp"
#include "tta/optim.hpp"
#include "tta/plr.hpp"

namespace tta {

enum class Protocol { one_pass, multi_pass };  // N-O, N-M
enum class Method { tesla, source_only, entropy_min, pl_hard, bn_stats };

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "N-O" || s == "n-o" || s == "one_pass") return Protocol::one_pass;
  if (s == "N-M" || s == "n-m" || s == "multi_pass") return Protocol::multi_pass;
  throw ConfigError("unknown protocol '" + s + "' (expected N-O or N-M)");
}
inline const char* to_string(Protocol p) { return p == Protocol::one_pass ? "N-O" : "N-M"; }

inline Method method_from_string(const std::string& s) {
  if (s == "tesla") return Method::tesla;
  if (s == "source_only") return Method::source_only;
  if (s == "entropy_min") return Method::entropy_min;
  if (s == "pl_hard") return Method::pl_hard;
  if (s == "bn_stats") return Method::bn_stats;
  throw ConfigError("unknown method '" + s + "' (expected tesla, source_only, entropy_min, pl_hard or bn_stats)");
}
inline const char* to_string(Method m) {
  switch (m) {
    case Method::tesla: return "tesla";
    case Method::source_only: return "source_only";
    case Method::entropy_min: return "entropy_min";
    case Method::pl_hard: return "pl_hard";
    case Method::bn_stats: return "bn_stats";
  }
  return "?";
}

struct AdaptationConfig {
  Protocol protocol = Protocol::one_pass;
  Method method = Method::tesla;
  int epochs = 1;
  int batch_size = 128;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double sgd_momentum = 0.9;
  double alpha = 0.99;          // EMA momentum
  double lambda1 = 1.0;         // augmentation severity
  double lambda2 = 1.0;         // distillation weight
  int num_neighbors = 1;        // n
  int queue_size = 1;           // N_Q per class
  int num_weak_views = 5;       // |rho_w|
  int subpolicy_dim = 2;        // N
  double gamma = 0.1;           // policy learning rate
  std::uint64_t seed = 0;
  bool predict_before_adapt = false;
  bool evaluate_teacher = false;
  bool frozen_norm_stats = false;
  NormMode teacher_norm = NormMode::batch_stats;  // pseudo-labels, policy loss and teacher evaluation
  bool entropy_min_all_params = false;  // default updates normalization affine params only
  WeakAugmenter weak{};

  void validate() const {
    if (protocol == Protocol::one_pass && epochs != 1) throw ConfigError("N-O protocol runs exactly one epoch");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("EMA momentum must lie in [0, 1]");
    if (lambda1 < 0 || lambda2 < 0) throw ConfigError("loss weights must be non-negative");
    if (num_neighbors < 1 || queue_size < 1 || num_weak_views < 1) throw ConfigError("PLR sizes must be >= 1");
    if (subpolicy_dim < 1 || subpolicy_dim > static_cast<int>(kOpRegistry.size()))
      throw ConfigError("sub-policy dimension out of range");
    if (gamma < 0) throw ConfigError("policy learning rate must be non-negative");
  }
};

class AdaptationAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Stage { pseudo_labels, policy_update, student_update, teacher_update, predict };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::pseudo_labels: return "pseudo_labels";
    case Stage::policy_update: return "policy_update";
    case Stage::student_update: return "student_update";
    case Stage::teacher_update: return "teacher_update";
    case Stage::predict: return "predict";
  }
  return "?";
}

template <class T>
struct Batch {
  std::vector<Image<T>> images;
  std::vector<int> labels;       // empty when unlabeled
  std::vector<std::size_t> ids;  // stream positions
};

struct StepResult {
  double loss_pl = 0;
  double loss_kd = 0;
  double loss_total = 0;
  double loss_aug_mean = 0;
  double aug_entropy_mean = 0;
  Matrix<double> predictions;
};

struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  std::vector<std::size_t> ids;
  std::vector<int> labels;
  Matrix<double> probs;
  double loss_total = 0;
  double loss_pl = 0;
  double loss_kd = 0;
  double loss_aug_mean = 0;
  bool operator==(const BatchRecord&) const = default;
};

struct EpochMetrics {
  int epoch = 0;
  double error = 0;
  double ece = 0;
  double brier = 0;
  double nll = 0;
  bool operator==(const EpochMetrics&) const = default;
};

struct AdaptationReport {
  std::vector<BatchRecord> online;
  std::vector<EpochMetrics> epochs;
  std::vector<nlohmann::json> policy_history;
  std::vector<PredictionRecord> final_predictions;  // labeled samples only
  std::vector<std::size_t> final_ids;
  bool operator==(const AdaptationReport&) const = default;
};

inline std::vector<PredictionRecord> to_records(std::span<const BatchRecord> batches) {
  std::vector<PredictionRecord> out;
  for (const auto& b : batches)
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      auto row = b.probs.row(static_cast<int>(i));
      out.push_back({{row.begin(), row.end()}, b.labels[i]});
    }
  return out;
}

inline EpochMetrics summarize(int epoch, std::span<const PredictionRecord> records, std::size_t bins = 15) {
  EpochMetrics m{epoch, 0, 0, 0, 0};
  if (records.empty()) return m;
  m.error = error_rate(records);
  m.ece = ece(records, bins);
  m.brier = brier(records);
  m.nll = nll(records);
  return m;
}

inline nlohmann::json to_json(const BatchRecord& r) {
  return {{"epoch", r.epoch},       {"batch", r.batch},     {"ids", r.ids},         {"labels", r.labels},
          {"probs", r.probs.data},  {"classes", r.probs.cols}, {"loss_total", r.loss_total},
          {"loss_pl", r.loss_pl},   {"loss_kd", r.loss_kd}, {"loss_aug_mean", r.loss_aug_mean}};
}

inline BatchRecord batch_record_from_json(const nlohmann::json& j) {
  BatchRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.batch = j.at("batch").get<int>();
  r.ids = j.at("ids").get<std::vector<std::size_t>>();
  r.labels = j.at("labels").get<std::vector<int>>();
  const int K = j.at("classes").get<int>();
  r.probs = Matrix<double>(static_cast<int>(r.ids.size()), K);
  r.probs.data = j.at("probs").get<std::vector<double>>();
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_pl = j.at("loss_pl").get<double>();
  r.loss_kd = j.at("loss_kd").get<double>();
  r.loss_aug_mean = j.at("loss_aug_mean").get<double>();
  return r;
}

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"error", m.error}, {"ece", m.ece}, {"brier", m.brier}, {"nll", m.nll}};
}

inline EpochMetrics epoch_metrics_from_json(const nlohmann::json& j) {
  return {j.at("epoch").get<int>(), j.at("error").get<double>(), j.at("ece").get<double>(), j.at("brier").get<double>(),
          j.at("nll").get<double>()};
}

/// All mutable adaptation state plus the loop that drives it.
template <class T>
class Adapter {
 public:
  using Observer = std::function<void(Stage)>;

  Adapter(const SplitModel<T>& source, AdaptationConfig cfg)
      : cfg_(std::move(cfg)), pair_(source, static_cast<T>(cfg_.alpha)),
        policy_(all_ops(), cfg_.subpolicy_dim, cfg_.gamma),
        queue_(source.arch().num_classes, cfg_.queue_size), rng_(cfg_.seed) {
    cfg_.validate();
    cfg_.weak.num_views = cfg_.num_weak_views;
    opt_ = Optimizer(cfg_.optimizer, cfg_.learning_rate, optimizer_indices(), cfg_.sgd_momentum);
  }

  void set_observer(Observer obs) { observer_ = std::move(obs); }

  const AdaptationConfig& config() const { return cfg_; }
  const ModelPair<T>& pair() const { return pair_; }
  const PolicyState& policy() const { return policy_; }
  const RefinementQueue& queue() const { return queue_; }
  const AdaptationReport& report() const { return report_; }
  int epoch_cursor() const { return epoch_; }
  int batch_cursor() const { return batch_; }

  /// Processes one batch, mutating the state. Returns losses and predictions.
  StepResult adapt_step(std::span<const Image<T>> images) {
    if (images.empty()) throw ShapeError("adapt_step: empty batch");
    StepResult res;
    std::optional<Matrix<double>> early;
    if (cfg_.predict_before_adapt) early = predict(images);
    switch (cfg_.method) {
      case Method::tesla: tesla_step(images, res); break;
      case Method::source_only: break;
      case Method::bn_stats: {
        if (!cfg_.frozen_norm_stats) pair_.student().forward(stack(images), NormMode::batch_stats, true);
        break;
      }
      case Method::entropy_min:
      case Method::pl_hard: self_training_step(images, res); break;
    }
    notify(Stage::predict);
    res.predictions = early ? std::move(*early) : predict(images);
    return res;
  }

  /// Student (or teacher) probabilities without touching any state.
  Matrix<double> predict(std::span<const Image<T>> images) const {
    Matrix<T> probs;
    if (cfg_.method == Method::source_only) {
      probs = pair_.student().forward(stack(images), NormMode::running_stats).probs;
    } else if (cfg_.evaluate_teacher) {
      probs = pair_.teacher().forward(stack(images), teacher_norm()).probs;
    } else {
      probs = pair_.student().forward(stack(images), student_norm()).probs;
    }
    Matrix<double> out(probs.rows, probs.cols);
    for (std::size_t i = 0; i < probs.data.size(); ++i) out.data[i] = static_cast<double>(probs.data[i]);
    return out;
  }

  struct RunOptions {
    std::optional<int> stop_after_batches;  // pause (for checkpointing) after this many steps in this call
  };

  /// Drives the protocol from the current cursor. Returns true when the run
  /// completed, false when paused by `stop_after_batches`.
  bool run(std::span<const Batch<T>> stream, RunOptions opts = {}) {
    if (stream.empty()) throw ConfigError("adaptation stream is empty");
    int done = 0;
    const int epochs = cfg_.protocol == Protocol::one_pass ? 1 : cfg_.epochs;
    while (epoch_ < epochs) {
      while (batch_ < static_cast<int>(stream.size())) {
        if (opts.stop_after_batches && done >= *opts.stop_after_batches) return false;
        const auto& b = stream[batch_];
        StepResult r;
        try {
          r = adapt_step(b.images);
        } catch (const NumericError& e) {
          throw AdaptationAborted(diagnostic(e.what()));
        }
        BatchRecord rec{epoch_, batch_, b.ids, b.labels, std::move(r.predictions), r.loss_total, r.loss_pl, r.loss_kd,
                        r.loss_aug_mean};
        report_.online.push_back(std::move(rec));
        ++batch_;
        ++done;
      }
      std::vector<BatchRecord> this_epoch;
      for (const auto& rec : report_.online)
        if (rec.epoch == epoch_) this_epoch.push_back(rec);
      report_.epochs.push_back(summarize(epoch_, to_records(this_epoch)));
      auto dump = policy_to_json(policy_);
      dump["epoch"] = epoch_;
      report_.policy_history.push_back(std::move(dump));
      ++epoch_;
      batch_ = 0;
    }
    // final predictions
    report_.final_predictions.clear();
    report_.final_ids.clear();
    if (cfg_.protocol == Protocol::one_pass) {
      report_.final_predictions = to_records(report_.online);
      for (const auto& b : report_.online) report_.final_ids.insert(report_.final_ids.end(), b.ids.begin(), b.ids.end());
    } else {
      for (const auto& b : stream) {
        auto probs = predict(b.images);
        BatchRecord tmp{epoch_, 0, b.ids, b.labels, std::move(probs)};
        auto recs = to_records(std::span<const BatchRecord>(&tmp, 1));
        report_.final_predictions.insert(report_.final_predictions.end(), recs.begin(), recs.end());
        report_.final_ids.insert(report_.final_ids.end(), b.ids.begin(), b.ids.end());
      }
    }
    return true;
  }

  /// Run checkpoint: models, optimizer, policy, queue, RNG, cursor and the report so far.
  [[nodiscard]] nlohmann::json state_json() const {
    nlohmann::json j;
    auto to_vec = [](std::span<const T> s) {
      std::vector<double> v(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) v[i] = static_cast<double>(s[i]);
      return v;
    };
    j["student"] = to_vec(pair_.student().param_vector());
    j["teacher"] = to_vec(pair_.teacher().param_vector());
    j["optimizer"] = opt_.to_json();
    j["policy"] = policy_to_json(policy_);
    j["queue"] = queue_.to_json();
    j["rng"] = rng_.serialize();
    j["epoch"] = epoch_;
    j["batch"] = batch_;
    auto online = nlohmann::json::array();
    for (const auto& r : report_.online) online.push_back(to_json(r));
    j["online"] = online;
    auto epochs = nlohmann::json::array();
    for (const auto& m : report_.epochs) epochs.push_back(to_json(m));
    j["epochs"] = epochs;
    j["policy_history"] = report_.policy_history;
    return j;
  }

  void load_state_json(const nlohmann::json& j) {
    auto from_vec = [](const std::vector<double>& v) {
      std::vector<T> out(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
      return out;
    };
    const auto s = from_vec(j.at("student").get<std::vector<double>>());
    const auto t = from_vec(j.at("teacher").get<std::vector<double>>());
    pair_.set_state(s, t);
    opt_ = Optimizer::from_json(j.at("optimizer"));
    policy_ = policy_from_json(j.at("policy"));
    queue_ = RefinementQueue::from_json(j.at("queue"));
    rng_ = Rng::deserialize(j.at("rng").get<std::string>());
    epoch_ = j.at("epoch").get<int>();
    batch_ = j.at("batch").get<int>();
    report_ = {};
    for (const auto& r : j.at("online")) report_.online.push_back(batch_record_from_json(r));
    for (const auto& m : j.at("epochs")) report_.epochs.push_back(epoch_metrics_from_json(m));
    for (const auto& p : j.at("policy_history")) report_.policy_history.push_back(p);
  }

  void save_state(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write run checkpoint '" + path + "'");
    os << state_json().dump();
  }

  void load_state(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read run checkpoint '" + path + "'");
    load_state_json(nlohmann::json::parse(is));
  }

 private:
  std::vector<std::size_t> optimizer_indices() const {
    const auto& student = pair_.student();
    if (cfg_.method == Method::entropy_min && !cfg_.entropy_min_all_params)
      return student.select([](const TensorEntry& e) {
        return e.kind == ParamKind::trainable && e.name.find(".bn.") != std::string::npos;
      });
    return student.trainable_indices();
  }

  NormMode student_norm() const { return cfg_.frozen_norm_stats ? NormMode::running_stats : NormMode::batch_stats; }
  NormMode teacher_norm() const { return cfg_.frozen_norm_stats ? NormMode::running_stats : cfg_.teacher_norm; }

  void notify(Stage s) const {
    if (observer_) observer_(s);
  }

  std::string diagnostic(const std::string& what) const {
    std::ostringstream os;
    os << "adaptation aborted at epoch " << epoch_ << ", batch " << batch_ << ": " << what << "; policy top entries:";
    const auto order = policy_.ranked_by_probability();
    for (std::size_t q = 0; q < std::min<std::size_t>(5, order.size()); ++q)
      os << ' ' << describe(policy_.sub_policies[order[q]]) << "=" << policy_.probs[order[q]];
    return os.str();
  }

  void check_loss(double v, const char* what) const {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
  }

  void tesla_step(std::span<const Image<T>> images, StepResult& res) {
    auto& student = pair_.student();
    const int P = static_cast<int>(student.param_vector().size());

    notify(Stage::pseudo_labels);
    const Matrix<T> pseudo =
        refine_pseudo_labels(pair_.teacher(), images, cfg_.weak, queue_, cfg_.num_neighbors, rng_, teacher_norm());

    notify(Stage::policy_update);
    auto pol = update_policy<T>(policy_, images, pair_.teacher(), cfg_.lambda1, rng_, teacher_norm());
    double s = 0, e = 0;
    for (std::size_t j = 0; j < pol.losses.size(); ++j) {
      s += pol.losses[j];
      e += pol.entropies[j];
    }
    res.loss_aug_mean = s / static_cast<double>(pol.losses.size());
    res.aug_entropy_mean = e / static_cast<double>(pol.losses.size());

    notify(Stage::student_update);
    const NormMode mode = student_norm();
    ForwardTrace<T> clean_trace, aug_trace;
    auto clean = student.forward(stack(images), mode, !cfg_.frozen_norm_stats, &clean_trace);
    std::vector<T> grad(P, T(0));
    BatchPredictions<T> bp{clean.probs, pseudo, clean.probs};
    std::optional<ForwardResult<T>> aug;
    if (cfg_.lambda2 > 0) {
      aug = student.forward(stack<T>(pol.augmented), mode, false, &aug_trace);
      bp.student_probs_aug = aug->probs;
    }
    auto total = loss_tesla(bp, static_cast<T>(cfg_.lambda2));
    res.loss_pl = static_cast<double>(total.pl);
    res.loss_kd = static_cast<double>(total.kd);
    res.loss_total = static_cast<double>(total.value);
    check_loss(res.loss_total, "self-learning loss");
    Upstream<T> up;
    up.d_logits = softmax_backward(clean.probs, total.d_student_probs);
    student.backward(clean_trace, up, grad, false);
    if (aug) {
      Upstream<T> up_aug;
      up_aug.d_logits = softmax_backward(aug->probs, total.d_student_probs_aug);
      student.backward(aug_trace, up_aug, grad, false);
    }
    require_finite<T>(grad, "student gradient");
    opt_.step<T>(student.param_vector(), grad);

    notify(Stage::teacher_update);
    pair_.ema_update();
  }

  void self_training_step(std::span<const Image<T>> images, StepResult& res) {
    auto& student = pair_.student();
    notify(Stage::student_update);
    ForwardTrace<T> trace;
    auto out = student.forward(stack(images), student_norm(), !cfg_.frozen_norm_stats, &trace);
    LossGrad<T> lg;
    if (cfg_.method == Method::entropy_min) {
      lg = mean_entropy(out.probs);
    } else {
      std::vector<int> hard(out.probs.rows);
      for (int i = 0; i < out.probs.rows; ++i) hard[i] = static_cast<int>(argmax<T>(out.probs.row(i)));
      lg = cross_entropy_hard<T>(out.probs, hard);
    }
    res.loss_total = static_cast<double>(lg.value);
    check_loss(res.loss_total, "baseline loss");
    std::vector<T> grad(student.param_vector().size(), T(0));
    Upstream<T> up;
    up.d_logits = softmax_backward(out.probs, lg.d_probs);
    student.backward(trace, up, grad, false);
    require_finite<T>(grad, "student gradient");
    opt_.step<T>(student.param_vector(), grad);
  }

  AdaptationConfig cfg_;
  ModelPair<T> pair_;
  PolicyState policy_;
  RefinementQueue queue_;
  Rng rng_;
  Optimizer opt_;
  Observer observer_;
  AdaptationReport report_;
  int epoch_ = 0;
  int batch_ = 0;
};

}  // namespace tta

#endif  // TTA_ENGINE_HPP
