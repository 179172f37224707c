#ifndef TTA_EXPERIMENT_HPP
#define TTA_EXPERIMENT_HPP

// End-to-end runs over an on-disk dataset. Output directory layout:
//
//   summary.txt          flat key = value metrics record
//   report.jsonl         one JSON object per adapted batch, then a final "summary" object
//   predictions.csv      id,label,prediction,confidence for the evaluated pass
//   reliability.csv      15-bin (by default) reliability diagram
//   policy_history.json  policy state (P, M, counts) at the end of every epoch
//   config.txt           resolved configuration
//   student.ckpt, teacher.ckpt

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>

#include "tta/config.hpp"
#include "tta/dataset.hpp"
#include "tta/engine.hpp"
#include "tta/model_pair.hpp"

namespace tta {

/// Indices of the requested split; `val` is the leading val_fraction of the set.
inline std::vector<std::size_t> split_indices(std::size_t count, Split split, double val_fraction) {
  const auto nval = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(count)));
  std::size_t lo = 0, hi = count;
  if (split == Split::val) hi = nval;
  if (split == Split::test) lo = nval;
  std::vector<std::size_t> idx(hi - lo);
  std::iota(idx.begin(), idx.end(), lo);
  return idx;
}

/// Cuts `indices` (optionally shuffled with `seed`) into consecutive batches.
template <class T>
std::vector<Batch<T>> make_stream(const Dataset& ds, std::vector<std::size_t> indices, int batch_size, bool shuffle,
                                  std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (shuffle) {
    Rng rng = Rng::stream(seed, 0x5eed);
    for (std::size_t i = indices.size(); i > 1; --i) std::swap(indices[i - 1], indices[rng.index(i)]);
  }
  std::vector<Batch<T>> stream;
  for (std::size_t s = 0; s < indices.size(); s += batch_size) {
    Batch<T> b;
    for (std::size_t q = s; q < std::min(indices.size(), s + static_cast<std::size_t>(batch_size)); ++q) {
      b.images.push_back(ds.images[indices[q]].template cast<T>());
      if (ds.labels[indices[q]] >= 0) b.labels.push_back(ds.labels[indices[q]]);
      b.ids.push_back(indices[q]);
    }
    if (!b.labels.empty() && b.labels.size() != b.ids.size())
      throw DataError("dataset mixes labeled and unlabeled images");
    stream.push_back(std::move(b));
  }
  return stream;
}

inline void check_compatible(const ArchConfig& arch, const Dataset& ds) {
  if (arch.in_channels != ds.channels || arch.height != ds.height || arch.width != ds.width)
    throw ShapeError("checkpoint expects " + std::to_string(arch.in_channels) + "x" + std::to_string(arch.height) + "x" +
                     std::to_string(arch.width) + " images, dataset has " + std::to_string(ds.channels) + "x" +
                     std::to_string(ds.height) + "x" + std::to_string(ds.width));
  if (arch.num_classes != ds.num_classes)
    throw ShapeError("checkpoint has " + std::to_string(arch.num_classes) + " classes, dataset has " +
                     std::to_string(ds.num_classes));
}

struct RunSummary {
  std::string method;
  std::string protocol;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  int batches = 0;
  EpochMetrics metrics;
  std::string data_sha256;
  std::string checkpoint_sha256;

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "method = " << method << "\nprotocol = " << protocol << "\nseed = " << seed << "\nsamples = " << samples
       << "\nbatches = " << batches << "\nerror = " << metrics.error << "\nece = " << metrics.ece
       << "\nbrier = " << metrics.brier << "\nnll = " << metrics.nll << "\ndata_sha256 = " << data_sha256
       << "\ncheckpoint_sha256 = " << checkpoint_sha256 << "\n";
    return os.str();
  }
};

struct RunOutcome {
  RunSummary summary;
  AdaptationReport report;
  PolicyState policy;
  SplitModel<float> student;
};

using ProgressFn = std::function<void(const BatchRecord&)>;

/// Runs adaptation as configured and writes the report files. Throws
/// ConfigError, DataError, CheckpointError, ShapeError or AdaptationAborted.
inline RunOutcome run_experiment(const RunConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  if (!std::filesystem::exists(cfg.data)) throw DataError("dataset '" + cfg.data.string() + "' does not exist");
  if (!std::filesystem::exists(cfg.checkpoint))
    throw CheckpointError("checkpoint '" + cfg.checkpoint.string() + "' does not exist");
  const Dataset ds = load_dataset(cfg.data);
  auto source = load_model<float>(cfg.checkpoint.string());
  check_compatible(source.arch(), ds);
  source.freeze_head();

  auto stream = make_stream<float>(ds, split_indices(ds.size(), cfg.split, cfg.val_fraction), cfg.adapt.batch_size,
                                   cfg.shuffle, cfg.adapt.seed);
  if (stream.empty()) throw ConfigError("selected split is empty");
  Adapter<float> adapter(source, cfg.adapt);
  std::size_t reported = 0;
  if (progress)
    adapter.set_observer([&](Stage) {
      while (reported < adapter.report().online.size()) progress(adapter.report().online[reported++]);
    });
  adapter.run(stream);
  if (progress)
    while (reported < adapter.report().online.size()) progress(adapter.report().online[reported++]);

  const auto& rep = adapter.report();
  RunOutcome out{{}, rep, adapter.policy(), adapter.pair().student()};
  auto& s = out.summary;
  s.method = to_string(cfg.adapt.method);
  s.protocol = to_string(cfg.adapt.protocol);
  s.seed = cfg.adapt.seed;
  s.samples = rep.final_ids.size();
  s.batches = static_cast<int>(rep.online.size());
  s.metrics = summarize(static_cast<int>(rep.epochs.size()) - 1, rep.final_predictions,
                        static_cast<std::size_t>(cfg.ece_bins));
  s.data_sha256 = ds.manifest_extra.value("images_sha256", std::string{});
  s.checkpoint_sha256 = file_sha256(cfg.checkpoint);

  std::filesystem::create_directories(cfg.out);
  {
    std::ofstream os(cfg.out / "summary.txt");
    os << s.to_text();
    if (!os) throw DataError("cannot write to '" + cfg.out.string() + "'");
  }
  {
    std::ofstream os(cfg.out / "config.txt");
    os << to_config_text(cfg);
  }
  {
    std::ofstream os(cfg.out / "report.jsonl");
    for (const auto& b : rep.online) {
      nlohmann::json j = {{"type", "batch"}, {"epoch", b.epoch},       {"batch", b.batch},
                          {"size", b.ids.size()}, {"loss_total", b.loss_total}, {"loss_pl", b.loss_pl},
                          {"loss_kd", b.loss_kd}, {"loss_aug_mean", b.loss_aug_mean}};
      if (!b.labels.empty()) j["error"] = error_rate(to_records(std::span<const BatchRecord>(&b, 1)));
      os << j.dump() << '\n';
    }
    for (const auto& m : rep.epochs) {
      auto j = to_json(m);
      j["type"] = "epoch";
      os << j.dump() << '\n';
    }
    nlohmann::json j = {{"type", "summary"}, {"method", s.method}, {"protocol", s.protocol}, {"seed", s.seed},
                        {"samples", s.samples}, {"error", s.metrics.error}, {"ece", s.metrics.ece},
                        {"brier", s.metrics.brier}, {"nll", s.metrics.nll}};
    os << j.dump() << '\n';
  }
  {
    std::ofstream os(cfg.out / "predictions.csv");
    os << "id,label,prediction,confidence\n";
    os.precision(10);
    for (std::size_t i = 0; i < rep.final_predictions.size(); ++i) {
      const auto& r = rep.final_predictions[i];
      os << rep.final_ids[i] << ',' << r.label << ',' << r.predicted() << ',' << r.confidence() << '\n';
    }
  }
  if (!rep.final_predictions.empty()) {
    const auto bins = reliability_bins(rep.final_predictions, static_cast<std::size_t>(cfg.ece_bins));
    write_reliability_csv((cfg.out / "reliability.csv").string(), bins);
  }
  {
    std::ofstream os(cfg.out / "policy_history.json");
    os << nlohmann::json(rep.policy_history).dump(1) << '\n';
  }
  save_checkpoint((cfg.out / "student.ckpt").string(), adapter.pair().student());
  save_checkpoint((cfg.out / "teacher.ckpt").string(), adapter.pair().teacher());
  return out;
}

/// Encoder features of every image (inference normalization), as rows of
/// `f0,...,f{D-1},label`. Returns the number of rows written.
inline std::size_t export_features(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                                   const std::filesystem::path& out_file, int batch_size = 256) {
  const Dataset ds = load_dataset(data);
  const auto model = load_model<double>(checkpoint.string());
  check_compatible(model.arch(), ds);
  std::ofstream os(out_file);
  if (!os) throw DataError("cannot write '" + out_file.string() + "'");
  os.precision(17);
  const int D = model.arch().feature_dim();
  for (int d = 0; d < D; ++d) os << 'f' << d << ',';
  os << "label\n";
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::vector<Image<double>> imgs;
    for (std::size_t q = start; q < std::min(ds.size(), start + static_cast<std::size_t>(batch_size)); ++q)
      imgs.push_back(ds.images[q].cast<double>());
    const auto feats = *forward<double>(model, imgs, OutputMode::features).features;
    for (int i = 0; i < feats.rows; ++i) {
      for (int d = 0; d < D; ++d) os << feats(i, d) << ',';
      os << ds.labels[start + i] << '\n';
    }
  }
  return ds.size();
}

}  // namespace tta

#endif  // TTA_EXPERIMENT_HPP
