#ifndef TTA_EVALUATION_HPP
#define TTA_EVALUATION_HPP

// Classification and calibration metrics over prediction records.
//
// ECE uses equal-width confidence bins over [0, 1] with right-inclusive edges
// (bin b holds confidences in (b/n, (b+1)/n]; a confidence of exactly 0 falls
// in bin 0). Brier is the multiclass sum over classes, range [0, 2].

#include <cmath>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tta/objectives.hpp"
#include "tta/plr.hpp"

namespace tta {

struct PredictionRecord {
  std::vector<double> probs;
  int label = 0;

  [[nodiscard]] int predicted() const { return static_cast<int>(argmax<double>(probs)); }
  [[nodiscard]] double confidence() const { return probs[predicted()]; }
  [[nodiscard]] bool correct() const { return predicted() == label; }
  bool operator==(const PredictionRecord&) const = default;
};

namespace detail {
inline void require_records(std::span<const PredictionRecord> r, const char* what) {
  if (r.empty()) throw std::invalid_argument(std::string(what) + ": no prediction records");
}
}  // namespace detail

/// Percentage of misclassified records.
inline double error_rate(std::span<const PredictionRecord> records) {
  detail::require_records(records, "error_rate");
  std::size_t wrong = 0;
  for (const auto& r : records) wrong += r.correct() ? 0 : 1;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(records.size());
}

struct ReliabilityBin {
  double low = 0;
  double high = 0;
  std::size_t count = 0;
  double mean_confidence = 0;
  double accuracy = 0;
};

inline std::size_t confidence_bin(double conf, std::size_t num_bins, double low, double high) {
  const double width = (high - low) / static_cast<double>(num_bins);
  const double pos = std::ceil((conf - low) / width) - 1.0;
  if (pos < 0) return 0;
  return std::min(static_cast<std::size_t>(pos), num_bins - 1);
}

/// Per-bin counts, mean confidence and accuracy over [low, high]; records whose
/// confidence falls outside the range are ignored.
inline std::vector<ReliabilityBin> reliability_bins(std::span<const PredictionRecord> records, std::size_t num_bins,
                                                    double low = 0.0, double high = 1.0) {
  if (num_bins < 1) throw std::invalid_argument("reliability: need at least one bin");
  if (!(high > low)) throw std::invalid_argument("reliability: empty confidence range");
  std::vector<ReliabilityBin> bins(num_bins);
  const double width = (high - low) / static_cast<double>(num_bins);
  for (std::size_t b = 0; b < num_bins; ++b) {
    bins[b].low = low + width * static_cast<double>(b);
    bins[b].high = b + 1 == num_bins ? high : low + width * static_cast<double>(b + 1);
  }
  std::vector<double> conf_sum(num_bins, 0.0), correct(num_bins, 0.0);
  for (const auto& r : records) {
    const double c = r.confidence();
    if (c < low || c > high) continue;
    const auto b = confidence_bin(c, num_bins, low, high);
    ++bins[b].count;
    conf_sum[b] += c;
    correct[b] += r.correct() ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < num_bins; ++b)
    if (bins[b].count > 0) {
      bins[b].mean_confidence = conf_sum[b] / static_cast<double>(bins[b].count);
      bins[b].accuracy = correct[b] / static_cast<double>(bins[b].count);
    }
  return bins;
}

/// Expected calibration error in percent.
inline double ece(std::span<const PredictionRecord> records, std::size_t num_bins) {
  if (num_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  if (records.empty()) return 0.0;
  const auto bins = reliability_bins(records, num_bins);
  double total = 0;
  for (const auto& b : bins)
    total += static_cast<double>(b.count) / static_cast<double>(records.size()) * std::abs(b.accuracy - b.mean_confidence);
  return 100.0 * total;
}

inline double brier(std::span<const PredictionRecord> records) {
  detail::require_records(records, "brier");
  double total = 0;
  for (const auto& r : records)
    for (std::size_t k = 0; k < r.probs.size(); ++k) {
      const double d = r.probs[k] - (static_cast<int>(k) == r.label ? 1.0 : 0.0);
      total += d * d;
    }
  return total / static_cast<double>(records.size());
}

inline double nll(std::span<const PredictionRecord> records) {
  detail::require_records(records, "nll");
  double total = 0;
  for (const auto& r : records) total -= safe_log(r.probs.at(r.label));
  return total / static_cast<double>(records.size());
}

inline void write_reliability_csv(const std::string& path, std::span<const ReliabilityBin> bins) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "bin_low,bin_high,count,mean_confidence,accuracy\n";
  os.precision(10);
  for (const auto& b : bins)
    os << b.low << ',' << b.high << ',' << b.count << ',' << b.mean_confidence << ',' << b.accuracy << '\n';
}

}  // namespace tta

#endif  // TTA_EVALUATION_HPP
