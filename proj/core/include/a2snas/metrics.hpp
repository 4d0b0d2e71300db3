#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace a2snas {

/// K x K counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t classes);

  void add(std::int64_t truth, std::int64_t predicted);
  /// Element-wise sum with a matrix of the same size.
  void merge(const ConfusionMatrix& other);

  std::int64_t classes() const { return k_; }
  std::uint64_t at(std::int64_t truth, std::int64_t predicted) const {
    return counts_[static_cast<std::size_t>(truth * k_ + predicted)];
  }
  std::uint64_t total() const { return total_; }
  std::span<const std::uint64_t> counts() const { return counts_; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::int64_t k_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct MetricsReport {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  /// Recall per class; NaN for classes without true samples.
  std::vector<double> per_class;
  std::uint64_t total = 0;
};

/// Overall accuracy, average per-class recall and Cohen's kappa.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// One metric per line (oa, aa, kappa, per_class), values shown x100 with two decimals.
std::string format_report(const MetricsReport& report);

/// Rows of the matrix, space separated.
std::string format_confusion(const ConfusionMatrix& cm);

/// RGB colour of a class: 0 is black, class k >= 1 takes hue (k - 1) * 360 / K.
std::array<std::uint8_t, 3> class_colour(std::int64_t value, std::int64_t classes);

/// Binary PPM (P6) of a row-major class grid.
std::vector<std::uint8_t> render_map(std::span<const std::uint16_t> grid, std::int64_t width, std::int64_t height,
                                     std::int64_t classes);

}  // namespace a2snas
