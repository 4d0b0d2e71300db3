#include "a2snas/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "a2snas/error.hpp"

namespace a2snas {

ConfusionMatrix::ConfusionMatrix(std::int64_t classes) : k_(classes) {
  if (classes < 1) throw ArgumentError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes * classes), 0);
}

void ConfusionMatrix::add(std::int64_t truth, std::int64_t predicted) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) {
    throw ArgumentError("confusion entry (" + std::to_string(truth) + "," + std::to_string(predicted) +
                        ") outside [0, " + std::to_string(k_) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth * k_ + predicted)];
  ++total_;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ArgumentError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ArgumentError("metrics of an empty confusion matrix");
  const std::int64_t k = cm.classes();
  const double total = static_cast<double>(cm.total());
  std::vector<double> rows(static_cast<std::size_t>(k), 0.0), cols(static_cast<std::size_t>(k), 0.0);
  double trace = 0.0;
  for (std::int64_t i = 0; i < k; ++i)
    for (std::int64_t j = 0; j < k; ++j) {
      const double v = static_cast<double>(cm.at(i, j));
      rows[static_cast<std::size_t>(i)] += v;
      cols[static_cast<std::size_t>(j)] += v;
      if (i == j) trace += v;
    }
  MetricsReport r;
  r.total = cm.total();
  r.oa = trace / total;
  double recall_sum = 0.0;
  int nonempty = 0;
  for (std::int64_t i = 0; i < k; ++i) {
    const double row = rows[static_cast<std::size_t>(i)];
    if (row > 0.0) {
      const double recall = static_cast<double>(cm.at(i, i)) / row;
      r.per_class.push_back(recall);
      recall_sum += recall;
      ++nonempty;
    } else {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  r.aa = recall_sum / static_cast<double>(nonempty);
  // Integer form (N*trace - sum r_i c_i) / (N^2 - sum r_i c_i): one rounding at the end.
  long double chance = 0.0L;
  for (std::int64_t i = 0; i < k; ++i)
    chance += static_cast<long double>(rows[static_cast<std::size_t>(i)]) * cols[static_cast<std::size_t>(i)];
  const long double n = total;
  const long double denom = n * n - chance;
  if (denom == 0.0L) {
    r.kappa = r.oa == 1.0 ? 1.0 : 0.0;
  } else {
    r.kappa = static_cast<double>((n * static_cast<long double>(trace) - chance) / denom);
  }
  return r;
}

namespace {

std::string percent(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

}  // namespace

std::string format_report(const MetricsReport& report) {
  std::ostringstream os;
  os << "oa: " << percent(report.oa) << '\n';
  os << "aa: " << percent(report.aa) << '\n';
  os << "kappa: " << percent(report.kappa) << '\n';
  os << "per_class:";
  for (double v : report.per_class) os << ' ' << percent(v);
  os << '\n';
  return os.str();
}

std::string format_confusion(const ConfusionMatrix& cm) {
  std::ostringstream os;
  for (std::int64_t i = 0; i < cm.classes(); ++i) {
    for (std::int64_t j = 0; j < cm.classes(); ++j) os << (j ? " " : "") << cm.at(i, j);
    os << '\n';
  }
  return os.str();
}

std::array<std::uint8_t, 3> class_colour(std::int64_t value, std::int64_t classes) {
  if (value == 0) return {0, 0, 0};
  const double hue = static_cast<double>(value - 1) * 360.0 / static_cast<double>(classes);
  const double h = hue / 60.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double x = 1.0 - std::fabs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  const auto channel = [](double c) { return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5)); };
  return {channel(r), channel(g), channel(b)};
}

std::vector<std::uint8_t> render_map(std::span<const std::uint16_t> grid, std::int64_t width, std::int64_t height,
                                     std::int64_t classes) {
  if (width < 1 || height < 1 || static_cast<std::int64_t>(grid.size()) != width * height) {
    throw ArgumentError("map grid does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + grid.size() * 3);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] > classes) {
      throw ArgumentError("map value " + std::to_string(grid[i]) + " at cell " + std::to_string(i) + " exceeds " +
                          std::to_string(classes) + " classes");
    }
    const auto rgb = class_colour(grid[i], classes);
    out.insert(out.end(), rgb.begin(), rgb.end());
  }
  return out;
}

}  // namespace a2snas
