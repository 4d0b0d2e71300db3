#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "a2snas/tensor.hpp"

namespace a2snas {

/// Hyperspectral cube: band-major float data plus a row-major label map
/// where 0 marks an unlabeled pixel and 1..K are classes.
struct HsiCube {
  std::int64_t bands = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;

  std::int64_t num_classes() const { return static_cast<std::int64_t>(class_names.size()); }
  float at(std::int64_t band, std::int64_t row, std::int64_t col) const {
    return data[static_cast<std::size_t>((band * height + row) * width + col)];
  }
  std::uint16_t label(std::int64_t row, std::int64_t col) const {
    return labels[static_cast<std::size_t>(row * width + col)];
  }
  /// Throws FormatError if sizes or labels are inconsistent.
  void validate() const;
};

/// Writes `meta`, `cube.f32` and `labels.u16` into `dir` (created if needed).
void save_cube(const HsiCube& cube, const std::filesystem::path& dir);
HsiCube load_cube(const std::filesystem::path& dir);

/// Per-band z-score over all pixels: (x - mean) / (std + 1e-8).
HsiCube normalize_bands(HsiCube cube);

struct Pixel {
  std::int32_t row = 0;
  std::int32_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};
using PixelList = std::vector<Pixel>;

struct Patch {
  Pixel center;
  Tensor<float> tensor;  // (1, 1, bands, P, P)
  std::int32_t label = 0;  // class index, 0-based
};

/// Mirror index for borders: -1 -> 1, n -> n - 2 (edge pixel not repeated).
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

/// P x P window around a labeled pixel, full spectral depth, mirror-padded.
Patch extract_patch(const HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t patch_size = 19);

struct SplitSpec {
  enum class Mode { kPerClassCounts, kTotalBudget };
  Mode mode = Mode::kPerClassCounts;
  std::int64_t train_per_class = 50;
  std::int64_t val_per_class = 30;
  std::int64_t total = 0;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct Splits {
  PixelList train;
  PixelList val;
  PixelList test;
};

/// Pixels grouped by class (index 0 holds class 1), each group in row-major order.
std::vector<PixelList> pixels_by_class(const HsiCube& cube);

/// Budget per class: proportional, largest-remainder rounding, at least 1 per class.
std::vector<std::int64_t> allocate_budget(const std::vector<std::int64_t>& class_sizes, std::int64_t total);

Splits make_splits(const HsiCube& cube, const SplitSpec& spec);

struct SyntheticSpec {
  std::int64_t classes = 5;
  std::int64_t bands = 32;
  std::int64_t height = 64;
  std::int64_t width = 64;
  double noise = 0.1;
};

/// Class-k spectrum template: exp(-(b - c_k)^2 / (2 w^2)), c_k = (k + 0.5) * bands / K, w = bands / (2K).
std::vector<float> synthetic_template(const SyntheticSpec& spec, std::int64_t class_index);

/// Voronoi label map over K random seeds, every pixel = its class template + N(0, noise).
HsiCube gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct Batch {
  Tensor<float> x;  // (N, 1, bands, P, P)
  std::vector<std::int32_t> labels;
  PixelList pixels;
};

/// Pixel batches of one epoch. Shuffled with the stream keyed by (seed, stream, epoch)
/// when `shuffle`; the last batch may be short.
std::vector<PixelList> plan_batches(const PixelList& pixels, std::int64_t batch_size, std::uint64_t seed,
                                    const std::string& stream, std::uint64_t epoch, bool shuffle);

/// Materializes patches of `pixels` into one batch tensor.
Batch make_batch(const HsiCube& cube, const PixelList& pixels, std::int64_t patch_size);

}  // namespace a2snas
