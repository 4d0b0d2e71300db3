#include "a2snas/hsidata.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "a2snas/rng.hpp"
#include "binary_io.hpp"

namespace a2snas {

namespace fs = std::filesystem;

void HsiCube::validate() const {
  if (bands < 1 || height < 1 || width < 1) throw FormatError("cube extents must be positive");
  if (static_cast<std::int64_t>(data.size()) != bands * height * width) {
    throw FormatError("cube data holds " + std::to_string(data.size()) + " values, expected " +
                      std::to_string(bands * height * width));
  }
  if (static_cast<std::int64_t>(labels.size()) != height * width) {
    throw FormatError("label map holds " + std::to_string(labels.size()) + " values, expected " +
                      std::to_string(height * width));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > num_classes()) {
      throw FormatError("label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) + " exceeds " +
                        std::to_string(num_classes()) + " classes");
    }
  }
}

void save_cube(const HsiCube& cube, const fs::path& dir) {
  cube.validate();
  fs::create_directories(dir);
  nlohmann::ordered_json meta = {{"bands", cube.bands},   {"height", cube.height},
                                 {"width", cube.width},   {"dtype", "f32le"},
                                 {"num_classes", cube.num_classes()}, {"class_names", cube.class_names}};
  detail::write_text(dir / "meta", meta.dump(2) + "\n");
  std::vector<char> bytes;
  bytes.reserve(cube.data.size() * 4);
  for (float v : cube.data) detail::put_f32(bytes, v);
  detail::write_file(dir / "cube.f32", bytes);
  bytes.clear();
  for (std::uint16_t v : cube.labels) detail::put_u16(bytes, v);
  detail::write_file(dir / "labels.u16", bytes);
}

HsiCube load_cube(const fs::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_text(dir / "meta"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("meta: " + std::string(e.what()));
  }
  HsiCube cube;
  try {
    cube.bands = meta.at("bands").get<std::int64_t>();
    cube.height = meta.at("height").get<std::int64_t>();
    cube.width = meta.at("width").get<std::int64_t>();
    const auto dtype = meta.at("dtype").get<std::string>();
    if (dtype != "f32le") throw FormatError("meta: unknown dtype tag '" + dtype + "'");
    cube.class_names = meta.at("class_names").get<std::vector<std::string>>();
    const auto k = meta.at("num_classes").get<std::int64_t>();
    if (k != cube.num_classes()) {
      throw FormatError("meta: num_classes " + std::to_string(k) + " disagrees with " +
                        std::to_string(cube.class_names.size()) + " class names");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("meta: " + std::string(e.what()));
  }
  if (cube.bands < 1 || cube.height < 1 || cube.width < 1) throw FormatError("meta: extents must be positive");
  const auto raw = detail::read_file(dir / "cube.f32");
  const auto expected = static_cast<std::size_t>(4 * cube.bands * cube.height * cube.width);
  if (raw.size() != expected) {
    throw FormatError("cube.f32 has " + std::to_string(raw.size()) + " bytes, expected " + std::to_string(expected));
  }
  cube.data.resize(expected / 4);
  for (std::size_t i = 0; i < cube.data.size(); ++i) cube.data[i] = detail::get_f32(raw.data() + 4 * i);
  const auto lab = detail::read_file(dir / "labels.u16");
  const auto expected_lab = static_cast<std::size_t>(2 * cube.height * cube.width);
  if (lab.size() != expected_lab) {
    throw FormatError("labels.u16 has " + std::to_string(lab.size()) + " bytes, expected " + std::to_string(expected_lab));
  }
  cube.labels.resize(expected_lab / 2);
  for (std::size_t i = 0; i < cube.labels.size(); ++i) cube.labels[i] = detail::get_u16(lab.data() + 2 * i);
  cube.validate();
  return cube;
}

HsiCube normalize_bands(HsiCube cube) {
  const std::int64_t plane = cube.height * cube.width;
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    float* p = cube.data.data() + b * plane;
    double sum = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
    const double mean = sum / static_cast<double>(plane);
    double sq = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(p[i]) - mean;
      sq += d * d;
    }
    const double denom = std::sqrt(sq / static_cast<double>(plane)) + 1e-8;
    for (std::int64_t i = 0; i < plane; ++i) p[i] = static_cast<float>((static_cast<double>(p[i]) - mean) / denom);
  }
  return cube;
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

namespace {

void fill_patch(const HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t p, float* dst) {
  const std::int64_t half = p / 2;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(p)), cols(static_cast<std::size_t>(p));
  for (std::int64_t i = 0; i < p; ++i) {
    rows[static_cast<std::size_t>(i)] = reflect_index(row - half + i, cube.height);
    cols[static_cast<std::size_t>(i)] = reflect_index(col - half + i, cube.width);
  }
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    const float* band = cube.data.data() + b * cube.height * cube.width;
    for (std::int64_t i = 0; i < p; ++i) {
      const float* src = band + rows[static_cast<std::size_t>(i)] * cube.width;
      for (std::int64_t j = 0; j < p; ++j) *dst++ = src[cols[static_cast<std::size_t>(j)]];
    }
  }
}

void check_center(const HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t p) {
  if (p < 1 || p % 2 == 0) throw ArgumentError("patch size must be odd, got " + std::to_string(p));
  if (row < 0 || row >= cube.height || col < 0 || col >= cube.width) {
    throw ArgumentError("pixel (" + std::to_string(row) + "," + std::to_string(col) + ") is outside the cube");
  }
  if (cube.label(row, col) == 0) {
    throw ArgumentError("pixel (" + std::to_string(row) + "," + std::to_string(col) + ") is unlabeled");
  }
}

}  // namespace

Patch extract_patch(const HsiCube& cube, std::int64_t row, std::int64_t col, std::int64_t patch_size) {
  check_center(cube, row, col, patch_size);
  Tensor<float> t(Shape{1, 1, cube.bands, patch_size, patch_size});
  fill_patch(cube, row, col, patch_size, t.mutable_values().data());
  return {{static_cast<std::int32_t>(row), static_cast<std::int32_t>(col)}, t,
          static_cast<std::int32_t>(cube.label(row, col)) - 1};
}

std::vector<PixelList> pixels_by_class(const HsiCube& cube) {
  std::vector<PixelList> groups(static_cast<std::size_t>(cube.num_classes()));
  for (std::int64_t r = 0; r < cube.height; ++r)
    for (std::int64_t c = 0; c < cube.width; ++c) {
      const auto l = cube.label(r, c);
      if (l > 0) groups[l - 1u].push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)});
    }
  return groups;
}

std::vector<std::int64_t> allocate_budget(const std::vector<std::int64_t>& class_sizes, std::int64_t total) {
  std::int64_t population = 0, nonempty = 0;
  for (auto n : class_sizes) {
    population += n;
    nonempty += n > 0 ? 1 : 0;
  }
  if (nonempty == 0) throw ArgumentError("budget allocation over an empty class set");
  if (total < nonempty || total > population) {
    throw ArgumentError("budget " + std::to_string(total) + " must lie in [" + std::to_string(nonempty) + ", " +
                        std::to_string(population) + "]");
  }
  const std::size_t k = class_sizes.size();
  std::vector<std::int64_t> alloc(k, 0), rem(k, 0);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (class_sizes[i] == 0) continue;
    alloc[i] = std::max<std::int64_t>(1, total * class_sizes[i] / population);
    rem[i] = total * class_sizes[i] % population;
    assigned += alloc[i];
  }
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  // Largest remainder first; ties to the lower class index.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  while (assigned < total) {
    for (std::size_t i : order) {
      if (assigned == total) break;
      if (class_sizes[i] == 0 || alloc[i] >= class_sizes[i]) continue;
      ++alloc[i];
      ++assigned;
    }
  }
  while (assigned > total) {
    for (auto it = order.rbegin(); it != order.rend() && assigned > total; ++it) {
      if (alloc[*it] <= 1) continue;
      --alloc[*it];
      --assigned;
    }
  }
  return alloc;
}

Splits make_splits(const HsiCube& cube, const SplitSpec& spec) {
  auto groups = pixels_by_class(cube);
  bool any = false;
  for (const auto& g : groups) any = any || !g.empty();
  if (!any) throw ArgumentError("no labeled pixels to split");
  for (std::size_t k = 0; k < groups.size(); ++k) Rng::stream(spec.seed, "split/class", k + 1).shuffle(groups[k]);

  Splits out;
  const auto take = [](const PixelList& src, std::size_t from, std::size_t count, PixelList& dst) {
    dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(from),
               src.begin() + static_cast<std::ptrdiff_t>(from + count));
  };
  if (spec.mode == SplitSpec::Mode::kPerClassCounts) {
    if (spec.train_per_class < 1 || spec.val_per_class < 1) throw ArgumentError("per-class counts must be >= 1");
    for (const auto& g : groups) {
      const auto n = static_cast<std::int64_t>(g.size());
      std::int64_t train = spec.train_per_class, val = spec.val_per_class;
      if (n < train + val + 1) {
        train = n / 2;
        val = n / 4;
      }
      take(g, 0, static_cast<std::size_t>(train), out.train);
      take(g, static_cast<std::size_t>(train), static_cast<std::size_t>(val), out.val);
      take(g, static_cast<std::size_t>(train + val), static_cast<std::size_t>(n - train - val), out.test);
    }
    return out;
  }
  if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0) throw ArgumentError("train_fraction must lie in [0, 1]");
  std::vector<std::int64_t> sizes;
  for (const auto& g : groups) sizes.push_back(static_cast<std::int64_t>(g.size()));
  const auto alloc = allocate_budget(sizes, spec.total);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const std::int64_t a = alloc[k];
    const auto train = std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::floor(static_cast<double>(a) * spec.train_fraction + 0.5)), 0, a);
    take(groups[k], 0, static_cast<std::size_t>(train), out.train);
    take(groups[k], static_cast<std::size_t>(train), static_cast<std::size_t>(a - train), out.val);
    take(groups[k], static_cast<std::size_t>(a), static_cast<std::size_t>(sizes[k] - a), out.test);
  }
  return out;
}

std::vector<float> synthetic_template(const SyntheticSpec& spec, std::int64_t class_index) {
  const double k = static_cast<double>(spec.classes);
  const double center = (static_cast<double>(class_index) + 0.5) * static_cast<double>(spec.bands) / k;
  const double width = static_cast<double>(spec.bands) / (2.0 * k);
  std::vector<float> t(static_cast<std::size_t>(spec.bands));
  for (std::int64_t b = 0; b < spec.bands; ++b) {
    const double d = static_cast<double>(b) - center;
    t[static_cast<std::size_t>(b)] = static_cast<float>(std::exp(-(d * d) / (2.0 * width * width)));
  }
  return t;
}

HsiCube gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ArgumentError("synthetic cube needs at least 2 classes");
  if (spec.bands < 1 || spec.height < 1 || spec.width < 1) throw ArgumentError("synthetic extents must be positive");
  if (spec.classes > spec.height * spec.width) throw ArgumentError("more classes than pixels");
  if (spec.classes > 65535) throw ArgumentError("too many classes for 16-bit labels");
  HsiCube cube;
  cube.bands = spec.bands;
  cube.height = spec.height;
  cube.width = spec.width;
  for (std::int64_t k = 1; k <= spec.classes; ++k) cube.class_names.push_back("class_" + std::to_string(k));

  Rng seeds = Rng::stream(seed, "synthetic/seeds");
  std::vector<Pixel> centers;
  while (static_cast<std::int64_t>(centers.size()) < spec.classes) {
    const Pixel p{static_cast<std::int32_t>(seeds.below(static_cast<std::uint64_t>(spec.height))),
                  static_cast<std::int32_t>(seeds.below(static_cast<std::uint64_t>(spec.width)))};
    if (std::find(centers.begin(), centers.end(), p) == centers.end()) centers.push_back(p);
  }
  cube.labels.resize(static_cast<std::size_t>(spec.height * spec.width));
  for (std::int64_t r = 0; r < spec.height; ++r)
    for (std::int64_t c = 0; c < spec.width; ++c) {
      std::size_t best = 0;
      std::int64_t best_d = -1;
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const std::int64_t dr = r - centers[k].row, dc = c - centers[k].col;
        const std::int64_t d = dr * dr + dc * dc;
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = k;
        }
      }
      cube.labels[static_cast<std::size_t>(r * spec.width + c)] = static_cast<std::uint16_t>(best + 1);
    }

  std::vector<std::vector<float>> templates;
  for (std::int64_t k = 0; k < spec.classes; ++k) templates.push_back(synthetic_template(spec, k));
  Rng noise = Rng::stream(seed, "synthetic/noise");
  cube.data.resize(static_cast<std::size_t>(spec.bands * spec.height * spec.width));
  std::size_t i = 0;
  for (std::int64_t b = 0; b < spec.bands; ++b)
    for (std::int64_t r = 0; r < spec.height; ++r)
      for (std::int64_t c = 0; c < spec.width; ++c) {
        const auto cls = cube.labels[static_cast<std::size_t>(r * spec.width + c)] - 1u;
        const double v = static_cast<double>(templates[cls][static_cast<std::size_t>(b)]) +
                         (spec.noise > 0.0 ? spec.noise * noise.normal() : 0.0);
        cube.data[i++] = static_cast<float>(v);
      }
  return cube;
}

std::vector<PixelList> plan_batches(const PixelList& pixels, std::int64_t batch_size, std::uint64_t seed,
                                    const std::string& stream, std::uint64_t epoch, bool shuffle) {
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  PixelList order = pixels;
  if (shuffle) Rng::stream(seed, stream, epoch).shuffle(order);
  std::vector<PixelList> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch make_batch(const HsiCube& cube, const PixelList& pixels, std::int64_t patch_size) {
  if (pixels.empty()) throw ArgumentError("empty batch");
  const auto n = static_cast<std::int64_t>(pixels.size());
  Batch batch;
  batch.x = Tensor<float>(Shape{n, 1, cube.bands, patch_size, patch_size});
  auto& v = batch.x.mutable_values();
  const std::int64_t per = cube.bands * patch_size * patch_size;
  for (std::int64_t i = 0; i < n; ++i) {
    const Pixel p = pixels[static_cast<std::size_t>(i)];
    check_center(cube, p.row, p.col, patch_size);
    fill_patch(cube, p.row, p.col, patch_size, v.data() + i * per);
    batch.labels.push_back(static_cast<std::int32_t>(cube.label(p.row, p.col)) - 1);
  }
  batch.pixels = pixels;
  return batch;
}

}  // namespace a2snas
