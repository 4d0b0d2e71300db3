#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "a2snas/a2sconv.hpp"
#include "a2snas/parameter.hpp"

namespace a2snas {

inline constexpr int kNumStages = 3;
inline constexpr int kBlocksPerStage = 2;
inline constexpr int kNumBlocks = kNumStages * kBlocksPerStage;

struct SupernetConfig {
  std::int64_t stem_channels = 16;
  std::int64_t patch_size = 19;
  std::int64_t bands = 0;
  std::int64_t num_classes = 0;

  /// Throws ArgumentError on non-positive extents or an even patch size.
  void validate() const;
  /// Channel width of stage 0..2: stem_channels * {1, 2, 4}.
  std::int64_t stage_channels(int stage) const { return stem_channels << stage; }
};

/// The configuration values a genotype or checkpoint is tied to.
struct Fingerprint {
  std::int64_t stem_channels = 0;
  std::int64_t patch_size = 0;
  std::int64_t bands = 0;
  std::int64_t num_classes = 0;

  static Fingerprint of(const SupernetConfig& cfg) {
    return {cfg.stem_channels, cfg.patch_size, cfg.bands, cfg.num_classes};
  }
  SupernetConfig config() const { return {stem_channels, patch_size, bands, num_classes}; }
  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

struct Genotype {
  std::vector<Choice> choices;  // one per block, in block order
  Fingerprint fingerprint;

  /// Fraction of blocks whose outer op pools (spectral or spatial).
  double pooling_occupancy() const;
  friend bool operator==(const Genotype&, const Genotype&) = default;
};

/// Genotype document: {"blocks": [{"outer": ..., "inner": ...} x6], "fingerprint": {...}}.
std::string serialize_genotype(const Genotype& g);
/// Throws FormatError naming the offending position.
Genotype parse_genotype(const std::string& text);

enum class NetKind { kSupernet, kCompact };

struct ForwardOptions {
  ops::NormMode mode = ops::NormMode::kBatchStats;
  /// Accumulate batch statistics into the running moments (batch-stats mode only).
  bool update_running = false;
};

/// Three-stage network: stem + 2 blocks, then two (downsample + 2 blocks)
/// stages, then the classifier head. The supernet mixes every candidate in each
/// block; the compact network keeps only the genotype's branch.
class Network {
 public:
  NetKind kind() const { return kind_; }
  const SupernetConfig& config() const { return cfg_; }
  /// Present for compact networks.
  const std::optional<Genotype>& genotype() const { return genotype_; }
  std::uint64_t seed() const { return seed_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// x: (N, 1, bands, P, P) -> logits (N, num_classes).
  Tensor<float> forward(Tape<float>* tape, const std::map<std::string, Tensor<float>>& bound, const Tensor<float>& x,
                        ForwardOptions opts = {});
  /// Binds parameters (tracking `track` on the tape) and runs forward.
  Tensor<float> forward(Tape<float>* tape, Track track, const Tensor<float>& x, ForwardOptions opts = {});

  /// Current logits of every block (supernet only).
  ArchParams arch_params() const;
  /// Bound logit tensors of every block, in block order, beta before alpha.
  static std::vector<Tensor<float>> logit_groups(const std::map<std::string, Tensor<float>>& bound);

  static std::string block_prefix(int block_id, InnerOp inner);
  static std::string arch_name(int block_id, bool outer);

 private:
  friend Network build_supernet(const SupernetConfig&, std::uint64_t);
  friend Network build_compact(const Genotype&, const SupernetConfig&, std::uint64_t);

  Network(NetKind kind, SupernetConfig cfg, std::uint64_t seed) : kind_(kind), cfg_(cfg), seed_(seed) {}

  void add_conv_unit(const std::string& prefix, std::int64_t cin, std::int64_t cout, std::int64_t k);
  Tensor<float> conv_unit(Tape<float>* tape, const std::map<std::string, Tensor<float>>& bound,
                          const std::string& prefix, const Tensor<float>& x, const ops::Conv3dGeometry& geom,
                          ForwardOptions opts);
  Candidate<float> candidate(const std::map<std::string, Tensor<float>>& bound, const std::string& prefix,
                             ForwardOptions opts);

  NetKind kind_;
  SupernetConfig cfg_;
  std::uint64_t seed_;
  std::optional<Genotype> genotype_;
  ParamStore params_;
};

Network build_supernet(const SupernetConfig& cfg, std::uint64_t seed);
/// Fresh weights for the genotype's branches; throws if the fingerprint disagrees with cfg.
Network build_compact(const Genotype& genotype, const SupernetConfig& cfg, std::uint64_t seed);

/// Argmax derivation of every block.
Genotype derive_genotype(const ArchParams& arch, const Fingerprint& fingerprint);

/// Copies every parameter `to` shares with `from` by name. Returns the number copied.
std::size_t transplant(const Network& from, Network& to);

}  // namespace a2snas
