#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "a2snas/search.hpp"

namespace a2snas {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kWeightsMagic[] = "A2SNASW1";

/// Tensor table: magic, then per entry in name order: u32 name length, name,
/// u8 rank, u32 extents, f32 values. All little-endian.
std::vector<char> encode_tensors(const std::map<std::string, Tensor<float>>& tensors);
/// Throws FormatError on a bad magic or a truncated table; `what` names the source.
std::map<std::string, Tensor<float>> decode_tensors(const std::vector<char>& bytes, const std::string& what);

/// Writes manifest, genotype, weights.bin, optimizer.bin and state.json into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Network& net, const TrainState& state);

struct Checkpoint {
  Network net;
  TrainState state;
};

/// Rebuilds the network and training state. Optimizer hyperparameters come from
/// `cfg`. Throws FormatError on any inconsistency, including a fingerprint that
/// differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const SearchConfig& cfg,
                           const std::optional<Fingerprint>& expected = std::nullopt);

/// Comma-separated history; supernet histories carry the 42 distribution columns.
std::string history_csv(const std::vector<EpochRecord>& history, bool with_arch);

}  // namespace a2snas
