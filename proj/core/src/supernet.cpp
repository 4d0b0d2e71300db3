#include "a2snas/supernet.hpp"

#include <nlohmann/json.hpp>

namespace a2snas {

namespace {

using ordered_json = nlohmann::ordered_json;

const Tensor<float>& lookup(const std::map<std::string, Tensor<float>>& bound, const std::string& name) {
  auto it = bound.find(name);
  if (it == bound.end()) throw ArgumentError("parameter '" + name + "' is not bound");
  return it->second;
}

}  // namespace

void SupernetConfig::validate() const {
  if (stem_channels < 1) throw ArgumentError("stem_channels must be positive");
  if (patch_size < 1 || patch_size % 2 == 0) {
    throw ArgumentError("patch_size must be a positive odd number, got " + std::to_string(patch_size));
  }
  if (bands < 1) throw ArgumentError("bands must be positive");
  if (num_classes < 1) throw ArgumentError("num_classes must be positive");
}

double Genotype::pooling_occupancy() const {
  if (choices.empty()) return 0.0;
  std::size_t pooled = 0;
  for (const auto& c : choices) pooled += c.outer != OuterOp::kNoPool ? 1 : 0;
  return static_cast<double>(pooled) / static_cast<double>(choices.size());
}

std::string serialize_genotype(const Genotype& g) {
  ordered_json doc;
  doc["blocks"] = ordered_json::array();
  for (const auto& c : g.choices) {
    doc["blocks"].push_back({{"outer", std::string(to_string(c.outer))}, {"inner", std::string(to_string(c.inner))}});
  }
  doc["fingerprint"] = {{"stem_channels", g.fingerprint.stem_channels},
                        {"patch_size", g.fingerprint.patch_size},
                        {"bands", g.fingerprint.bands},
                        {"num_classes", g.fingerprint.num_classes}};
  return doc.dump(2) + "\n";
}

Genotype parse_genotype(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("genotype: syntax error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("blocks") || !doc["blocks"].is_array()) {
    throw FormatError("genotype: missing 'blocks' array");
  }
  const auto& blocks = doc["blocks"];
  if (blocks.size() != static_cast<std::size_t>(kNumBlocks)) {
    throw FormatError("genotype: expected 6 blocks, found " + std::to_string(blocks.size()));
  }
  Genotype g;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string where = "genotype: blocks[" + std::to_string(i) + "]";
    if (!b.is_object() || !b.contains("outer") || !b.contains("inner") || !b["outer"].is_string() ||
        !b["inner"].is_string()) {
      throw FormatError(where + " needs string fields 'outer' and 'inner'");
    }
    const auto outer = parse_outer(b["outer"].get<std::string>());
    if (!outer) throw FormatError(where + ".outer: unknown variant '" + b["outer"].get<std::string>() + "'");
    const auto inner = parse_inner(b["inner"].get<std::string>());
    if (!inner) throw FormatError(where + ".inner: unknown variant '" + b["inner"].get<std::string>() + "'");
    g.choices.push_back({*outer, *inner});
  }
  if (!doc.contains("fingerprint") || !doc["fingerprint"].is_object()) {
    throw FormatError("genotype: missing 'fingerprint' object");
  }
  const auto& fp = doc["fingerprint"];
  const auto field = [&](const char* key) -> std::int64_t {
    if (!fp.contains(key) || !fp[key].is_number_integer()) {
      throw FormatError(std::string("genotype: fingerprint.") + key + " missing or not an integer");
    }
    return fp[key].get<std::int64_t>();
  };
  g.fingerprint = {field("stem_channels"), field("patch_size"), field("bands"), field("num_classes")};
  return g;
}

std::string Network::block_prefix(int block_id, InnerOp inner) {
  return "blocks." + std::to_string(block_id) + "." + std::string(to_string(inner));
}

std::string Network::arch_name(int block_id, bool outer) {
  return "arch." + std::to_string(block_id) + (outer ? ".beta" : ".alpha");
}

void Network::add_conv_unit(const std::string& prefix, std::int64_t cin, std::int64_t cout, std::int64_t k) {
  const std::string w = prefix + ".conv.weight";
  params_.add(w, he_normal(Shape{cout, cin, k, k, k}, cin * k * k * k, seed_, w));
  params_.add(prefix + ".conv.bias", Tensor<float>::zeros(Shape{cout}));
  params_.add(prefix + ".bn.gamma", Tensor<float>::full(Shape{cout}, 1.0f));
  params_.add(prefix + ".bn.beta", Tensor<float>::zeros(Shape{cout}));
  params_.add(prefix + ".bn.running_mean", Tensor<float>::zeros(Shape{cout}), /*trainable=*/false);
  params_.add(prefix + ".bn.running_var", Tensor<float>::full(Shape{cout}, 1.0f), /*trainable=*/false);
}

namespace {

void add_skeleton(const SupernetConfig& cfg, auto&& add_unit, auto&& add_block) {
  add_unit("stem", 1, cfg.stage_channels(0), 3);
  for (int stage = 0; stage < kNumStages; ++stage) {
    if (stage > 0) {
      add_unit("stage" + std::to_string(stage) + ".down", cfg.stage_channels(stage - 1), cfg.stage_channels(stage), 3);
    }
    for (int j = 0; j < kBlocksPerStage; ++j) add_block(stage * kBlocksPerStage + j, cfg.stage_channels(stage));
  }
}

void add_head(ParamStore& params, const SupernetConfig& cfg, std::uint64_t seed) {
  const std::int64_t c = cfg.stage_channels(kNumStages - 1);
  params.add("head.weight", he_normal(Shape{cfg.num_classes, c}, c, seed, "head.weight"));
  params.add("head.bias", Tensor<float>::zeros(Shape{cfg.num_classes}));
}

}  // namespace

Network build_supernet(const SupernetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network net(NetKind::kSupernet, cfg, seed);
  add_skeleton(
      cfg, [&](const std::string& p, std::int64_t ci, std::int64_t co, std::int64_t k) { net.add_conv_unit(p, ci, co, k); },
      [&](int block, std::int64_t channels) {
        for (InnerOp inner : kInnerOps) {
          net.add_conv_unit(Network::block_prefix(block, inner), channels, channels, kernel_size(inner));
        }
        net.params_.add(Network::arch_name(block, true), Tensor<float>::zeros(Shape{3}), true, ParamKind::kArch);
        net.params_.add(Network::arch_name(block, false), Tensor<float>::zeros(Shape{4}), true, ParamKind::kArch);
      });
  add_head(net.params_, cfg, seed);
  return net;
}

Network build_compact(const Genotype& genotype, const SupernetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!(genotype.fingerprint == Fingerprint::of(cfg))) {
    throw ArgumentError("genotype fingerprint does not match the network configuration");
  }
  if (genotype.choices.size() != static_cast<std::size_t>(kNumBlocks)) {
    throw ArgumentError("genotype must hold 6 blocks");
  }
  Network net(NetKind::kCompact, cfg, seed);
  net.genotype_ = genotype;
  add_skeleton(
      cfg, [&](const std::string& p, std::int64_t ci, std::int64_t co, std::int64_t k) { net.add_conv_unit(p, ci, co, k); },
      [&](int block, std::int64_t channels) {
        const InnerOp inner = genotype.choices[static_cast<std::size_t>(block)].inner;
        net.add_conv_unit(Network::block_prefix(block, inner), channels, channels, kernel_size(inner));
      });
  add_head(net.params_, cfg, seed);
  return net;
}

Candidate<float> Network::candidate(const std::map<std::string, Tensor<float>>& bound, const std::string& prefix,
                                    ForwardOptions opts) {
  Candidate<float> c{lookup(bound, prefix + ".conv.weight"), lookup(bound, prefix + ".conv.bias"),
                     lookup(bound, prefix + ".bn.gamma"), lookup(bound, prefix + ".bn.beta"), std::nullopt};
  const bool attach = opts.mode == ops::NormMode::kRunningStats || opts.update_running;
  if (attach) {
    auto& mean = params_.at(prefix + ".bn.running_mean").value.mutable_values();
    auto& var = params_.at(prefix + ".bn.running_var").value.mutable_values();
    c.running = ops::RunningStats<float>{std::span<float>(mean), std::span<float>(var)};
  }
  return c;
}

Tensor<float> Network::conv_unit(Tape<float>* tape, const std::map<std::string, Tensor<float>>& bound,
                                 const std::string& prefix, const Tensor<float>& x, const ops::Conv3dGeometry& geom,
                                 ForwardOptions opts) {
  const Candidate<float> c = candidate(bound, prefix, opts);
  Tensor<float> y = ops::conv3d(tape, x, c.weight, c.bias, geom);
  y = ops::batch_norm3d(tape, y, c.gamma, c.beta, opts.mode, c.running ? &*c.running : nullptr);
  return ops::relu(tape, y);
}

Tensor<float> Network::forward(Tape<float>* tape, const std::map<std::string, Tensor<float>>& bound,
                               const Tensor<float>& x, ForwardOptions opts) {
  const Shape& s = x.shape();
  if (s.rank() != 5 || s[1] != 1 || s[2] != cfg_.bands || s[3] != cfg_.patch_size || s[4] != cfg_.patch_size) {
    throw ShapeError("stem: expected input (N,1," + std::to_string(cfg_.bands) + "," + std::to_string(cfg_.patch_size) +
                     "," + std::to_string(cfg_.patch_size) + "), got " + s.str());
  }
  Tensor<float> h = conv_unit(tape, bound, "stem", x, {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}, opts);
  for (int stage = 0; stage < kNumStages; ++stage) {
    if (stage > 0) {
      h = conv_unit(tape, bound, "stage" + std::to_string(stage) + ".down", h, {{1, 2, 2}, {1, 1, 1}, {1, 1, 1}}, opts);
    }
    const std::int64_t channels = cfg_.stage_channels(stage);
    for (int j = 0; j < kBlocksPerStage; ++j) {
      const int block = stage * kBlocksPerStage + j;
      if (kind_ == NetKind::kSupernet) {
        A2SConvBlock<float> b;
        b.block_id = block;
        b.channels = channels;
        for (InnerOp inner : kInnerOps) {
          b.candidates[static_cast<std::size_t>(inner)] = candidate(bound, block_prefix(block, inner), opts);
        }
        b.logits = {lookup(bound, arch_name(block, true)), lookup(bound, arch_name(block, false))};
        h = mixed_forward(tape, b, h, opts.mode);
      } else {
        const Choice choice = genotype_->choices[static_cast<std::size_t>(block)];
        h = discrete_forward(tape, candidate(bound, block_prefix(block, choice.inner), opts), channels, h, choice,
                             opts.mode);
      }
    }
  }
  return ops::classifier_head(tape, h, lookup(bound, "head.weight"), lookup(bound, "head.bias"));
}

Tensor<float> Network::forward(Tape<float>* tape, Track track, const Tensor<float>& x, ForwardOptions opts) {
  const auto bound = params_.bind(tape, track);
  return forward(tape, bound, x, opts);
}

ArchParams Network::arch_params() const {
  if (kind_ != NetKind::kSupernet) throw ArgumentError("only a supernet carries architecture logits");
  ArchParams arch;
  for (int block = 0; block < kNumBlocks; ++block) {
    ArchParams::Block b;
    const auto& beta = params_.at(arch_name(block, true)).value;
    const auto& alpha = params_.at(arch_name(block, false)).value;
    for (std::size_t i = 0; i < b.beta.size(); ++i) b.beta[i] = static_cast<double>(beta[static_cast<std::int64_t>(i)]);
    for (std::size_t i = 0; i < b.alpha.size(); ++i) b.alpha[i] = static_cast<double>(alpha[static_cast<std::int64_t>(i)]);
    arch.blocks.push_back(b);
  }
  return arch;
}

std::vector<Tensor<float>> Network::logit_groups(const std::map<std::string, Tensor<float>>& bound) {
  std::vector<Tensor<float>> groups;
  for (int block = 0; block < kNumBlocks; ++block) {
    groups.push_back(lookup(bound, arch_name(block, true)));
    groups.push_back(lookup(bound, arch_name(block, false)));
  }
  return groups;
}

Genotype derive_genotype(const ArchParams& arch, const Fingerprint& fingerprint) {
  Genotype g;
  g.fingerprint = fingerprint;
  for (int block = 0; block < static_cast<int>(arch.blocks.size()); ++block) g.choices.push_back(derive_block(arch, block));
  return g;
}

std::size_t transplant(const Network& from, Network& to) {
  std::size_t copied = 0;
  for (auto& [name, p] : to.params()) {
    if (!from.params().contains(name)) continue;
    const auto& src = from.params().at(name).value;
    if (!(src.shape() == p.value.shape())) throw ShapeError("transplant shape mismatch for '" + name + "'");
    p.value = src.detached();
    ++copied;
  }
  return copied;
}

}  // namespace a2snas
