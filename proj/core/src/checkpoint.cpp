#include "a2snas/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace a2snas {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::vector<char> encode_tensors(const std::map<std::string, Tensor<float>>& tensors) {
  std::vector<char> out(kWeightsMagic, kWeightsMagic + 8);
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<char>(t.shape().rank()));
    for (int a = 0; a < t.shape().rank(); ++a) detail::put_u32(out, static_cast<std::uint32_t>(t.shape()[a]));
    for (float v : t.values()) detail::put_f32(out, v);
  }
  return out;
}

std::map<std::string, Tensor<float>> decode_tensors(const std::vector<char>& bytes, const std::string& what) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightsMagic, 8) != 0) {
    throw FormatError(what + ": bad magic, expected " + std::string(kWeightsMagic));
  }
  std::map<std::string, Tensor<float>> out;
  std::size_t pos = 8;
  auto need = [&](std::size_t n, const char* field) {
    if (bytes.size() - pos < n) {
      throw FormatError(what + ": truncated at byte " + std::to_string(pos) + " while reading " + field);
    }
  };
  while (pos < bytes.size()) {
    need(4, "name length");
    const std::uint32_t len = detail::get_u32(bytes.data() + pos);
    pos += 4;
    need(len, "name");
    std::string name(bytes.data() + pos, len);
    pos += len;
    need(1, "rank");
    const int rank = static_cast<unsigned char>(bytes[pos++]);
    if (rank > 5) throw FormatError(what + ": tensor '" + name + "' has rank " + std::to_string(rank));
    need(4 * static_cast<std::size_t>(rank), "extents");
    std::vector<std::int64_t> dims;
    for (int a = 0; a < rank; ++a, pos += 4) dims.push_back(detail::get_u32(bytes.data() + pos));
    Shape shape;
    try {
      shape = Shape(dims);
    } catch (const Error& e) {
      throw FormatError(what + ": tensor '" + name + "': " + e.what());
    }
    const auto n = static_cast<std::size_t>(shape.numel());
    need(4 * n, "values");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = detail::get_f32(bytes.data() + pos + 4 * i);
    pos += 4 * n;
    if (!out.emplace(name, Tensor<float>(shape, std::move(values))).second) {
      throw FormatError(what + ": duplicate tensor '" + name + "'");
    }
  }
  return out;
}

namespace {

const char* kind_name(NetKind k) { return k == NetKind::kSupernet ? "supernet" : "compact"; }

ordered_json fingerprint_json(const Fingerprint& f) {
  return {{"stem_channels", f.stem_channels},
          {"patch_size", f.patch_size},
          {"bands", f.bands},
          {"num_classes", f.num_classes}};
}

ordered_json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"val_oa", r.val_oa},
          {"arch_probs", r.arch_probs}};
}

std::map<std::string, Tensor<float>> prefixed(const std::string& prefix,
                                              const std::map<std::string, Tensor<float>>& tensors) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, t] : tensors) out.emplace(prefix + name, t);
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Network& net, const TrainState& state) {
  fs::create_directories(dir);
  const Fingerprint fp = Fingerprint::of(net.config());
  const Genotype genotype =
      net.kind() == NetKind::kSupernet ? derive_genotype(net.arch_params(), fp) : *net.genotype();

  ordered_json manifest;
  manifest["format"] = "a2snas-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["kind"] = kind_name(net.kind());
  manifest["seed"] = net.seed();
  manifest["fingerprint"] = fingerprint_json(fp);
  manifest["epoch"] = state.epoch;
  manifest["step"] = state.step;
  ordered_json metrics;
  metrics["best_val_oa"] = state.best_val_oa;
  metrics["best_epoch"] = state.best_epoch;
  metrics["last_val_oa"] = state.history.empty() ? 0.0 : state.history.back().val_oa;
  manifest["metrics"] = metrics;
  detail::write_text(dir / "manifest", manifest.dump(2) + "\n");
  detail::write_text(dir / "genotype", serialize_genotype(genotype));

  std::map<std::string, Tensor<float>> weights;
  for (const auto& [name, p] : net.params()) weights.emplace(name, p.value);
  detail::write_file(dir / "weights.bin", encode_tensors(weights));

  auto opt = prefixed("adam.m/", state.adam.first_moments());
  opt.merge(prefixed("adam.v/", state.adam.second_moments()));
  opt.merge(prefixed("sgd.velocity/", state.sgd.velocity()));
  detail::write_file(dir / "optimizer.bin", encode_tensors(opt));

  ordered_json st;
  st["epoch"] = state.epoch;
  st["step"] = state.step;
  st["adam_steps"] = state.adam.steps();
  st["best_val_oa"] = state.best_val_oa;
  st["best_epoch"] = state.best_epoch;
  st["history"] = ordered_json::array();
  for (const auto& r : state.history) st["history"].push_back(record_json(r));
  detail::write_text(dir / "state.json", st.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir, const SearchConfig& cfg, const std::optional<Fingerprint>& expected) {
  if (!fs::is_directory(dir)) throw FormatError("checkpoint directory " + dir.string() + " not found");
  nlohmann::json manifest, st;
  try {
    manifest = nlohmann::json::parse(detail::read_text(dir / "manifest"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
  Fingerprint fp;
  std::string kind;
  std::uint64_t seed = 0;
  try {
    if (manifest.at("format").get<std::string>() != "a2snas-checkpoint") throw FormatError("manifest: unknown format");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("manifest: version " + std::to_string(version) + " unsupported, expected " +
                        std::to_string(kCheckpointVersion));
    }
    kind = manifest.at("kind").get<std::string>();
    seed = manifest.at("seed").get<std::uint64_t>();
    const auto& f = manifest.at("fingerprint");
    fp = {f.at("stem_channels").get<std::int64_t>(), f.at("patch_size").get<std::int64_t>(),
          f.at("bands").get<std::int64_t>(), f.at("num_classes").get<std::int64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
  if (expected && !(*expected == fp)) {
    throw FormatError("checkpoint fingerprint does not match: checkpoint has stem_channels=" +
                      std::to_string(fp.stem_channels) + " patch_size=" + std::to_string(fp.patch_size) +
                      " bands=" + std::to_string(fp.bands) + " num_classes=" + std::to_string(fp.num_classes));
  }
  const Genotype genotype = parse_genotype(detail::read_text(dir / "genotype"));
  if (!(genotype.fingerprint == fp)) throw FormatError("genotype fingerprint disagrees with manifest");

  const SupernetConfig net_cfg = fp.config();
  std::optional<Network> net;
  try {
    if (kind == "supernet") {
      net = build_supernet(net_cfg, seed);
    } else if (kind == "compact") {
      net = build_compact(genotype, net_cfg, seed);
    } else {
      throw FormatError("manifest: unknown kind '" + kind + "'");
    }
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }

  const auto weights = decode_tensors(detail::read_file(dir / "weights.bin"), "weights.bin");
  for (const auto& [name, p] : net->params()) {
    auto it = weights.find(name);
    if (it == weights.end()) throw FormatError("weights.bin: missing parameter '" + name + "'");
    if (!(it->second.shape() == p.value.shape())) {
      throw FormatError("weights.bin: parameter '" + name + "' has shape " + it->second.shape().str() +
                        ", expected " + p.value.shape().str());
    }
  }
  for (const auto& [name, t] : weights) {
    if (!net->params().contains(name)) throw FormatError("weights.bin: unexpected parameter '" + name + "'");
    net->params().at(name).value = t;
  }

  TrainState state = TrainState::fresh(cfg);
  for (const auto& [key, t] : decode_tensors(detail::read_file(dir / "optimizer.bin"), "optimizer.bin")) {
    const auto slash = key.find('/');
    const std::string group = key.substr(0, slash), name = slash == std::string::npos ? "" : key.substr(slash + 1);
    if (!net->params().contains(name)) throw FormatError("optimizer.bin: unknown parameter in '" + key + "'");
    if (!(net->params().at(name).value.shape() == t.shape())) {
      throw FormatError("optimizer.bin: '" + key + "' has shape " + t.shape().str());
    }
    if (group == "adam.m") {
      state.adam.first_moments().emplace(name, t);
    } else if (group == "adam.v") {
      state.adam.second_moments().emplace(name, t);
    } else if (group == "sgd.velocity") {
      state.sgd.velocity().emplace(name, t);
    } else {
      throw FormatError("optimizer.bin: unknown group in '" + key + "'");
    }
  }

  try {
    st = nlohmann::json::parse(detail::read_text(dir / "state.json"));
    state.epoch = st.at("epoch").get<int>();
    state.step = st.at("step").get<std::int64_t>();
    state.adam.set_steps(st.at("adam_steps").get<std::int64_t>());
    state.best_val_oa = st.at("best_val_oa").get<double>();
    state.best_epoch = st.at("best_epoch").get<int>();
    for (const auto& r : st.at("history")) {
      EpochRecord rec;
      rec.epoch = r.at("epoch").get<int>();
      rec.train_loss = r.at("train_loss").get<double>();
      rec.val_loss = r.at("val_loss").get<double>();
      rec.val_oa = r.at("val_oa").get<double>();
      rec.arch_probs = r.at("arch_probs").get<std::vector<double>>();
      state.history.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("state.json: " + std::string(e.what()));
  }
  if (static_cast<int>(state.history.size()) != state.epoch) {
    throw FormatError("state.json: history holds " + std::to_string(state.history.size()) + " epochs, expected " +
                      std::to_string(state.epoch));
  }
  if (manifest.at("epoch").get<int>() != state.epoch) throw FormatError("manifest epoch disagrees with state.json");
  return Checkpoint{std::move(*net), std::move(state)};
}

std::string history_csv(const std::vector<EpochRecord>& history, bool with_arch) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_oa";
  if (with_arch) {
    for (int b = 0; b < kNumBlocks; ++b) {
      for (OuterOp op : kOuterOps) os << ",b" << b << '_' << to_string(op);
      for (InnerOp op : kInnerOps) os << ",b" << b << '_' << to_string(op);
    }
  }
  os << '\n';
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const auto& r : history) {
    os << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_loss) << ',' << num(r.val_oa);
    if (with_arch)
      for (double p : r.arch_probs) os << ',' << num(p);
    os << '\n';
  }
  return os.str();
}

}  // namespace a2snas
