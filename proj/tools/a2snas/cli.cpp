#include "cli.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "a2snas/checkpoint.hpp"
#include "a2snas/search.hpp"

namespace a2snas::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad invocation: unknown or missing keys, invalid values, missing paths.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or unwritable files outside the library's own formats.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { kInt, kUInt, kReal, kText };

struct KeySpec {
  const char* name;
  Kind kind;
  const char* help;
};

// Every key a config document may hold; each is also a flag (underscores become hyphens).
constexpr KeySpec kKeys[] = {
    {"data", Kind::kText, "dataset directory"},
    {"out", Kind::kText, "output directory (default: <data>.out)"},
    {"seed", Kind::kUInt, "run seed (required)"},
    {"patch_size", Kind::kInt, "patch edge length, odd (default 19)"},
    {"stem_channels", Kind::kInt, "stage-0 channel width (default 16)"},
    {"search_epochs", Kind::kInt, "bi-level search epochs (default 50)"},
    {"retrain_epochs", Kind::kInt, "compact retraining epochs (default 100)"},
    {"batch_size", Kind::kInt, "mini-batch size (default 16)"},
    {"w_lr", Kind::kReal, "Adam learning rate (default 1e-3)"},
    {"w_lr_decay", Kind::kReal, "per-epoch learning-rate factor (default 0.97)"},
    {"adam_beta1", Kind::kReal, "Adam beta1 (default 0.9)"},
    {"adam_beta2", Kind::kReal, "Adam beta2 (default 0.999)"},
    {"adam_eps", Kind::kReal, "Adam epsilon (default 1e-8)"},
    {"arch_lr", Kind::kReal, "architecture SGD learning rate (default 0.01)"},
    {"arch_momentum", Kind::kReal, "architecture SGD momentum (default 0.9)"},
    {"lambda", Kind::kReal, "beta-decay weight (default 1)"},
    {"search_split", Kind::kText, "total_budget or per_class_counts (default total_budget)"},
    {"search_total", Kind::kInt, "search budget in pixels (default 610)"},
    {"search_train_fraction", Kind::kReal, "share of the budget used for weights (default 0.5)"},
    {"search_train_per_class", Kind::kInt, "per-class weight samples (default 50)"},
    {"search_val_per_class", Kind::kInt, "per-class architecture samples (default 30)"},
    {"eval_split", Kind::kText, "per_class_counts or total_budget (default per_class_counts)"},
    {"eval_total", Kind::kInt, "retrain budget in pixels (default 610)"},
    {"eval_train_fraction", Kind::kReal, "train share of the retrain budget (default 0.5)"},
    {"eval_train_per_class", Kind::kInt, "per-class training samples (default 50)"},
    {"eval_val_per_class", Kind::kInt, "per-class validation samples (default 30)"},
};

std::string flag_of(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

struct RunConfig {
  fs::path data;
  fs::path out;
  std::int64_t patch_size = 19;
  std::int64_t stem_channels = 16;
  SearchConfig search;
  SplitSpec search_split;
  SplitSpec eval_split;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

template <class Bytes>
void write_file(const fs::path& p, const Bytes& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + p.string());
}

/// Flag values win over the config document; both are checked against the key's kind.
class Settings {
 public:
  Settings(json doc, std::map<std::string, std::string> flags) : doc_(std::move(doc)), flags_(std::move(flags)) {}

  std::optional<json> get(const KeySpec& key) const {
    if (auto it = flags_.find(key.name); it != flags_.end()) {
      return std::optional<json>(std::in_place, from_flag(key, it->second));
    }
    if (!doc_.contains(key.name)) return std::nullopt;
    const json& v = doc_.at(key.name);
    const bool ok = key.kind == Kind::kText   ? v.is_string()
                    : key.kind == Kind::kReal ? v.is_number()
                    : key.kind == Kind::kUInt ? v.is_number_unsigned()
                                              : v.is_number_integer();
    if (!ok) throw UsageError(std::string("config key '") + key.name + "' has the wrong type: " + v.dump());
    return std::optional<json>(std::in_place, v);
  }

 private:
  static json from_flag(const KeySpec& key, const std::string& text) {
    const auto bad = [&] {
      return UsageError("invalid value '" + text + "' for " + flag_of(key.name));
    };
    const char* first = text.data();
    const char* last = text.data() + text.size();
    switch (key.kind) {
      case Kind::kText:
        return text;
      case Kind::kInt: {
        std::int64_t v = 0;
        const auto r = std::from_chars(first, last, v);
        if (r.ec != std::errc() || r.ptr != last) throw bad();
        return v;
      }
      case Kind::kUInt: {
        std::uint64_t v = 0;
        const auto r = std::from_chars(first, last, v);
        if (r.ec != std::errc() || r.ptr != last) throw bad();
        return v;
      }
      case Kind::kReal: {
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (text.empty() || end != text.c_str() + text.size()) throw bad();
        return v;
      }
    }
    throw bad();
  }

  json doc_;
  std::map<std::string, std::string> flags_;
};

const KeySpec& spec_of(std::string_view name) {
  for (const auto& k : kKeys)
    if (name == k.name) return k;
  throw std::logic_error("unknown key");
}

SplitSpec::Mode split_mode(const std::string& key, const std::string& value) {
  if (value == "total_budget") return SplitSpec::Mode::kTotalBudget;
  if (value == "per_class_counts") return SplitSpec::Mode::kPerClassCounts;
  throw UsageError("config key '" + key + "' must be total_budget or per_class_counts, got '" + value + "'");
}

RunConfig resolve(const Settings& s) {
  RunConfig rc;
  const auto opt = [&](const char* name) { return s.get(spec_of(name)); };
  const auto require = [&](const char* name) {
    auto v = opt(name);
    if (!v) throw UsageError(std::string("missing config key '") + name + "'");
    return *v;
  };
  const auto assign = [&](const char* name, auto& field) {
    if (auto v = opt(name)) field = v->get<std::remove_reference_t<decltype(field)>>();
  };

  rc.data = require("data").get<std::string>();
  rc.search.seed = require("seed").get<std::uint64_t>();
  if (auto v = opt("out")) {
    rc.out = v->get<std::string>();
  } else {
    fs::path base = rc.data;
    if (!base.has_filename()) base = base.parent_path();
    rc.out = base.string() + ".out";
  }
  assign("patch_size", rc.patch_size);
  assign("stem_channels", rc.stem_channels);
  assign("search_epochs", rc.search.search_epochs);
  assign("retrain_epochs", rc.search.retrain_epochs);
  assign("batch_size", rc.search.batch_size);
  assign("w_lr", rc.search.w_lr);
  assign("w_lr_decay", rc.search.w_lr_decay);
  assign("adam_beta1", rc.search.adam_beta1);
  assign("adam_beta2", rc.search.adam_beta2);
  assign("adam_eps", rc.search.adam_eps);
  assign("arch_lr", rc.search.arch_lr);
  assign("arch_momentum", rc.search.arch_momentum);
  assign("lambda", rc.search.lambda);

  rc.search_split.mode = SplitSpec::Mode::kTotalBudget;
  rc.search_split.total = 610;
  rc.eval_split.mode = SplitSpec::Mode::kPerClassCounts;
  rc.eval_split.total = 610;
  if (auto v = opt("search_split")) rc.search_split.mode = split_mode("search_split", v->get<std::string>());
  if (auto v = opt("eval_split")) rc.eval_split.mode = split_mode("eval_split", v->get<std::string>());
  assign("search_total", rc.search_split.total);
  assign("search_train_fraction", rc.search_split.train_fraction);
  assign("search_train_per_class", rc.search_split.train_per_class);
  assign("search_val_per_class", rc.search_split.val_per_class);
  assign("eval_total", rc.eval_split.total);
  assign("eval_train_fraction", rc.eval_split.train_fraction);
  assign("eval_train_per_class", rc.eval_split.train_per_class);
  assign("eval_val_per_class", rc.eval_split.val_per_class);
  rc.search_split.seed = rc.search.seed;
  rc.eval_split.seed = rc.search.seed;

  try {
    rc.search.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  if (rc.patch_size < 1 || rc.patch_size % 2 == 0) throw UsageError("patch_size must be a positive odd number");
  if (rc.stem_channels < 1) throw UsageError("stem_channels must be positive");
  for (const auto* sp : {&rc.search_split, &rc.eval_split}) {
    const std::string which = sp == &rc.search_split ? "search" : "eval";
    if (sp->mode == SplitSpec::Mode::kPerClassCounts && (sp->train_per_class < 1 || sp->val_per_class < 1)) {
      throw UsageError(which + "_train_per_class and " + which + "_val_per_class must be >= 1");
    }
    if (sp->mode == SplitSpec::Mode::kTotalBudget && sp->total < 1) throw UsageError(which + "_total must be >= 1");
    if (sp->train_fraction < 0.0 || sp->train_fraction > 1.0) {
      throw UsageError(which + "_train_fraction must lie in [0, 1]");
    }
  }
  if (!fs::is_directory(rc.data)) throw UsageError("data directory '" + rc.data.string() + "' does not exist");
  if (fs::exists(rc.out) && fs::equivalent(rc.out, rc.data)) {
    throw UsageError("output directory must differ from the data directory");
  }
  return rc;
}

json load_config_document(const std::string& path) {
  if (path.empty()) return json::object();
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw FormatError("config " + path + ": expected a key/value object");
  for (const auto& [key, value] : doc.items()) {
    bool known = false;
    for (const auto& k : kKeys) known = known || key == k.name;
    if (!known) throw UsageError("unknown config key '" + key + "'");
  }
  return doc;
}

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void log_epoch(std::ostream& err, const char* phase, const EpochRecord& r, int total) {
  err << phase << " epoch " << r.epoch << '/' << total << ": train_loss " << fixed(r.train_loss) << " val_loss "
      << fixed(r.val_loss) << " val_oa " << fixed(r.val_oa) << std::endl;
}

struct Loaded {
  HsiCube cube;
  SupernetConfig net_cfg;
};

Loaded load_data(const RunConfig& rc, std::ostream& err) {
  Loaded d{normalize_bands(load_cube(rc.data)), {}};
  d.net_cfg = {rc.stem_channels, rc.patch_size, d.cube.bands, d.cube.num_classes()};
  err << "loaded " << rc.data.string() << ": " << d.cube.bands << " bands, " << d.cube.height << 'x' << d.cube.width
      << ", " << d.cube.num_classes() << " classes" << std::endl;
  return d;
}

bool has_checkpoint(const fs::path& dir) { return fs::exists(dir / "manifest"); }

int run_gen(const std::string& out, std::int64_t classes, std::int64_t bands, std::int64_t size, double noise,
            std::uint64_t seed, std::ostream& err) {
  if (classes < 2 || bands < 1 || size < 1) throw UsageError("gen needs classes >= 2, bands >= 1 and size >= 1");
  if (noise < 0.0) throw UsageError("noise must be >= 0");
  const HsiCube cube = gen_synthetic({classes, bands, size, size, noise}, seed);
  save_cube(cube, out);
  err << "wrote synthetic cube to " << out << " (" << classes << " classes, " << bands << " bands, " << size << 'x'
      << size << ")" << std::endl;
  return kExitOk;
}

int run_search(const RunConfig& rc, bool resume, std::ostream& err) {
  const auto d = load_data(rc, err);
  const Splits splits = make_splits(d.cube, rc.search_split);
  err << "search split: " << splits.train.size() << " weight / " << splits.val.size() << " architecture pixels"
      << std::endl;
  fs::create_directories(rc.out);
  const fs::path ckpt = rc.out / "supernet";
  std::optional<SearchSession> session;
  if (resume && has_checkpoint(ckpt)) {
    auto ck = load_checkpoint(ckpt, rc.search, Fingerprint::of(d.net_cfg));
    if (ck.net.kind() != NetKind::kSupernet) throw FormatError(ckpt.string() + " does not hold a supernet");
    err << "resuming search after epoch " << ck.state.epoch << std::endl;
    session.emplace(std::move(ck.net), std::move(ck.state), rc.search, d.cube, splits.train, splits.val);
  } else {
    session.emplace(d.net_cfg, rc.search, d.cube, splits.train, splits.val);
  }
  while (session->state().epoch < rc.search.search_epochs) {
    session->run_epoch();
    log_epoch(err, "search", session->state().history.back(), rc.search.search_epochs);
    save_checkpoint(ckpt, session->net(), session->state());
  }
  save_checkpoint(ckpt, session->net(), session->state());
  const Genotype g = session->genotype();
  write_file(rc.out / "genotype", serialize_genotype(g));
  write_file(rc.out / "search_history.csv", history_csv(session->state().history, true));
  err << "genotype:";
  for (const auto& c : g.choices) err << ' ' << to_string(c.outer) << '/' << to_string(c.inner);
  err << "\nwrote " << (rc.out / "genotype").string() << std::endl;
  return kExitOk;
}

int run_train(const RunConfig& rc, const std::string& genotype_flag, bool resume, std::ostream& err) {
  const fs::path genotype_path = genotype_flag.empty() ? rc.out / "genotype" : fs::path(genotype_flag);
  if (!fs::exists(genotype_path)) throw UsageError("genotype file '" + genotype_path.string() + "' does not exist");
  const auto d = load_data(rc, err);
  const Genotype g = parse_genotype(read_text(genotype_path));
  if (!(g.fingerprint == Fingerprint::of(d.net_cfg))) {
    throw FormatError("genotype " + genotype_path.string() + " was derived for a different configuration (stem " +
                      std::to_string(g.fingerprint.stem_channels) + ", patch " +
                      std::to_string(g.fingerprint.patch_size) + ", bands " + std::to_string(g.fingerprint.bands) +
                      ", classes " + std::to_string(g.fingerprint.num_classes) + ")");
  }
  const Splits splits = make_splits(d.cube, rc.eval_split);
  err << "retrain split: " << splits.train.size() << " train / " << splits.val.size() << " val / "
      << splits.test.size() << " test pixels" << std::endl;
  fs::create_directories(rc.out);
  const fs::path best_dir = rc.out / "compact", last_dir = rc.out / "compact_last";
  std::optional<CompactTrainer> trainer;
  if (resume && has_checkpoint(last_dir)) {
    auto ck = load_checkpoint(last_dir, rc.search, Fingerprint::of(d.net_cfg));
    if (ck.net.kind() != NetKind::kCompact || !(*ck.net.genotype() == g)) {
      throw FormatError(last_dir.string() + " does not hold a compact network for this genotype");
    }
    err << "resuming retraining after epoch " << ck.state.epoch << std::endl;
    trainer.emplace(std::move(ck.net), std::move(ck.state), rc.search, d.cube, splits.train, splits.val);
    if (has_checkpoint(best_dir)) {
      auto best = load_checkpoint(best_dir, rc.search, Fingerprint::of(d.net_cfg));
      trainer->restore_best(std::move(best.net), std::move(best.state));
    }
  } else {
    trainer.emplace(g, d.net_cfg, rc.search, d.cube, splits.train, splits.val);
  }
  while (trainer->state().epoch < rc.search.retrain_epochs) {
    trainer->run_epoch();
    log_epoch(err, "retrain", trainer->state().history.back(), rc.search.retrain_epochs);
    save_checkpoint(last_dir, trainer->net(), trainer->state());
    save_checkpoint(best_dir, trainer->best_net(), trainer->best_state());
  }
  save_checkpoint(last_dir, trainer->net(), trainer->state());
  save_checkpoint(best_dir, trainer->best_net(), trainer->best_state());
  write_file(rc.out / "train_history.csv", history_csv(trainer->state().history, false));
  err << "best validation OA " << fixed(trainer->best_state().best_val_oa) << " at epoch "
      << trainer->best_state().best_epoch << "; wrote " << best_dir.string() << std::endl;
  return kExitOk;
}

Checkpoint load_model(const RunConfig& rc, const std::string& flag, const SupernetConfig& net_cfg) {
  const fs::path dir = flag.empty() ? rc.out / "compact" : fs::path(flag);
  if (!fs::is_directory(dir)) throw UsageError("checkpoint directory '" + dir.string() + "' does not exist");
  return load_checkpoint(dir, rc.search, Fingerprint::of(net_cfg));
}

int run_eval(const RunConfig& rc, const std::string& ckpt_flag, const std::string& split, std::ostream& out,
             std::ostream& err) {
  if (split != "train" && split != "val" && split != "test") throw UsageError("--split must be train, val or test");
  const auto d = load_data(rc, err);
  auto model = load_model(rc, ckpt_flag, d.net_cfg);
  const Splits splits = make_splits(d.cube, rc.eval_split);
  const PixelList& pixels = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;
  if (pixels.empty()) throw FormatError("the " + split + " split is empty for this dataset");
  err << "evaluating " << pixels.size() << ' ' << split << " pixels" << std::endl;
  const Evaluation e = evaluate(model.net, d.cube, pixels);
  fs::create_directories(rc.out);
  const std::string report = format_report(e.report);
  write_file(rc.out / "report.txt", report);
  write_file(rc.out / "confusion.txt", format_confusion(e.confusion));
  out << report;
  return kExitOk;
}

int run_map(const RunConfig& rc, const std::string& ckpt_flag, const std::string& output, std::ostream& err) {
  const auto d = load_data(rc, err);
  auto model = load_model(rc, ckpt_flag, d.net_cfg);
  PixelList all;
  for (std::int32_t r = 0; r < d.cube.height; ++r)
    for (std::int32_t c = 0; c < d.cube.width; ++c) all.push_back({r, c});
  err << "predicting " << all.size() << " pixels" << std::endl;
  const auto pred = predict(model.net, d.cube, all);
  std::vector<std::uint16_t> grid(all.size(), 0);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (d.cube.labels[i] != 0) grid[i] = static_cast<std::uint16_t>(pred[i] + 1);
  }
  const auto ppm = render_map(grid, d.cube.width, d.cube.height, d.cube.num_classes());
  const fs::path path = output.empty() ? rc.out / "map.ppm" : fs::path(output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, ppm);
  err << "wrote " << path.string() << std::endl;
  return kExitOk;
}

struct ConfigFlags {
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_config_flags(CLI::App* sub, ConfigFlags& flags) {
  sub->add_option("--config", flags.config, "JSON config document")->check(CLI::ExistingFile);
  for (const auto& k : kKeys) flags.options[k.name] = sub->add_option(flag_of(k.name), flags.values[k.name], k.help);
}

Settings settings_of(const ConfigFlags& flags) {
  std::map<std::string, std::string> given;
  for (const auto& [name, opt] : flags.options)
    if (opt->count() > 0) given[name] = flags.values.at(name);
  return Settings(load_config_document(flags.config), std::move(given));
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyperspectral neural architecture search with asymmetric pooling and multi-receptive-field convolution",
               "a2snas"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "write a synthetic labelled cube");
  std::string gen_out;
  std::int64_t gen_classes = 5, gen_bands = 32, gen_size = 64;
  double gen_noise = 0.1;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", gen_classes, "number of classes")->capture_default_str();
  gen->add_option("--bands", gen_bands, "number of bands")->capture_default_str();
  gen->add_option("--size", gen_size, "height and width")->capture_default_str();
  gen->add_option("--noise", gen_noise, "Gaussian noise sigma")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generator seed")->required();

  ConfigFlags search_flags, train_flags, eval_flags, map_flags;
  auto* search = app.add_subcommand("search", "bi-level architecture search; writes <out>/genotype");
  add_config_flags(search, search_flags);
  bool search_resume = false;
  search->add_flag("--resume", search_resume, "continue from <out>/supernet");

  auto* train = app.add_subcommand("train", "retrain the compact network of a genotype");
  add_config_flags(train, train_flags);
  std::string genotype_path;
  bool train_resume = false;
  train->add_option("--genotype", genotype_path, "genotype file (default <out>/genotype)");
  train->add_flag("--resume", train_resume, "continue from <out>/compact_last");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a split; writes report.txt and confusion.txt");
  add_config_flags(eval, eval_flags);
  std::string eval_ckpt, eval_split = "test";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory (default <out>/compact)");
  eval->add_option("--split", eval_split, "train, val or test")->capture_default_str();

  auto* map = app.add_subcommand("map", "render a full-scene classification map (PPM)");
  add_config_flags(map, map_flags);
  std::string map_ckpt, map_output;
  map->add_option("--checkpoint", map_ckpt, "checkpoint directory (default <out>/compact)");
  map->add_option("--output", map_output, "PPM path (default <out>/map.ppm)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen(gen_out, gen_classes, gen_bands, gen_size, gen_noise, gen_seed, err);
    if (search->parsed()) return run_search(resolve(settings_of(search_flags)), search_resume, err);
    if (train->parsed()) return run_train(resolve(settings_of(train_flags)), genotype_path, train_resume, err);
    if (eval->parsed()) return run_eval(resolve(settings_of(eval_flags)), eval_ckpt, eval_split, out, err);
    if (map->parsed()) return run_map(resolve(settings_of(map_flags)), map_ckpt, map_output, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << std::endl;
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << std::endl;
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << std::endl;
    return kExitData;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << std::endl;
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace a2snas::cli
