#include "tcprune/cli.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tcprune/accounting.hpp"
#include "tcprune/checkpoint.hpp"
#include "tcprune/data.hpp"
#include "tcprune/driver.hpp"
#include "tcprune/errors.hpp"
#include "tcprune/model_zoo.hpp"
#include "tcprune/runcfg.hpp"
#include "tcprune/version.hpp"

namespace fs = std::filesystem;

namespace tcprune {
namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw io_error("cannot create directory '" + path + "': " + ec.message());
}

// Accepts plain config files and run manifests alike: manifest bookkeeping
// keys are skipped and the "cfg." prefix is stripped, so a run can be
// re-executed straight from its manifest.
KvConfig load_config_file(const std::string& path, const std::set<std::string>& allowed) {
  const KvConfig raw = KvConfig::from_file(path);
  KvConfig cfg;
  for (const auto& [key, value] : raw.items()) {
    std::string k = key;
    if (k.rfind("cfg.", 0) == 0) k = k.substr(4);
    if (k == "subcommand" || k == "tool_version" || k == "output" || k.rfind("hash.", 0) == 0)
      continue;
    if (!allowed.count(k)) throw config_error("unknown config key '" + key + "' in " + path);
    cfg.set(k, value);
  }
  return cfg;
}

// flags > file > defaults; every resolved value lands in `out` so the
// manifest materializes the full configuration.
struct Knobs {
  KvConfig file;
  std::map<std::string, std::string> out;

  explicit Knobs(KvConfig f) : file(std::move(f)) {}

  std::int64_t i64(const char* key, const CLI::Option* o, std::int64_t flag_v,
                   std::int64_t dflt) {
    const std::int64_t v = (o && o->count()) ? flag_v : file.get_int(key, dflt);
    out[key] = std::to_string(v);
    return v;
  }
  double f64(const char* key, const CLI::Option* o, double flag_v, double dflt) {
    const double v = (o && o->count()) ? flag_v : file.get_double(key, dflt);
    out[key] = fmt_g(v);
    return v;
  }
  bool b(const char* key, const CLI::Option* o, bool flag_v, bool dflt) {
    const bool v = (o && o->count()) ? flag_v : file.get_bool(key, dflt);
    out[key] = v ? "true" : "false";
    return v;
  }
  std::string str(const char* key, const CLI::Option* o, const std::string& flag_v,
                  const std::string& dflt) {
    const std::string v = (o && o->count()) ? flag_v : file.get_str(key, dflt);
    if (!v.empty()) out[key] = v;
    return v;
  }
};

// ---------------------------------------------------------------------------
// data plumbing

bool is_gen_spec(const std::string& s) { return s.rfind("gen:", 0) == 0; }

GenSpec parse_gen_spec(const std::string& text, std::uint64_t* seed_out) {
  GenSpec g;
  std::uint64_t seed = 1;
  std::stringstream body(text.substr(4));
  std::string item;
  while (std::getline(body, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw config_error("generator spec item '" + item + "' is not key=value");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    try {
      if (k == "classes") g.classes = std::stoi(v);
      else if (k == "n_source") g.n_source = std::stoll(v);
      else if (k == "n_target") g.n_target = std::stoll(v);
      else if (k == "height") g.height = std::stoi(v);
      else if (k == "width") g.width = std::stoi(v);
      else if (k == "channels") g.channels = std::stoi(v);
      else if (k == "base_noise") g.base_noise = std::stof(v);
      else if (k == "shift_brightness") g.shift.brightness = std::stof(v);
      else if (k == "shift_contrast") g.shift.contrast = std::stof(v);
      else if (k == "shift_rotation") g.shift.rotation = std::stof(v);
      else if (k == "shift_noise") g.shift.noise_sigma = std::stof(v);
      else if (k == "seed") seed = std::stoull(v);
      else throw config_error("unknown generator spec key '" + k + "'");
    } catch (const std::invalid_argument&) {
      throw config_error("generator spec value '" + v + "' for '" + k + "' is not a number");
    } catch (const std::out_of_range&) {
      throw config_error("generator spec value '" + v + "' for '" + k + "' is out of range");
    }
  }
  if (seed_out) *seed_out = seed;
  return g;
}

DomainPair resolve_data(const std::string& arg) {
  if (is_gen_spec(arg)) {
    std::uint64_t seed = 1;
    const GenSpec g = parse_gen_spec(arg, &seed);
    g.validate();
    return generate_synthetic_domains(g, seed);
  }
  return load_domain_pair(arg);
}

// Source-fitted standardization applied to both domains, matching what the
// training loop expects.
void standardize(DomainPair& data) {
  const NormStats stats = fit_norm_stats(data.source_x);
  apply_norm(data.source_x, stats);
  apply_norm(data.target_x, stats);
}

void hash_data_inputs(RunManifest& man, const std::string& arg) {
  if (is_gen_spec(arg)) {
    man.input_hashes[arg] = hash_hex(fnv1a64(arg.data(), arg.size()));
    return;
  }
  for (const char* f : {"source.tcpt", "source.labels", "target.tcpt", "target.labels"}) {
    const std::string p = arg + "/" + f;
    if (fs::exists(p)) man.input_hashes[p] = hash_hex(fnv1a64_file(p));
  }
}

void check_data_model_fit(const ModelGraph& graph, const DomainPair& data) {
  const auto& s = graph.input_shape;  // {C,H,W}
  if (s.size() != 3 || s[0] != data.source_x.dim(1) || s[1] != data.source_x.dim(2) ||
      s[2] != data.source_x.dim(3))
    throw config_error("model expects " + shape_str(s) + " inputs but the data is " +
                       std::to_string(data.source_x.dim(1)) + "x" +
                       std::to_string(data.source_x.dim(2)) + "x" +
                       std::to_string(data.source_x.dim(3)));
  if (graph.class_count != data.classes)
    throw config_error("model has " + std::to_string(graph.class_count) +
                       " classes but the data has " + std::to_string(data.classes));
}

std::vector<std::int64_t> data_input_shape(const DomainPair& data) {
  return {data.source_x.dim(1), data.source_x.dim(2), data.source_x.dim(3)};
}

// ---------------------------------------------------------------------------
// shared flag bundles

struct GenFlags {
  std::string config, out;
  std::uint64_t seed = 1;
  std::int64_t classes = 4, n_source = 256, n_target = 256;
  std::int64_t height = 16, width = 16, channels = 1;
  double base_noise = 0.05;
  double shift_brightness = 0, shift_contrast = 1, shift_rotation = 0, shift_noise = 0;
  CLI::Option *o_seed{}, *o_classes{}, *o_ns{}, *o_nt{}, *o_h{}, *o_w{}, *o_c{}, *o_noise{},
      *o_sb{}, *o_sc{}, *o_sr{}, *o_sn{};
};

struct TrainFlags {
  std::string config, out, data, arch, base, ckpt, method = "tcp", mmd = "median";
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;
  std::int64_t batch = 32, base_epochs = 20, short_ft = 5, long_ft = 10;
  std::int64_t k = 4, iters = 32, floor_per_layer = 1, score_batches = 0, crop_pad = 0;
  double lr_hi = 0.01, lr_lo = 0.0001, momentum = 0.9;
  double base_beta = 0.9242343145200196;
  double val_fraction = 0.2, flops_target = 0.5, accuracy_floor = 0;
  bool hflip = false, score_dump = false;
  CLI::Option *o_data{}, *o_arch{}, *o_base{}, *o_ckpt{}, *o_method{}, *o_mmd{}, *o_seed{},
      *o_seeds{}, *o_batch{}, *o_base_epochs{}, *o_short_ft{}, *o_long_ft{}, *o_k{},
      *o_iters{}, *o_floor{}, *o_score_batches{}, *o_crop_pad{}, *o_lr_hi{}, *o_lr_lo{},
      *o_momentum{}, *o_base_beta{}, *o_val_fraction{}, *o_flops_target{}, *o_acc_floor{},
      *o_hflip{}, *o_score_dump{};
};

void add_common(CLI::App* cmd, std::string& config, std::string& out) {
  cmd->add_option("--config", config, "Key=value config file (a run manifest also works)");
  cmd->add_option("--out", out, "Output directory")->required();
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  f.o_data = cmd->add_option("--data", f.data, "Data directory or inline gen:<k=v,...> spec");
  f.o_seed = cmd->add_option("--seed", f.seed, "Run seed");
  f.o_mmd = cmd->add_option("--mmd", f.mmd, "MMD bandwidth: median, fixed:<sigma>, or multi");
  f.o_batch = cmd->add_option("--batch", f.batch, "Mini-batch size");
  f.o_base_epochs = cmd->add_option("--base-epochs", f.base_epochs, "Base training epochs");
  f.o_lr_hi = cmd->add_option("--lr-hi", f.lr_hi, "Learning rate at the start of each phase");
  f.o_lr_lo = cmd->add_option("--lr-lo", f.lr_lo, "Learning rate at the end of each phase");
  f.o_momentum = cmd->add_option("--momentum", f.momentum, "SGD momentum");
  f.o_base_beta = cmd->add_option("--base-beta", f.base_beta,
                                  "MMD weight for base training and the long fine-tune");
  f.o_val_fraction = cmd->add_option("--val-fraction", f.val_fraction,
                                     "Held-out labeled target fraction for accuracy");
  f.o_hflip = cmd->add_flag("--hflip", f.hflip,
                            "Random horizontal flips (unsuitable for orientation classes)");
  f.o_crop_pad = cmd->add_option("--crop-pad", f.crop_pad, "Random-crop padding, 0 disables");
}

void add_prune_flags(CLI::App* cmd, TrainFlags& f) {
  f.o_k = cmd->add_option("--k", f.k, "Channels removed per iteration");
  f.o_iters = cmd->add_option("--iters", f.iters, "Max pruning iterations (ramp length)");
  f.o_flops_target =
      cmd->add_option("--flops-target", f.flops_target, "Stop at this fraction of baseline FLOPs");
  f.o_acc_floor = cmd->add_option("--accuracy-floor", f.accuracy_floor,
                                  "Stop after 2 consecutive iterations below this accuracy");
  f.o_short_ft = cmd->add_option("--short-ft", f.short_ft, "Epochs after each removal");
  f.o_long_ft = cmd->add_option("--long-ft", f.long_ft, "Epochs after the loop ends");
  f.o_floor = cmd->add_option("--floor-per-layer", f.floor_per_layer,
                              "Minimum surviving channels per prunable layer");
  f.o_score_batches = cmd->add_option("--score-batches", f.score_batches,
                                      "Batches per scoring pass, 0 = full pass");
  f.o_score_dump =
      cmd->add_flag("--score-dump", f.score_dump, "Write per-iteration score CSVs");
}

const std::set<std::string> kGenKeys = {
    "seed",       "classes",          "n_source",       "n_target",
    "height",     "width",            "channels",       "base_noise",
    "shift_brightness", "shift_contrast", "shift_rotation", "shift_noise"};

const std::set<std::string> kTrainKeys = {
    "seed",    "data",        "arch",       "mmd",    "batch", "base_epochs", "lr_hi",
    "lr_lo",   "momentum",    "base_beta",  "val_fraction", "hflip", "crop_pad"};

std::set<std::string> prune_keys() {
  std::set<std::string> keys = kTrainKeys;
  for (const char* k : {"base", "method", "k", "iters", "flops_target", "accuracy_floor",
                        "short_ft", "long_ft", "floor_per_layer", "score_batches",
                        "score_dump", "seeds"})
    keys.insert(k);
  return keys;
}

Knobs make_knobs(const std::string& config_path, const std::set<std::string>& allowed) {
  return Knobs(config_path.empty() ? KvConfig{} : load_config_file(config_path, allowed));
}

// Fills the training-side of PruneConfig from flags/file/defaults.
PruneConfig resolve_train(Knobs& kn, const TrainFlags& f) {
  PruneConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(
      kn.i64("seed", f.o_seed, static_cast<std::int64_t>(f.seed), 1));
  cfg.mmd = MmdConfig::parse(kn.str("mmd", f.o_mmd, f.mmd, "median"));
  kn.out["mmd"] = cfg.mmd.str();
  cfg.batch = kn.i64("batch", f.o_batch, f.batch, 32);
  cfg.base_ft_epochs = static_cast<int>(kn.i64("base_epochs", f.o_base_epochs, f.base_epochs, 20));
  cfg.lr_hi = kn.f64("lr_hi", f.o_lr_hi, f.lr_hi, 0.01);
  cfg.lr_lo = kn.f64("lr_lo", f.o_lr_lo, f.lr_lo, 0.0001);
  cfg.momentum = kn.f64("momentum", f.o_momentum, f.momentum, 0.9);
  cfg.base_beta = kn.f64("base_beta", f.o_base_beta, f.base_beta, 0.9242343145200196);
  cfg.target_val_fraction = kn.f64("val_fraction", f.o_val_fraction, f.val_fraction, 0.2);
  cfg.augment.hflip = kn.b("hflip", f.o_hflip, f.hflip, false);
  cfg.augment.crop_pad = static_cast<int>(kn.i64("crop_pad", f.o_crop_pad, f.crop_pad, 0));
  return cfg;
}

void resolve_prune(Knobs& kn, const TrainFlags& f, PruneConfig& cfg) {
  cfg.method = method_from_name(kn.str("method", f.o_method, f.method, "tcp"));
  cfg.k = static_cast<int>(kn.i64("k", f.o_k, f.k, 4));
  cfg.iters = static_cast<int>(kn.i64("iters", f.o_iters, f.iters, 32));
  cfg.flops_target = kn.f64("flops_target", f.o_flops_target, f.flops_target, 0.5);
  cfg.short_ft_epochs = static_cast<int>(kn.i64("short_ft", f.o_short_ft, f.short_ft, 5));
  cfg.long_ft_epochs = static_cast<int>(kn.i64("long_ft", f.o_long_ft, f.long_ft, 10));
  cfg.floor_per_layer =
      static_cast<int>(kn.i64("floor_per_layer", f.o_floor, f.floor_per_layer, 1));
  cfg.score_batches =
      static_cast<int>(kn.i64("score_batches", f.o_score_batches, f.score_batches, 0));
  if (f.o_acc_floor && f.o_acc_floor->count()) {
    cfg.accuracy_floor = f.accuracy_floor;
    kn.out["accuracy_floor"] = fmt_g(f.accuracy_floor);
  } else if (kn.file.has("accuracy_floor")) {
    cfg.accuracy_floor = kn.file.get_double("accuracy_floor", 0);
    kn.out["accuracy_floor"] = fmt_g(*cfg.accuracy_floor);
  }
}

RunManifest start_manifest(const std::string& subcommand, std::uint64_t seed, Knobs& kn) {
  RunManifest man;
  man.subcommand = subcommand;
  man.tool_version = version();
  man.seed = seed;
  man.config = kn.out;
  return man;
}

// ---------------------------------------------------------------------------
// reporting helpers

void write_merged_csv(const std::vector<PruneReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "method,seed,iteration,flops,flops_down,params,params_down,target_acc,beta,"
         "removed_json\n";
  for (const PruneReport& rep : reports)
    for (const PruneRow& r : rep.rows)
      out << rep.method << "," << rep.seed << "," << r.iteration << "," << r.flops << ","
          << fmt_g(r.flops_down) << "," << r.params << "," << fmt_g(r.params_down) << ","
          << fmt_g(r.target_acc) << "," << fmt_g(r.beta) << ","
          << csv_quote(removed_to_json(r.removed)) << "\n";
  if (!out) throw io_error("write to '" + path + "' failed");
}

struct MethodSummary {
  int runs{0};
  double base_acc{0}, final_acc{0}, flops_down{0};
};

std::map<std::string, MethodSummary> summarize(const std::vector<PruneReport>& reports) {
  std::map<std::string, MethodSummary> by;
  for (const PruneReport& rep : reports) {
    MethodSummary& s = by[rep.method];
    s.runs += 1;
    s.base_acc += rep.baseline_acc;
    s.final_acc += rep.final_acc;
    s.flops_down += rep.rows.empty() ? 0.0 : rep.rows.back().flops_down;
  }
  for (auto& [name, s] : by) {
    s.base_acc /= s.runs;
    s.final_acc /= s.runs;
    s.flops_down /= s.runs;
  }
  return by;
}

void write_summary_csv(const std::vector<PruneReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "method,runs,mean_baseline_acc,mean_final_acc,mean_flops_down\n";
  for (const auto& [name, s] : summarize(reports))
    out << name << "," << s.runs << "," << fmt_g(s.base_acc) << "," << fmt_g(s.final_acc)
        << "," << fmt_g(s.flops_down) << "\n";
}

void print_summary(const std::vector<PruneReport>& reports) {
  std::printf("%-10s %5s %10s %10s %11s\n", "method", "runs", "base_acc", "final_acc",
              "flops_down");
  for (const auto& [name, s] : summarize(reports))
    std::printf("%-10s %5d %10.4f %10.4f %10.1f%%\n", name.c_str(), s.runs, s.base_acc,
                s.final_acc, 100.0 * s.flops_down);
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(GenFlags& f) {
  Knobs kn = make_knobs(f.config, kGenKeys);
  GenSpec g;
  g.classes = static_cast<int>(kn.i64("classes", f.o_classes, f.classes, 4));
  g.n_source = kn.i64("n_source", f.o_ns, f.n_source, 256);
  g.n_target = kn.i64("n_target", f.o_nt, f.n_target, 256);
  g.height = static_cast<int>(kn.i64("height", f.o_h, f.height, 16));
  g.width = static_cast<int>(kn.i64("width", f.o_w, f.width, 16));
  g.channels = static_cast<int>(kn.i64("channels", f.o_c, f.channels, 1));
  g.base_noise = static_cast<float>(kn.f64("base_noise", f.o_noise, f.base_noise, 0.05));
  g.shift.brightness =
      static_cast<float>(kn.f64("shift_brightness", f.o_sb, f.shift_brightness, 0));
  g.shift.contrast = static_cast<float>(kn.f64("shift_contrast", f.o_sc, f.shift_contrast, 1));
  g.shift.rotation = static_cast<float>(kn.f64("shift_rotation", f.o_sr, f.shift_rotation, 0));
  g.shift.noise_sigma = static_cast<float>(kn.f64("shift_noise", f.o_sn, f.shift_noise, 0));
  const std::uint64_t seed = static_cast<std::uint64_t>(
      kn.i64("seed", f.o_seed, static_cast<std::int64_t>(f.seed), 1));
  g.validate();

  ensure_dir(f.out);
  RunManifest man = start_manifest("gen-data", seed, kn);
  for (const char* name : {"source.tcpt", "source.labels", "target.tcpt", "target.labels"})
    man.outputs.push_back(f.out + "/" + name);
  man.write(f.out + "/manifest.txt");

  const DomainPair data = generate_synthetic_domains(g, seed);
  save_domain_pair(data, f.out);
  std::printf("wrote %lld source / %lld target examples (%d classes, %dx%dx%d) to %s\n",
              static_cast<long long>(g.n_source), static_cast<long long>(g.n_target),
              g.classes, g.channels, g.height, g.width, f.out.c_str());
  return 0;
}

int cmd_train_base(TrainFlags& f) {
  Knobs kn = make_knobs(f.config, kTrainKeys);
  PruneConfig cfg = resolve_train(kn, f);
  const std::string data_arg = kn.str("data", f.o_data, f.data, "");
  const std::string arch = kn.str("arch", f.o_arch, f.arch, "small-vgg");
  if (data_arg.empty())
    throw config_error("missing 'data': pass --data <dir|gen:...> or a config key");
  cfg.validate();

  ensure_dir(f.out);
  RunManifest man = start_manifest("train-base", cfg.seed, kn);
  hash_data_inputs(man, data_arg);
  man.outputs = {f.out + "/base.ckpt", f.out + "/base.ckpt.graph", f.out + "/train_log.csv"};
  man.write(f.out + "/manifest.txt");

  DomainPair data = resolve_data(data_arg);
  standardize(data);
  const ModelGraph graph = build_arch(arch, data_input_shape(data), data.classes);
  ParameterStore params = init_params<float>(graph, cfg.seed);
  const TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);
  const TrainLog log = train_base(graph, params, data, split, cfg, cfg.base_beta);
  save_checkpoint(graph, params, f.out + "/base.ckpt");

  {
    std::ofstream tl(f.out + "/train_log.csv", std::ios::binary);
    if (!tl) throw io_error("cannot open '" + f.out + "/train_log.csv' for writing");
    tl << "epoch,loss,cls,mmd\n";
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
      tl << e << "," << fmt_g(log.epoch_loss[e]) << "," << fmt_g(log.epoch_cls[e]) << ","
         << fmt_g(log.epoch_mmd[e]) << "\n";
  }
  std::printf("base model: best target val acc %.4f at epoch %d; saved to %s/base.ckpt\n",
              log.best_val_acc, log.best_epoch, f.out.c_str());
  return 0;
}

int cmd_prune(TrainFlags& f) {
  Knobs kn = make_knobs(f.config, prune_keys());
  PruneConfig cfg = resolve_train(kn, f);
  resolve_prune(kn, f, cfg);
  const std::string data_arg = kn.str("data", f.o_data, f.data, "");
  const std::string base_path = kn.str("base", f.o_base, f.base, "");
  const std::string arch = kn.str("arch", f.o_arch, f.arch, "");
  const bool dump = kn.b("score_dump", f.o_score_dump, f.score_dump, false);
  if (data_arg.empty())
    throw config_error("missing 'data': pass --data <dir|gen:...> or a config key");
  if (base_path.empty() && arch.empty())
    throw config_error("pass --base <checkpoint> or --arch to train a base model first");
  cfg.validate();

  ensure_dir(f.out);
  RunManifest man = start_manifest("prune", cfg.seed, kn);
  hash_data_inputs(man, data_arg);
  if (!base_path.empty()) {
    man.input_hashes[base_path] = hash_hex(fnv1a64_file(base_path));
    man.input_hashes[base_path + ".graph"] = hash_hex(fnv1a64_file(base_path + ".graph"));
  }
  man.outputs = {f.out + "/base.ckpt", f.out + "/report.csv", f.out + "/report.json",
                 f.out + "/final.ckpt"};
  if (dump) man.outputs.push_back(f.out + "/scores");
  man.write(f.out + "/manifest.txt");

  DomainPair data = resolve_data(data_arg);
  standardize(data);

  ModelGraph graph;
  ParameterStore params;
  if (!base_path.empty()) {
    Checkpoint ck = load_checkpoint(base_path);
    graph = std::move(ck.graph);
    params = std::move(ck.params);
    check_data_model_fit(graph, data);
  } else {
    graph = build_arch(arch, data_input_shape(data), data.classes);
    params = init_params<float>(graph, cfg.seed);
    const TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);
    const TrainLog log = train_base(graph, params, data, split, cfg, cfg.base_beta);
    std::printf("base model: best target val acc %.4f at epoch %d\n", log.best_val_acc,
                log.best_epoch);
  }
  save_checkpoint(graph, params, f.out + "/base.ckpt");
  if (dump) {
    cfg.score_dump_dir = f.out + "/scores";
    ensure_dir(cfg.score_dump_dir);
  }

  const RunResult rr = run(cfg.method, graph, params, data, cfg);
  write_report_csv(rr.report, f.out + "/report.csv");
  write_report_json(rr.report, f.out + "/report.json");
  save_checkpoint(rr.graph, rr.params, f.out + "/final.ckpt");

  const double down = rr.report.rows.empty() ? 0.0 : rr.report.rows.back().flops_down;
  std::printf("%s: %zu iterations, flops down %.1f%%, target acc %.4f -> %.4f (stop: %s)\n",
              rr.report.method.c_str(), rr.report.rows.size(), 100.0 * down,
              rr.report.baseline_acc, rr.report.final_acc, rr.report.stop_reason.c_str());
  return 0;
}

int cmd_eval(TrainFlags& f) {
  const std::set<std::string> allowed = {"data", "ckpt", "batch", "seed"};
  Knobs kn = make_knobs(f.config, allowed);
  const std::string data_arg = kn.str("data", f.o_data, f.data, "");
  const std::string ckpt = kn.str("ckpt", f.o_ckpt, f.ckpt, "");
  const std::int64_t batch = kn.i64("batch", f.o_batch, f.batch, 32);
  const std::uint64_t seed = static_cast<std::uint64_t>(
      kn.i64("seed", f.o_seed, static_cast<std::int64_t>(f.seed), 1));
  if (data_arg.empty()) throw config_error("missing 'data'");
  if (ckpt.empty()) throw config_error("missing 'ckpt': pass --ckpt <checkpoint>");
  if (batch < 1) throw config_error("batch size must be at least 1");

  ensure_dir(f.out);
  RunManifest man = start_manifest("eval", seed, kn);
  hash_data_inputs(man, data_arg);
  man.input_hashes[ckpt] = hash_hex(fnv1a64_file(ckpt));
  man.input_hashes[ckpt + ".graph"] = hash_hex(fnv1a64_file(ckpt + ".graph"));
  man.outputs = {f.out + "/eval.txt"};
  man.write(f.out + "/manifest.txt");

  DomainPair data = resolve_data(data_arg);
  standardize(data);
  const Checkpoint ck = load_checkpoint(ckpt);
  check_data_model_fit(ck.graph, data);

  const double target_acc = evaluate_accuracy(ck.graph, ck.params, data.target_x,
                                              data.target_labels_for_eval(), batch);
  const double source_acc =
      evaluate_accuracy(ck.graph, ck.params, data.source_x, data.source_y, batch);
  const std::int64_t flops = count_flops(ck.graph);
  const std::int64_t n_params = count_params(ck.params);

  {
    std::ofstream out(f.out + "/eval.txt", std::ios::binary);
    if (!out) throw io_error("cannot open '" + f.out + "/eval.txt' for writing");
    out << "target_acc = " << fmt_g(target_acc) << "\n"
        << "source_acc = " << fmt_g(source_acc) << "\n"
        << "flops = " << flops << "\n"
        << "params = " << n_params << "\n";
  }
  std::printf("target acc %.4f, source acc %.4f, %lld flops, %lld params\n", target_acc,
              source_acc, static_cast<long long>(flops), static_cast<long long>(n_params));
  return 0;
}

int cmd_report(const std::string& config, const std::string& out,
               std::vector<std::string> runs, const CLI::Option* o_runs) {
  const std::set<std::string> allowed = {"runs"};
  Knobs kn = make_knobs(config, allowed);
  if (!(o_runs && o_runs->count())) {
    std::stringstream ss(kn.file.get_str("runs", ""));
    std::string item;
    runs.clear();
    while (std::getline(ss, item, ','))
      if (!item.empty()) runs.push_back(item);
  }
  if (runs.empty()) throw config_error("no run directories: pass --runs <dir,dir,...>");
  {
    std::string joined;
    for (const auto& r : runs) joined += (joined.empty() ? "" : ",") + r;
    kn.out["runs"] = joined;
  }

  ensure_dir(out);
  RunManifest man = start_manifest("report", 0, kn);
  for (const auto& dir : runs) {
    man.input_hashes[dir + "/report.csv"] = hash_hex(fnv1a64_file(dir + "/report.csv"));
    man.input_hashes[dir + "/report.json"] = hash_hex(fnv1a64_file(dir + "/report.json"));
  }
  man.outputs = {out + "/merged.csv", out + "/summary.csv", out + "/plot_curve.csv",
                 out + "/plot_channels.csv"};
  man.write(out + "/manifest.txt");

  std::vector<PruneReport> reports;
  reports.reserve(runs.size());
  for (const auto& dir : runs) reports.push_back(load_run_report(dir));

  write_merged_csv(reports, out + "/merged.csv");
  write_summary_csv(reports, out + "/summary.csv");
  write_plot_data(reports, out + "/plot");
  print_summary(reports);
  return 0;
}

int cmd_compare(TrainFlags& f) {
  std::set<std::string> allowed = prune_keys();
  allowed.erase("base");
  allowed.erase("method");
  Knobs kn = make_knobs(f.config, allowed);
  PruneConfig cfg = resolve_train(kn, f);
  resolve_prune(kn, f, cfg);
  kn.out.erase("method");
  const std::string data_arg = kn.str("data", f.o_data, f.data, "");
  const std::string arch = kn.str("arch", f.o_arch, f.arch, "small-vgg");
  const bool dump = kn.b("score_dump", f.o_score_dump, f.score_dump, false);
  if (data_arg.empty())
    throw config_error("missing 'data': pass --data <dir|gen:...> or a config key");

  std::vector<std::uint64_t> seeds;
  if (f.o_seeds && f.o_seeds->count()) {
    seeds = f.seeds;
  } else {
    std::stringstream ss(kn.file.get_str("seeds", "1"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw config_error("bad seed '" + item + "' in 'seeds'");
      }
    }
  }
  if (seeds.empty()) throw config_error("empty seed list");
  {
    std::string joined;
    for (std::uint64_t s : seeds) joined += (joined.empty() ? "" : ",") + std::to_string(s);
    kn.out["seeds"] = joined;
  }
  cfg.validate();

  const Method methods[] = {Method::Tcp, Method::TcpNoDa, Method::TwoStage, Method::Random};

  ensure_dir(f.out);
  RunManifest man = start_manifest("compare", seeds.front(), kn);
  hash_data_inputs(man, data_arg);
  for (std::uint64_t s : seeds) {
    man.outputs.push_back(f.out + "/base_seed" + std::to_string(s) + ".ckpt");
    for (Method m : methods)
      man.outputs.push_back(f.out + "/" + method_name(m) + "_seed" + std::to_string(s) +
                            "/report.csv");
  }
  man.outputs.push_back(f.out + "/merged.csv");
  man.outputs.push_back(f.out + "/summary.csv");
  man.write(f.out + "/manifest.txt");

  DomainPair data = resolve_data(data_arg);
  standardize(data);

  std::vector<PruneReport> reports;
  for (std::uint64_t seed : seeds) {
    cfg.seed = seed;
    ModelGraph graph = build_arch(arch, data_input_shape(data), data.classes);
    ParameterStore params = init_params<float>(graph, seed);
    const TargetSplit split = split_target(data, cfg.target_val_fraction, seed);
    const TrainLog log = train_base(graph, params, data, split, cfg, cfg.base_beta);
    const std::string base_path = f.out + "/base_seed" + std::to_string(seed) + ".ckpt";
    save_checkpoint(graph, params, base_path);
    std::printf("seed %llu: base target val acc %.4f (epoch %d)\n",
                static_cast<unsigned long long>(seed), log.best_val_acc, log.best_epoch);

    for (Method m : methods) {
      PruneConfig mc = cfg;
      mc.method = m;
      const std::string rd =
          f.out + "/" + method_name(m) + "_seed" + std::to_string(seed);
      ensure_dir(rd);
      if (dump) {
        mc.score_dump_dir = rd + "/scores";
        ensure_dir(mc.score_dump_dir);
      }
      {
        // Per-run manifest so each child is independently re-runnable.
        Knobs child(KvConfig{});
        child.out = kn.out;
        child.out.erase("seeds");
        child.out["method"] = method_name(m);
        child.out["seed"] = std::to_string(seed);
        child.out["base"] = base_path;
        RunManifest cm = start_manifest("prune", seed, child);
        hash_data_inputs(cm, data_arg);
        cm.input_hashes[base_path] = hash_hex(fnv1a64_file(base_path));
        cm.outputs = {rd + "/report.csv", rd + "/report.json", rd + "/final.ckpt"};
        cm.write(rd + "/manifest.txt");
      }
      const RunResult rr = run(m, graph, params, data, mc);
      write_report_csv(rr.report, rd + "/report.csv");
      write_report_json(rr.report, rd + "/report.json");
      save_checkpoint(rr.graph, rr.params, rd + "/final.ckpt");
      const double down = rr.report.rows.empty() ? 0.0 : rr.report.rows.back().flops_down;
      std::printf("  %-10s final acc %.4f (flops down %.1f%%, stop: %s)\n",
                  rr.report.method.c_str(), rr.report.final_acc, 100.0 * down,
                  rr.report.stop_reason.c_str());
      reports.push_back(rr.report);
    }
  }

  write_merged_csv(reports, f.out + "/merged.csv");
  write_summary_csv(reports, f.out + "/summary.csv");
  write_plot_data(reports, f.out + "/plot");
  print_summary(reports);
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Transfer channel pruning for unsupervised domain adaptation models"};
  app.require_subcommand(0, 1);

  GenFlags gf;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic source/target pair");
  add_common(gen, gf.config, gf.out);
  gf.o_seed = gen->add_option("--seed", gf.seed, "Generator seed");
  gf.o_classes = gen->add_option("--classes", gf.classes, "Number of classes");
  gf.o_ns = gen->add_option("--n-source", gf.n_source, "Source examples");
  gf.o_nt = gen->add_option("--n-target", gf.n_target, "Target examples");
  gf.o_h = gen->add_option("--height", gf.height, "Image height");
  gf.o_w = gen->add_option("--width", gf.width, "Image width");
  gf.o_c = gen->add_option("--channels", gf.channels, "Image channels");
  gf.o_noise = gen->add_option("--base-noise", gf.base_noise, "Pixel noise in both domains");
  gf.o_sb = gen->add_option("--shift-brightness", gf.shift_brightness,
                            "Target brightness offset, [-1,1]");
  gf.o_sc = gen->add_option("--shift-contrast", gf.shift_contrast,
                            "Target contrast gain, (0,4]");
  gf.o_sr = gen->add_option("--shift-rotation", gf.shift_rotation,
                            "Target angle offset in radians");
  gf.o_sn = gen->add_option("--shift-noise", gf.shift_noise, "Extra target noise sigma");

  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train-base", "Train the UDA base model");
  add_common(train, tf.config, tf.out);
  add_train_flags(train, tf);
  tf.o_arch = train->add_option("--arch", tf.arch, "small-vgg or small-resnet");

  TrainFlags pf;
  CLI::App* prune = app.add_subcommand("prune", "Iteratively remove channels from a base model");
  add_common(prune, pf.config, pf.out);
  add_train_flags(prune, pf);
  add_prune_flags(prune, pf);
  pf.o_arch = prune->add_option("--arch", pf.arch, "Architecture to train when --base is absent");
  pf.o_base = prune->add_option("--base", pf.base, "Base model checkpoint to start from");
  pf.o_method =
      prune->add_option("--method", pf.method, "tcp, tcp_no_da, two_stage, or random");

  TrainFlags ef;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a domain pair");
  add_common(eval, ef.config, ef.out);
  ef.o_data = eval->add_option("--data", ef.data, "Data directory or inline gen:<k=v,...> spec");
  ef.o_ckpt = eval->add_option("--ckpt", ef.ckpt, "Checkpoint to evaluate");
  ef.o_batch = eval->add_option("--batch", ef.batch, "Mini-batch size");
  ef.o_seed = eval->add_option("--seed", ef.seed, "Recorded in the manifest");

  std::string rconfig, rout;
  std::vector<std::string> rruns;
  CLI::App* report = app.add_subcommand("report", "Merge run reports into plot-ready tables");
  add_common(report, rconfig, rout);
  CLI::Option* o_runs =
      report->add_option("--runs", rruns, "Run directories to merge")->delimiter(',');

  TrainFlags cf;
  CLI::App* compare =
      app.add_subcommand("compare", "Run all four methods across seeds and merge the reports");
  add_common(compare, cf.config, cf.out);
  add_train_flags(compare, cf);
  add_prune_flags(compare, cf);
  cf.o_arch = compare->add_option("--arch", cf.arch, "small-vgg or small-resnet");
  cf.o_seeds = compare->add_option("--seeds", cf.seeds, "Comma-separated run seeds")
                   ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gf);
    if (train->parsed()) return cmd_train_base(tf);
    if (prune->parsed()) return cmd_prune(pf);
    if (eval->parsed()) return cmd_eval(ef);
    if (report->parsed()) return cmd_report(rconfig, rout, rruns, o_runs);
    if (compare->parsed()) return cmd_compare(cf);
    std::fprintf(stderr, "%s", app.help().c_str());
    return 2;
  } catch (const usage_error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace tcprune
