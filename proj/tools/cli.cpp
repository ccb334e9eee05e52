// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "paca/checkpoint.hpp"
#include "paca/data.hpp"
#include "paca/explain.hpp"
#include "paca/model.hpp"
#include "paca/profiler.hpp"
#include "paca/train.hpp"

namespace paca::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelOpts {
  std::string model = "tiny-debug";
  std::string geometry;  // derived from the dataset when empty
  std::optional<std::size_t> classes;
};

struct DataOpts {
  std::string dataset = "synth";
  std::string data_dir;
  std::size_t samples = 512;
  std::size_t synth_classes = 8;
  std::string split = "train";
};

struct Common {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string config;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Appends "--key=value" for every line of the --config file whose key is not
// already on the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file " + path);
  const std::vector<std::string> given = args;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    while (!key.empty() && key[0] == '-') key.erase(0, 1);
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty() || key == "config") continue;
    if (!has_flag(given, "--" + key)) args.push_back("--" + key + "=" + value);
  }
  return args;
}

void add_model_opts(CLI::App* app, ModelOpts& m) {
  app->add_option("--model", m.model,
                  "b0 | b1 | b2 | tiny-debug (tiny-debug is a small test configuration, not a published model)")
      ->capture_default_str();
  app->add_option("--geometry", m.geometry, "in1k (224x224) | c100 (32x32); default follows the dataset");
  app->add_option("--classes", m.classes, "classifier classes; default follows the dataset");
}

void add_data_opts(CLI::App* app, DataOpts& d) {
  app->add_option("--dataset", d.dataset, "synth | cifar10 | cifar100")->capture_default_str();
  app->add_option("--data-dir", d.data_dir, "directory with CIFAR binary batch files");
  app->add_option("--samples", d.samples, "synthetic sample count, or CIFAR record limit (0 = all)")
      ->capture_default_str();
  app->add_option("--synth-classes", d.synth_classes, "classes of the synthetic dataset")->capture_default_str();
  app->add_option("--split", d.split, "train | test")->capture_default_str();
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value file of long flag names; command-line flags take precedence");
  app->add_option("--seed", c.seed, "seed for initialization, data and shuffling")->capture_default_str();
  app->add_option("--out", c.out, "output directory")->capture_default_str();
}

bool is_cifar(const DataOpts& d) { return d.dataset == "cifar10" || d.dataset == "cifar100"; }

void check_data_opts(const DataOpts& d) {
  if (d.dataset != "synth" && !is_cifar(d)) throw UsageError("--dataset must be synth, cifar10 or cifar100");
  if (is_cifar(d) && d.data_dir.empty()) throw UsageError("--dataset " + d.dataset + " requires --data-dir");
  if (d.split != "train" && d.split != "test") throw UsageError("--split must be train or test");
  if (d.dataset == "synth" && d.synth_classes < 2) throw UsageError("--synth-classes must be >= 2");
  if (d.dataset == "synth" && d.samples == 0) throw UsageError("--samples must be >= 1 for synth");
}

ModelConfig resolve_model(const ModelOpts& m, const DataOpts& d) {
  std::size_t classes = m.classes.value_or(0);
  if (classes == 0) {
    if (d.dataset == "cifar10") classes = 10;
    else if (d.dataset == "cifar100") classes = 100;
    else classes = d.synth_classes;
  }
  Geometry g = Geometry::kC100;
  if (!m.geometry.empty()) g = parse_geometry(m.geometry);
  return preset(m.model, g, classes);
}

Dataset load_dataset(const DataOpts& d, const ModelConfig& cfg, std::uint64_t seed) {
  const Split split = d.split == "test" ? Split::kTest : Split::kTrain;
  if (is_cifar(d)) {
    const auto variant = d.dataset == "cifar10" ? CifarVariant::kC10 : CifarVariant::kC100;
    const auto limit = d.samples == 0 ? std::nullopt : std::optional<std::size_t>(d.samples);
    Dataset ds = load_cifar(d.data_dir, variant, split, limit);
    if (ds.height != cfg.input_height || ds.width != cfg.input_width) {
      throw UsageError("CIFAR images are 32x32; use --geometry c100");
    }
    return ds;
  }
  // Same classes, disjoint samples.
  const std::uint64_t first = split == Split::kTest ? kSynthTestStream : 0;
  Dataset ds = synth_dataset(seed, d.samples, d.synth_classes, cfg.input_height, cfg.input_width, first);
  ds.split = split;
  return ds;
}

void check_classes(const Dataset& ds, const ModelConfig& cfg) {
  if (ds.class_count != cfg.num_classes) {
    throw UsageError("dataset has " + std::to_string(ds.class_count) + " classes but the model has " +
                     std::to_string(cfg.num_classes));
  }
}

int cmd_param_count(const ModelOpts& m, std::ostream& out) {
  const std::size_t classes = m.classes.value_or(1000);
  const Geometry g = m.geometry.empty() ? Geometry::kIn1k : parse_geometry(m.geometry);
  const ModelConfig cfg = preset(m.model, g, classes);
  out << param_count(build_model<float>(cfg, 0)) << '\n';
  return kExitOk;
}

struct TrainOpts {
  std::size_t steps = 200;
  std::optional<std::size_t> epochs;
  std::size_t batch_size = 32;
  double lr = 5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::optional<std::size_t> warmup;
  double grad_clip = 5.0;
  std::size_t eval_every = 0;
  bool augment = false;
};

int cmd_train(const Common& c, const ModelOpts& m, const DataOpts& d, const TrainOpts& t, std::ostream& out) {
  check_data_opts(d);
  const ModelConfig cfg = resolve_model(m, d);
  const Dataset ds = load_dataset(d, cfg, c.seed);
  check_classes(ds, cfg);
  PacaModel<float> model = build_model<float>(cfg, c.seed);

  TrainConfig tc;
  tc.lr = t.lr;
  tc.adamw.weight_decay = t.weight_decay;
  tc.adamw.beta1 = t.beta1;
  tc.adamw.beta2 = t.beta2;
  tc.batch_size = t.batch_size;
  tc.steps = t.epochs ? *t.epochs * ((ds.size() + t.batch_size - 1) / std::max<std::size_t>(t.batch_size, 1)) : t.steps;
  tc.warmup_steps = t.warmup;
  tc.seed = c.seed;
  tc.grad_clip = t.grad_clip > 0 ? std::optional<double>(t.grad_clip) : std::nullopt;
  tc.eval_every = t.eval_every;
  tc.augment = {t.augment, t.augment};
  tc.out_dir = c.out;
  const TrainResult r = train_loop(model, ds, nullptr, tc);
  char buf[160];
  std::snprintf(buf, sizeof buf, "steps=%zu final_loss=%.6f train_top1=%.4f best_top1=%.4f", tc.steps,
                r.log.back().loss, r.log.back().eval_top1.value_or(0.0), r.best_eval.value_or(0.0));
  out << buf << '\n';
  return kExitOk;
}

int cmd_eval(const Common& c, const ModelOpts& m, const DataOpts& d, const std::string& checkpoint,
             std::size_t batch_size, std::ostream& out) {
  check_data_opts(d);
  const ModelConfig cfg = resolve_model(m, d);
  const PacaModel<float> model = load_checkpoint<float>(checkpoint, cfg);
  const Dataset ds = load_dataset(d, cfg, c.seed);
  check_classes(ds, cfg);
  char buf[64];
  std::snprintf(buf, sizeof buf, "top1=%.6f", evaluate(model, ds, batch_size));
  out << buf << '\n';
  return kExitOk;
}

struct ExplainOpts {
  std::string checkpoint;
  std::size_t index = 0;
  std::size_t layer = 0;
  std::string source = "cluster";
  std::size_t top_k = 6;
};

int cmd_explain(const Common& c, const ModelOpts& m, const DataOpts& d, const ExplainOpts& e, std::ostream& out,
                std::ostream& err) {
  check_data_opts(d);
  if (e.source != "cluster" && e.source != "attention") throw UsageError("--source must be cluster or attention");
  const ModelConfig cfg = resolve_model(m, d);
  const PacaModel<float> model = load_checkpoint<float>(e.checkpoint, cfg);
  const Dataset ds = load_dataset(d, cfg, c.seed);
  check_classes(ds, cfg);
  if (e.index >= ds.size()) throw UsageError("--index out of range for " + std::to_string(ds.size()) + " samples");
  const RawImage image = raw_image(ds, e.index);
  const auto source = e.source == "cluster" ? HeatmapSource::kCluster : HeatmapSource::kAttention;
  const ImportanceReport rep = cluster_importance(model, image, ds.labels[e.index], e.layer, source);
  if (rep.misclassified) {
    err << "warning: image " << e.index << " is misclassified (label " << rep.label << ", predicted " << rep.predicted
        << "); importance scores assume a correct prediction\n";
  }
  const fs::path dir = c.out;
  fs::create_directories(dir);
  std::ofstream csv(dir / "importance.csv");
  csv << "cluster,importance,entropy,rank\n";
  char buf[128];
  for (const ClusterScore& s : rep.clusters) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%zu\n", s.cluster, s.importance, s.entropy, s.rank);
    csv << buf;
  }
  const std::size_t k = std::min(e.top_k, rep.order.size());
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t m_idx = rep.order[r];
    const std::string stem = "rank" + std::to_string(r) + "_cluster" + std::to_string(m_idx);
    write_pgm(rep.heatmaps[m_idx], dir / (stem + ".pgm"));
    write_overlay_ppm(image, rep.heatmaps[m_idx], dir / (stem + "_overlay.ppm"));
  }
  std::snprintf(buf, sizeof buf, "label=%zu predicted=%zu p=%.6f top_cluster=%zu", rep.label, rep.predicted,
                rep.p_clean, rep.order.front());
  out << buf << '\n';
  return kExitOk;
}

struct ProfileOpts {
  std::string mechanism = "paca";
  std::vector<std::size_t> ns{256, 1024, 4096};
  std::size_t c = 64;
  std::size_t heads = 1;
  std::size_t m = 49;
  std::size_t reduction = 4;
  std::optional<std::size_t> expansion;
  bool instrumented = false;
};

int cmd_profile(const Common& c, bool out_given, const ProfileOpts& p, std::ostream& out) {
  LayerSpec spec;
  spec.mechanism = parse_mechanism(p.mechanism);
  spec.channels = p.c;
  spec.heads = p.heads;
  spec.m_or_p = p.m;
  spec.reduction = p.reduction;
  spec.expansion = p.expansion;
  if (p.ns.size() < 3) throw UsageError("--n needs at least 3 values");
  const ScalingReport rep = scaling_report(spec, p.ns, p.instrumented);
  rep.write_csv(out);
  if (out_given) {
    fs::create_directories(c.out);
    std::ofstream f(fs::path(c.out) / ("profile_" + p.mechanism + ".csv"));
    rep.write_csv(f);
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PaCa-ViT: clustering-based attention for vision transformers"};
  app.name("paca");
  app.require_subcommand(1);

  Common common;
  ModelOpts model;
  DataOpts data;

  auto* pc = app.add_subcommand("param-count", "print the parameter count of a preset");
  add_common(pc, common);
  add_model_opts(pc, model);

  auto* train = app.add_subcommand("train", "train a model and write metrics.csv and checkpoints to --out");
  TrainOpts topts;
  add_common(train, common);
  add_model_opts(train, model);
  add_data_opts(train, data);
  train->add_option("--steps", topts.steps, "optimizer steps")->capture_default_str();
  train->add_option("--epochs", topts.epochs, "epochs; overrides --steps");
  train->add_option("--batch-size", topts.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", topts.lr, "peak learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", topts.weight_decay)->capture_default_str()->check(CLI::NonNegativeNumber);
  train->add_option("--beta1", topts.beta1)->capture_default_str()->check(CLI::Range(0.0, 0.999999));
  train->add_option("--beta2", topts.beta2)->capture_default_str()->check(CLI::Range(0.0, 0.999999));
  train->add_option("--warmup", topts.warmup, "warmup steps; default 5% of steps");
  train->add_option("--grad-clip", topts.grad_clip, "global gradient norm cap; 0 disables")->capture_default_str();
  train->add_option("--eval-every", topts.eval_every, "evaluate every k steps; 0 = only at the end")
      ->capture_default_str();
  train->add_flag("--augment", topts.augment, "random horizontal flip and 4-pixel pad-crop");

  auto* ev = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  std::string eval_ckpt;
  std::size_t eval_batch = 64;
  add_common(ev, common);
  add_model_opts(ev, model);
  add_data_opts(ev, data);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--batch-size", eval_batch)->capture_default_str()->check(CLI::PositiveNumber);

  auto* ex = app.add_subcommand("explain", "rank the clusters of one PaCa layer for one image and export heatmaps");
  ExplainOpts eopts;
  add_common(ex, common);
  add_model_opts(ex, model);
  add_data_opts(ex, data);
  ex->add_option("--checkpoint", eopts.checkpoint, "checkpoint file")->required();
  ex->add_option("--index", eopts.index, "dataset image index")->capture_default_str();
  ex->add_option("--layer", eopts.layer, "block index across all stages")->capture_default_str();
  ex->add_option("--source", eopts.source, "cluster | attention")->capture_default_str();
  ex->add_option("--top-k", eopts.top_k, "heatmaps to export")->capture_default_str();

  auto* pr = app.add_subcommand("profile", "FLOP scaling table for one attention mechanism, as CSV");
  ProfileOpts popts;
  add_common(pr, common);
  pr->add_option("--mechanism", popts.mechanism, "vanilla | nested | paca")->capture_default_str();
  pr->add_option("--n", popts.ns, "token counts, comma separated")->delimiter(',')->capture_default_str();
  pr->add_option("--c", popts.c, "channels")->capture_default_str()->check(CLI::PositiveNumber);
  pr->add_option("--heads", popts.heads)->capture_default_str()->check(CLI::PositiveNumber);
  pr->add_option("--m", popts.m, "clusters M (paca) or patch size p (nested)")->capture_default_str();
  pr->add_option("--reduction", popts.reduction, "paca squeeze ratio")->capture_default_str();
  pr->add_option("--expansion", popts.expansion, "also count an FFN with this expansion");
  pr->add_flag("--instrumented", popts.instrumented, "run the real layers under the multiply-add counter");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (pc->parsed()) return cmd_param_count(model, out);
    if (train->parsed()) return cmd_train(common, model, data, topts, out);
    if (ev->parsed()) return cmd_eval(common, model, data, eval_ckpt, eval_batch, out);
    if (ex->parsed()) return cmd_explain(common, model, data, eopts, out, err);
    if (pr->parsed()) return cmd_profile(common, pr->count("--out") > 0, popts, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace paca::cli
