// Copyright 2026 The safe-cf Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safe/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "safe/config.hpp"
#include "safe/data.hpp"
#include "safe/errors.hpp"
#include "safe/greybox.hpp"
#include "safe/image_io.hpp"
#include "safe/metrics.hpp"
#include "safe/models.hpp"
#include "safe/saliency.hpp"
#include "safe/trainer.hpp"

namespace safe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw IoError("missing " + what + ": " + path.string());
}

// Manifest flags accept either the manifest file or its split directory.
fs::path manifest_file(const fs::path& path) {
  if (fs::is_directory(path)) return path / "manifest.json";
  return path;
}

Dataset load_manifest_dataset(const fs::path& path, const std::string& what) {
  const auto file = manifest_file(path);
  require_file(file, what);
  return load_dataset(read_manifest(file));
}

// Optional flag values layered over a RunConfig. Unset flags leave the
// config-file or built-in value in place.
struct Overrides {
  std::optional<double> learning_rate, lambda_cls, lambda_gp, lambda_rec, lambda_fuse;
  std::optional<std::int64_t> epochs, batch_size, n_critic, checkpoint_interval, sample_interval;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> saliency_mode, classifier_target, capture_layer;
  std::optional<std::string> data, val_data, out;
  bool no_reconstruction = false;
};

void add_training_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--lr", o.learning_rate, "Adam learning rate");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
  cmd->add_option("--seed", o.seed, "Random seed");
}

RunConfig resolve(const std::string& config_path, const Overrides& o) {
  RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  auto& t = c.training;
  if (o.learning_rate) t.learning_rate = *o.learning_rate;
  if (o.epochs) t.epochs = *o.epochs;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.seed) t.seed = *o.seed;
  if (o.n_critic) t.n_critic = *o.n_critic;
  if (o.checkpoint_interval) t.checkpoint_interval = *o.checkpoint_interval;
  if (o.sample_interval) t.sample_interval = *o.sample_interval;
  if (o.lambda_cls) t.loss_weights.lambda_cls = *o.lambda_cls;
  if (o.lambda_gp) t.loss_weights.lambda_gp = *o.lambda_gp;
  if (o.lambda_rec) t.loss_weights.lambda_rec = *o.lambda_rec;
  if (o.lambda_fuse) t.loss_weights.lambda_fuse = *o.lambda_fuse;
  if (o.no_reconstruction) t.loss_weights.include_reconstruction = false;
  if (o.saliency_mode) t.saliency_mode = parse_saliency_mode(*o.saliency_mode);
  if (o.classifier_target) t.classifier_target = parse_classifier_target(*o.classifier_target);
  if (o.capture_layer) c.greybox_arch.capture_layer = *o.capture_layer;
  if (o.data) c.data = *o.data;
  if (o.val_data) c.val_data = *o.val_data;
  if (o.out) c.output_dir = *o.out;
  return c;
}

fs::path need(const std::optional<fs::path>& p, const std::string& flag) {
  if (!p) throw ConfigError("missing required setting " + flag);
  return *p;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds needs at least one seed");
  return seeds;
}

// --- commands ---------------------------------------------------------------

struct ToydataArgs {
  std::int64_t n = 1000;
  std::uint64_t seed = 0;
  std::string out;
  std::string split = "train";
  std::int64_t size = 64;
};

int cmd_toydata(const ToydataArgs& a, std::ostream& out) {
  ToyDatasetOptions options;
  options.n = a.n;
  options.seed = a.seed;
  options.height = a.size;
  options.width = a.size;
  // Disc radii scale with the frame, relative to the 64 px default.
  options.radius_min *= static_cast<double>(a.size) / 64.0;
  options.radius_max *= static_cast<double>(a.size) / 64.0;
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  if (a.size < 16) throw ConfigError("--size must be >= 16");
  const auto manifest = generate_toy_dataset(options, a.out, a.split);
  out << "wrote " << manifest.entries.size() << " images to " << manifest.directory.string() << "\n";
  return kExitOk;
}

int cmd_train_greybox(const RunConfig& c, std::ostream& out) {
  const auto train = load_manifest_dataset(need(c.data, "--data"), "training manifest");
  std::optional<Dataset> val;
  if (c.val_data) val = load_manifest_dataset(*c.val_data, "validation manifest");
  const auto dir = need(c.output_dir, "--out");
  auto [model, history] =
      train_greybox(train, val ? &*val : nullptr, c.greybox_training, c.greybox_arch);
  save_greybox(model, dir / "greybox.json");
  json h{{"train_loss", history.train_loss},
         {"train_accuracy", history.train_accuracy},
         {"val_accuracy", history.val_accuracy}};
  write_report_json(dir / "greybox_history.json", h);
  for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
    out << "epoch " << e + 1 << " loss " << history.train_loss[e] << " train_acc "
        << history.train_accuracy[e];
    if (e < history.val_accuracy.size()) out << " val_acc " << history.val_accuracy[e];
    out << "\n";
  }
  out << "saved " << (dir / "greybox.json").string() << "\n";
  return kExitOk;
}

int cmd_train_explainer(const RunConfig& c, const std::string& greybox_path, std::ostream& out) {
  require_file(greybox_path, "grey-box descriptor");
  const auto train = load_manifest_dataset(need(c.data, "--data"), "training manifest");
  auto greybox = load_greybox(greybox_path);
  freeze(*greybox);
  auto config = c.training;
  config.output_dir = need(c.output_dir, "--out");
  config.image_shape = train.image_shape();
  fs::create_directories(config.output_dir);
  write_report_json(config.output_dir / "config.json", to_json(c));

  Trainer trainer(config, *greybox);
  try {
    const auto history = trainer.train(train);
    for (std::size_t e = 0; e < history.epoch_mean_rec.size(); ++e) {
      out << "epoch " << e + 1 << " mean rec " << history.epoch_mean_rec[e] << "\n";
    }
    out << "discriminator updates " << history.discriminator_updates << ", generator updates "
        << history.generator_updates << "\n";
  } catch (const NumericalError&) {
    trainer.save_checkpoint(config.output_dir / "last");
    throw;
  }
  out << "saved " << (config.output_dir / "generator.json").string() << "\n";
  return kExitOk;
}

struct ExplainArgs {
  std::string greybox, generator, out;
  std::vector<std::string> images;
  std::vector<LabelId> targets;
  std::string saliency_mode = "current";
};

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  require_file(a.greybox, "grey-box descriptor");
  require_file(a.generator, "generator descriptor");
  for (const auto& p : a.images) require_file(p, "image");
  if (a.targets.size() != 1 && a.targets.size() != a.images.size()) {
    throw ConfigError("give one --target for all images or one per image");
  }
  const auto mode = parse_saliency_mode(a.saliency_mode);
  auto greybox = load_greybox(a.greybox);
  freeze(*greybox);
  auto generator = load_generator(a.generator);
  generator->eval();
  const auto shape = greybox->input_shape();
  const fs::path dir = a.out;
  fs::create_directories(dir);

  std::vector<GridRow> rows;
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    auto x = read_png(a.images[i], static_cast<int>(shape.channels));
    if (x.size(1) != shape.height || x.size(2) != shape.width) x = resize_image(x, shape.height, shape.width);
    const auto target = a.targets.size() == 1 ? a.targets[0] : a.targets[i];
    const auto probs = predict(*greybox, {x}).front();
    if (target < 0 || target >= greybox->num_classes()) {
      throw InvalidRequest("invalid target " + std::to_string(target) + " for " + a.images[i] +
                           ": must lie in [0, " + std::to_string(greybox->num_classes()) + ")");
    }
    if (target == probs.predicted) {
      throw InvalidRequest("invalid target " + std::to_string(target) + " for " + a.images[i] +
                           ": equals the current label");
    }
    const auto s = saliency_for_training(*greybox, x, probs.predicted, target, mode);
    const auto cf = generate(generator, x, s, target).image;
    const auto achieved = predict(*greybox, {cf}).front().predicted;
    const auto stem = fs::path(a.images[i]).stem().string();
    write_png(dir / (stem + "_cf.png"), cf);
    write_saliency_overlay(dir / (stem + "_saliency.png"), x, s);
    rows.push_back({x, s.values, cf});
    out << a.images[i] << ": label " << probs.predicted << " -> target " << target << ", achieved "
        << achieved << "\n";
  }
  save_grid(rows, dir / "grid.png");
  return kExitOk;
}

struct EvaluateArgs {
  std::string greybox, generator, data, out, pairs;
  std::string seeds = "0";
  bool identity = false;
  std::string saliency_mode = "current";
  double tau = kSparsityThreshold;
  std::int64_t batch_size = 64;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.identity == !a.generator.empty()) {
    throw ConfigError("give exactly one of --generator or --identity");
  }
  const auto seeds = parse_seeds(a.seeds);
  require_file(a.greybox, "grey-box descriptor");
  if (!a.identity) require_file(a.generator, "generator descriptor");
  const auto data = load_manifest_dataset(a.data, "evaluation manifest");
  auto greybox = load_greybox(a.greybox);
  freeze(*greybox);

  std::unique_ptr<Explainer> explainer;
  if (a.identity) {
    explainer = std::make_unique<IdentityExplainer>();
  } else {
    auto g = load_generator(a.generator);
    g->eval();
    explainer = std::make_unique<GeneratorExplainer>(g);
  }
  const auto embedding = greybox_embedding(*greybox);

  std::vector<MetricsReport> reports;
  json per_seed = json::array();
  for (const auto seed : seeds) {
    EvaluationOptions options;
    options.seed = seed;
    options.sparsity_tau = a.tau;
    options.batch_size = a.batch_size;
    options.saliency_mode = parse_saliency_mode(a.saliency_mode);
    auto ev = evaluate(*explainer, *greybox, data, embedding, options);
    reports.push_back(ev.report);
    per_seed.push_back({{"seed", seed}, {"metrics", ev.report.to_json()}});
    if (!a.pairs.empty() && seed == seeds.front()) write_pairs_csv(a.pairs, ev.records);
    out << "seed " << seed << ": " << ev.report.to_json().dump() << "\n";
  }
  const auto mean = MetricsReport::mean(reports);
  json report{{"explainer", a.identity ? "identity" : a.generator},
              {"seeds", seeds},
              {"per_seed", per_seed},
              {"mean", mean.to_json()}};
  write_report_json(a.out, report);
  out << "mean: " << mean.to_json().dump() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Saliency-guided counterfactual explanations for image classifiers", "safe_cli"};
  app.require_subcommand(1);

  ToydataArgs toy;
  auto* toydata = app.add_subcommand("toydata", "Generate the synthetic stop/go disc dataset");
  toydata->add_option("--n", toy.n, "Number of images")->capture_default_str();
  toydata->add_option("--seed", toy.seed, "Generator seed")->capture_default_str();
  toydata->add_option("--out", toy.out, "Dataset root directory")->required();
  toydata->add_option("--split", toy.split, "Split name")->capture_default_str();
  toydata->add_option("--size", toy.size, "Image height and width")->capture_default_str();

  std::string gb_config;
  Overrides gb;
  auto* train_gb = app.add_subcommand("train-greybox", "Train the toy grey-box classifier");
  train_gb->add_option("--config", gb_config, "JSON config file");
  train_gb->add_option("--data", gb.data, "Training manifest");
  train_gb->add_option("--val", gb.val_data, "Validation manifest");
  train_gb->add_option("--out", gb.out, "Output directory");
  train_gb->add_option("--capture-layer", gb.capture_layer, "Layer used for saliency");
  add_training_flags(train_gb, gb);

  std::string ex_config, ex_greybox;
  Overrides ex;
  auto* train_ex = app.add_subcommand("train-explainer", "Train the counterfactual generator");
  train_ex->add_option("--config", ex_config, "JSON config file");
  train_ex->add_option("--data", ex.data, "Training manifest");
  train_ex->add_option("--greybox", ex_greybox, "Grey-box descriptor JSON")->required();
  train_ex->add_option("--out", ex.out, "Output directory");
  add_training_flags(train_ex, ex);
  train_ex->add_option("--n-critic", ex.n_critic, "Discriminator updates per generator update");
  train_ex->add_option("--lambda-cls", ex.lambda_cls);
  train_ex->add_option("--lambda-gp", ex.lambda_gp);
  train_ex->add_option("--lambda-rec", ex.lambda_rec);
  train_ex->add_option("--lambda-fuse", ex.lambda_fuse);
  train_ex->add_flag("--no-reconstruction", ex.no_reconstruction, "Drop the reconstruction term from the generator loss");
  train_ex->add_option("--saliency-mode", ex.saliency_mode, "current, target or max");
  train_ex->add_option("--classifier-target", ex.classifier_target, "target or greybox");
  train_ex->add_option("--checkpoint-interval", ex.checkpoint_interval, "Steps between checkpoints");
  train_ex->add_option("--sample-interval", ex.sample_interval, "Steps between sample grids");

  ExplainArgs xa;
  auto* explain = app.add_subcommand("explain", "Write counterfactuals for individual images");
  explain->add_option("--greybox", xa.greybox, "Grey-box descriptor JSON")->required();
  explain->add_option("--generator", xa.generator, "Generator descriptor JSON")->required();
  explain->add_option("--image", xa.images, "Input PNG (repeatable)")->required();
  explain->add_option("--target", xa.targets, "Target label, once or per image")->required();
  explain->add_option("--out", xa.out, "Output directory")->required();
  explain->add_option("--saliency-mode", xa.saliency_mode)->capture_default_str();

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Compute counterfactual metrics on a dataset");
  eval->add_option("--greybox", ea.greybox, "Grey-box descriptor JSON")->required();
  eval->add_option("--generator", ea.generator, "Generator descriptor JSON");
  eval->add_flag("--identity", ea.identity, "Evaluate the no-op explainer");
  eval->add_option("--data", ea.data, "Evaluation manifest")->required();
  eval->add_option("--seeds", ea.seeds, "Comma-separated seeds")->capture_default_str();
  eval->add_option("--out", ea.out, "Report JSON path")->required();
  eval->add_option("--pairs", ea.pairs, "Per-pair CSV path (first seed)");
  eval->add_option("--tau", ea.tau, "Sparsity threshold")->capture_default_str();
  eval->add_option("--batch-size", ea.batch_size)->capture_default_str();
  eval->add_option("--saliency-mode", ea.saliency_mode)->capture_default_str();

  std::vector<std::string> argv_store{"safe_cli"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*toydata) return cmd_toydata(toy, out);
    if (*train_gb) {
      auto c = resolve(gb_config, gb);
      if (gb.epochs) c.greybox_training.epochs = *gb.epochs;
      if (gb.learning_rate) c.greybox_training.learning_rate = *gb.learning_rate;
      if (gb.batch_size) c.greybox_training.batch_size = *gb.batch_size;
      if (gb.seed) c.greybox_training.seed = *gb.seed;
      return cmd_train_greybox(c, out);
    }
    if (*train_ex) return cmd_train_explainer(resolve(ex_config, ex), ex_greybox, out);
    if (*explain) return cmd_explain(xa, out);
    if (*eval) return cmd_evaluate(ea, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace safe
