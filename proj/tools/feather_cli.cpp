// feather: sparse-training experiment harness.
//
// Exit codes: 0 success, 1 run failure, 2 configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "feather/analysis.hpp"
#include "feather/checkpoint.hpp"
#include "feather/harness.hpp"

namespace {

using namespace feather;

constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--set", opts.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", opts.seed, "train.seed");
  cmd->add_option("--out", opts.out, "output directory");
}

Config resolve_config(const CommonOptions& opts) {
  Config cfg = opts.config_path.empty() ? Config{} : Config::load(opts.config_path);
  for (const auto& o : opts.overrides) cfg.assign(o);
  if (opts.seed) cfg.set("train.seed", std::to_string(*opts.seed));
  if (!opts.out.empty()) cfg.set("run.out", opts.out);
  return cfg;
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

struct LoadedRun {
  RunSpec spec;
  Model model;
  Dataset val_set;
};

/// Rebuilds the model and validation split of a finished run from its output directory.
LoadedRun load_run(const std::filesystem::path& dir, const Checkpoint& ck) {
  auto spec = make_run_spec(Config::load(dir / "config.txt"));
  auto [train_set, val_set] = load_dataset(spec.data);
  Model model = build_model(spec.model, train_set.sample_shape, spec.data.classes, spec.train.seed);
  restore_model(model, ck);
  val_set.sample_shape = model.input_shape;
  return {std::move(spec), std::move(model), std::move(val_set)};
}

int cmd_train(const CommonOptions& opts) {
  const auto spec = make_run_spec(resolve_config(opts));
  const auto outcome = execute_run(spec, &std::cerr);
  const auto& last = outcome.result.metrics.epochs.back();
  std::printf("final top1 %.4f  sparsity %.4f  -> %s\n", last.val_top1, last.end_mask_sparsity, spec.out.string().c_str());
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& checkpoint_path) {
  const std::filesystem::path dir(run_dir);
  const auto ck = load_checkpoint(checkpoint_path.empty() ? dir / "final.fthr" : std::filesystem::path(checkpoint_path));
  auto [spec, model, val_set] = load_run(dir, ck);

  const auto thresholds = checkpoint_thresholds(model, ck);
  std::vector<Tensorf> sparse;
  double pruned = 0.0, total = 0.0;
  const auto weighted = model.weighted_layers();
  for (std::size_t i = 0; i < weighted.size(); ++i) {
    const auto& w = weighted[i]->weight;
    sparse.emplace_back(w.shape(), apply_threshold(w.data(), thresholds[i], spec.train.op).pruned);
    pruned += static_cast<double>(pruned_count(w.data(), thresholds[i]));
    total += static_cast<double>(w.size());
  }
  const double top1 = evaluate_top1(model, val_set, spec.train.prune ? std::span<const Tensorf>(sparse) : std::span<const Tensorf>{});
  std::printf("top1,sparsity\n%.9g,%.9g\n", top1, pruned / total);
  return 0;
}

int cmd_sweep(const CommonOptions& opts, const std::vector<std::string>& axes, const std::vector<std::uint64_t>& seeds,
              int jobs) {
  SweepSpec spec;
  spec.base = resolve_config(opts);
  for (const auto& a : axes) spec.axes.push_back(parse_axis(a));
  spec.seeds = seeds;
  spec.jobs = jobs;
  spec.out = opts.out.empty() ? std::filesystem::path("runs/sweep") : std::filesystem::path(opts.out);
  make_run_spec(spec.base);  // reject a bad base config before any run starts
  const auto cells = run_sweep(spec, &std::cerr);
  write_aggregate_csv(std::cout, spec, cells);
  for (const auto& c : cells) {
    if (!c.failures.empty()) return kRunFailure;
  }
  return 0;
}

int cmd_analyze_masks(const std::string& masks_path, const std::string& out_path) {
  const auto snapshots = unpack_snapshots(load_checkpoint(masks_path));
  std::ofstream file;
  write_curve_csv(open_output(out_path, file), stability_curve(snapshots));
  return 0;
}

int cmd_flops(const CommonOptions& opts, const std::string& run_dir, const std::string& out_path) {
  FlopsReport report;
  if (!run_dir.empty()) {
    const std::filesystem::path dir(run_dir);
    const auto ck = load_checkpoint(dir / "final.fthr");
    const auto run = load_run(dir, ck);
    const auto& model = run.model;
    report = flops_count(model, checkpoint_masks(model, ck));
  } else {
    const auto spec = make_run_spec(resolve_config(opts));
    auto [train_set, val_set] = load_dataset(spec.data);
    const Model model = build_model(spec.model, train_set.sample_shape, spec.data.classes, spec.train.seed);
    std::vector<Mask> dense;
    for (const auto* l : model.weighted_layers()) dense.push_back(Mask::Constant(l->weight.size(), true));
    report = flops_count(model, dense);
  }
  std::ofstream file;
  write_flops_csv(open_output(out_path, file), report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feather: magnitude-pruning sparse training harness"};
  app.require_subcommand(1);

  CommonOptions train_opts, sweep_opts, flops_opts;
  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  add_common(train_cmd, train_opts);

  std::string eval_run, eval_ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a finished run's checkpoint on its validation split");
  eval_cmd->add_option("--run", eval_run, "run output directory")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint (default <run>/final.fthr)");

  std::vector<std::string> axes;
  std::vector<std::uint64_t> seeds{0};
  int jobs = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "cross-product sweep, aggregated over seeds");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--axis", axes, "key=v1,v2,... (repeatable)");
  sweep_cmd->add_option("--seeds", seeds, "seeds per cell")->delimiter(',');
  sweep_cmd->add_option("--jobs", jobs, "concurrent runs");

  std::string masks_path, analyze_out;
  auto* analyze_cmd = app.add_subcommand("analyze-masks", "mask stability curve (epoch,r) from masks.bin");
  analyze_cmd->add_option("--masks", masks_path, "masks.bin of a run")->required();
  analyze_cmd->add_option("--out", analyze_out, "CSV output (default stdout)");

  std::string flops_run, flops_out;
  auto* flops_cmd = app.add_subcommand("flops", "dense and sparse FLOPs per layer");
  flops_cmd->add_option("--config", flops_opts.config_path, "config describing the model (dense count)");
  flops_cmd->add_option("--set", flops_opts.overrides, "override a config key");
  flops_cmd->add_option("--run", flops_run, "run directory (sparse count from its checkpoint)");
  flops_cmd->add_option("--out", flops_out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(train_opts);
    if (*eval_cmd) return cmd_eval(eval_run, eval_ckpt);
    if (*sweep_cmd) return cmd_sweep(sweep_opts, axes, seeds, jobs);
    if (*analyze_cmd) return cmd_analyze_masks(masks_path, analyze_out);
    if (*flops_cmd) return cmd_flops(flops_opts, flops_run, flops_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return 0;
}
