#include "feather/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "feather/analysis.hpp"
#include "feather/checkpoint.hpp"

namespace feather {

namespace {

template <typename Fn>
auto config_checked(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const ContractError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

ThresholdOperator parse_operator(const Config& cfg) {
  const auto& name = cfg.get("prune.operator");
  if (name == "soft") return ThresholdOperator::soft();
  if (name == "hard") return ThresholdOperator::hard();
  if (name == "powerp") {
    const double p = cfg.get_double("prune.p");
    if (std::isinf(p) && p > 0) return ThresholdOperator::hard();
    return config_checked("prune.p", [&] { return ThresholdOperator::power(p); });
  }
  throw ConfigError("prune.operator: expected soft, hard or powerp, got '" + name + "'");
}

GradScalePolicy parse_policy(const Config& cfg) {
  const auto& theta = cfg.get("prune.theta");
  const double threshold = cfg.get_double("prune.theta_threshold_sparsity");
  const double low = cfg.get_double("prune.theta_low");
  if (theta == "auto") {
    return config_checked("prune.theta", [&] { return GradScalePolicy::auto_step(threshold, low); });
  }
  const double value = cfg.get_double("prune.theta");
  return config_checked("prune.theta", [&] { return GradScalePolicy::fixed(value); });
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double stddev(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  if (v.size() == 1) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

RunSpec make_run_spec(const Config& config) {
  Config cfg = Config::defaults();
  for (const auto& [key, value] : config.entries()) {
    if (!cfg.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  cfg.merge(config);

  RunSpec spec;
  spec.resolved = cfg;
  spec.label = cfg.get("run.label");
  if (spec.label.empty()) throw ConfigError("run.label must be nonempty");
  spec.out = cfg.get("run.out");

  auto& t = spec.train;
  t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  t.batch_size = static_cast<std::size_t>(cfg.get_uint("train.batch_size"));
  t.lr = cfg.get_double("train.lr");
  t.momentum = cfg.get_double("train.momentum");
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.label_smoothing = cfg.get_double("train.label_smoothing");
  t.seed = cfg.get_uint("train.seed");
  t.lr_warmup_epochs = static_cast<int>(cfg.get_int("train.lr_warmup_epochs"));
  t.schedule.final_sparsity = cfg.get_double("schedule.final_sparsity");
  t.schedule.ramp_fraction = cfg.get_double("schedule.ramp_fraction");
  t.schedule.total_epochs = t.epochs;
  t.prune = cfg.get_bool("prune.enabled");

  const auto& backbone = cfg.get("prune.backbone");
  if (backbone == "global") {
    t.backbone = BackboneKind::global();
  } else if (backbone == "uniform") {
    t.backbone = BackboneKind::uniform();
  } else {
    throw ConfigError("prune.backbone: expected global or uniform, got '" + backbone + "'");
  }
  if (cfg.get("prune.exempt_first_conv") != "auto") t.backbone.exempt_first_conv = cfg.get_bool("prune.exempt_first_conv");
  t.op = parse_operator(cfg);
  t.grad_policy = parse_policy(cfg);
  config_checked("train", [&] {
    t.validate();
    return 0;
  });

  auto& d = spec.data;
  const auto& kind = cfg.get("data.kind");
  if (kind == "idx") {
    d.kind = DatasetDescriptor::Kind::Idx;
    d.images = cfg.get("data.images");
    d.labels = cfg.get("data.labels");
  } else if (kind == "blobs") {
    d.kind = DatasetDescriptor::Kind::SyntheticBlobs;
  } else {
    throw ConfigError("data.kind: expected idx or blobs, got '" + kind + "'");
  }
  d.classes = static_cast<int>(cfg.get_int("data.classes"));
  d.split = cfg.get_double("data.split");
  d.split_seed = cfg.get_uint("data.split_seed");
  d.blobs.classes = d.classes;
  d.blobs.dims = static_cast<int>(cfg.get_int("data.dims"));
  d.blobs.samples = static_cast<int>(cfg.get_int("data.samples"));
  d.blobs.noise = cfg.get_double("data.noise");
  d.blobs.seed = cfg.get_uint("data.seed");
  if (d.classes < 2) throw ConfigError("data.classes must be >= 2");
  if (!(d.split > 0.0 && d.split < 1.0)) throw ConfigError("data.split must lie in (0,1)");

  const auto& arch = cfg.get("model.arch");
  if (arch == "mlp") {
    spec.model.arch = ModelDescriptor::Arch::Mlp;
  } else if (arch == "cnn") {
    spec.model.arch = ModelDescriptor::Arch::Cnn;
  } else {
    throw ConfigError("model.arch: expected mlp or cnn, got '" + arch + "'");
  }
  spec.model.hidden = cfg.get_sizes("model.hidden");
  spec.model.channels = cfg.get_sizes("model.channels");
  return spec;
}

std::pair<Dataset, Dataset> load_dataset(const DatasetDescriptor& data) {
  Dataset all = data.kind == DatasetDescriptor::Kind::Idx ? load_idx(data.images, data.labels, data.classes)
                                                          : synth_blobs(data.blobs);
  return split_dataset(all, data.split, data.split_seed);
}

Model build_model(const ModelDescriptor& model, const Shape& sample_shape, int classes, std::uint64_t seed) {
  if (model.arch == ModelDescriptor::Arch::Mlp) {
    std::vector<std::size_t> widths{shape_size(sample_shape)};
    widths.insert(widths.end(), model.hidden.begin(), model.hidden.end());
    widths.push_back(static_cast<std::size_t>(classes));
    return make_mlp(widths, seed);
  }
  CnnSpec cnn;
  cnn.input_shape = sample_shape;
  cnn.channels = model.channels;
  cnn.classes = static_cast<std::size_t>(classes);
  return make_cnn(cnn, seed);
}

RunOutcome execute_run(const RunSpec& spec, std::ostream* log) {
  auto [train_set, val_set] = load_dataset(spec.data);
  Model model = build_model(spec.model, train_set.sample_shape, spec.data.classes, spec.train.seed);

  std::filesystem::create_directories(spec.out);
  write_text(spec.out / "config.txt", spec.resolved.to_text());

  EpochCallback on_epoch;
  if (log != nullptr) {
    on_epoch = [&](const EpochRecord& r) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "[%s] epoch %3d  loss %.4f  top1 %.4f  sparsity %.4f  lr %.5f\n", spec.label.c_str(),
                    r.epoch, r.train_loss, r.val_top1, r.achieved_sparsity, r.lr);
      *log << buf << std::flush;
    };
  }
  auto result = train(spec.train, model, train_set, val_set, on_epoch);

  {
    std::ofstream metrics(spec.out / "metrics.csv", std::ios::trunc);
    result.metrics.write_csv(metrics);
    std::ofstream curve(spec.out / "stability.csv", std::ios::trunc);
    write_curve_csv(curve, stability_curve(result.snapshots));
  }
  save_checkpoint(pack_snapshots(result.snapshots, result.layers), spec.out / "masks.bin");
  save_checkpoint(make_checkpoint(model, result.layers), spec.out / "final.fthr");
  return {std::move(result), std::move(model)};
}

SweepAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("sweep axis must look like key=v1,v2,..., got '" + text + "'");
  }
  SweepAxis axis{text.substr(0, eq), {}};
  std::string rest = text.substr(eq + 1);
  std::size_t start = 0;
  while (start <= rest.size()) {
    const auto comma = rest.find(',', start);
    auto item = rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (item.empty()) throw ConfigError("empty value in sweep axis '" + text + "'");
    axis.values.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return axis;
}

std::vector<SweepCell> run_sweep(const SweepSpec& spec, std::ostream* log) {
  if (spec.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  if (spec.jobs < 1) throw ConfigError("--jobs must be >= 1");

  std::vector<SweepCell> cells(1);
  for (const auto& axis : spec.axes) {
    if (axis.values.empty()) throw ConfigError("sweep axis '" + axis.key + "' has no values");
    std::vector<SweepCell> next;
    for (const auto& cell : cells) {
      for (const auto& v : axis.values) {
        SweepCell c = cell;
        c.values.push_back(v);
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }

  struct Task {
    std::size_t cell = 0;
    std::size_t seed_index = 0;
    bool ok = false;
    double top1 = 0.0;
    double sparsity = 0.0;
    std::string error;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      Task t;
      t.cell = c;
      t.seed_index = s;
      tasks.push_back(std::move(t));
    }
  }

  std::mutex log_mutex;
  std::atomic<std::size_t> next_task{0};
  auto worker = [&] {
    for (std::size_t i = next_task++; i < tasks.size(); i = next_task++) {
      auto& task = tasks[i];
      const auto seed = spec.seeds[task.seed_index];
      try {
        Config cfg = spec.base;
        std::string label = "cell" + std::to_string(task.cell);
        for (std::size_t a = 0; a < spec.axes.size(); ++a) {
          cfg.set(spec.axes[a].key, cells[task.cell].values[a]);
          label += "_" + spec.axes[a].key + "=" + cells[task.cell].values[a];
        }
        cfg.set("train.seed", std::to_string(seed));
        cfg.set("run.label", label + "_seed" + std::to_string(seed));
        cfg.set("run.out", (spec.out / ("cell" + std::to_string(task.cell)) / ("seed" + std::to_string(seed))).string());
        const auto run_spec = make_run_spec(cfg);
        const auto outcome = execute_run(run_spec);
        const auto& last = outcome.result.metrics.epochs.back();
        task.top1 = last.val_top1;
        task.sparsity = last.end_mask_sparsity;
        task.ok = true;
      } catch (const std::exception& e) {
        task.error = "seed " + std::to_string(seed) + ": " + e.what();
      }
      if (log != nullptr) {
        std::lock_guard lock(log_mutex);
        *log << "cell " << task.cell << " seed " << seed << (task.ok ? " done" : " FAILED: " + task.error) << '\n'
             << std::flush;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(spec.jobs), tasks.size());
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  }

  for (const auto& task : tasks) {
    auto& cell = cells[task.cell];
    if (task.ok) {
      cell.final_top1.push_back(task.top1);
      cell.final_sparsity.push_back(task.sparsity);
    } else {
      cell.failures.push_back(task.error);
    }
  }

  std::filesystem::create_directories(spec.out);
  std::ofstream out(spec.out / "aggregate.csv", std::ios::trunc);
  write_aggregate_csv(out, spec, cells);
  write_text(spec.out / "config.txt", spec.base.to_text());
  return cells;
}

void write_aggregate_csv(std::ostream& out, const SweepSpec& spec, const std::vector<SweepCell>& cells) {
  for (const auto& axis : spec.axes) out << axis.key << ',';
  out << "runs,failed,top1_mean,top1_std,sparsity_mean,sparsity_std\n";
  char buf[160];
  for (const auto& cell : cells) {
    for (const auto& v : cell.values) out << v << ',';
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", cell.final_top1.size() + cell.failures.size(),
                  cell.failures.size(), mean(cell.final_top1), stddev(cell.final_top1), mean(cell.final_sparsity),
                  stddev(cell.final_sparsity));
    out << buf;
  }
}

}  // namespace feather
