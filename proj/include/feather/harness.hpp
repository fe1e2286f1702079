#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "feather/config.hpp"
#include "feather/data.hpp"
#include "feather/model.hpp"
#include "feather/trainer.hpp"

namespace feather {

struct DatasetDescriptor {
  enum class Kind { Idx, SyntheticBlobs };

  Kind kind = Kind::Idx;
  std::filesystem::path images;
  std::filesystem::path labels;
  BlobSpec blobs;
  int classes = 10;
  double split = 0.8;  // training fraction
  std::uint64_t split_seed = 0;
};

struct ModelDescriptor {
  enum class Arch { Mlp, Cnn };

  Arch arch = Arch::Mlp;
  std::vector<std::size_t> hidden{300, 100};
  std::vector<std::size_t> channels{8, 16};
};

struct RunSpec {
  TrainConfig train;
  DatasetDescriptor data;
  ModelDescriptor model;
  std::filesystem::path out;
  std::string label;
  Config resolved;  // every key, as echoed to config.txt
};

/// Resolves defaults ⊕ `config` into a validated spec. Throws ConfigError.
RunSpec make_run_spec(const Config& config);

/// Train/validation parts of the described dataset.
std::pair<Dataset, Dataset> load_dataset(const DatasetDescriptor& data);

Model build_model(const ModelDescriptor& model, const Shape& sample_shape, int classes, std::uint64_t seed);

struct RunOutcome {
  TrainResult result;
  Model model;
};

/// Trains and writes into spec.out: config.txt, metrics.csv, stability.csv,
/// masks.bin (per-epoch masks) and final.fthr. `log` receives one line per epoch.
RunOutcome execute_run(const RunSpec& spec, std::ostream* log = nullptr);

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct SweepSpec {
  Config base;
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out;
  int jobs = 1;
};

struct SweepCell {
  std::vector<std::string> values;  // one per axis
  std::vector<double> final_top1;   // successful seeds only
  std::vector<double> final_sparsity;
  std::vector<std::string> failures;
};

/// Runs every (axis cross-product cell, seed) pair under spec.out/cell<i>/seed<s>
/// and writes spec.out/aggregate.csv:
///   <axis keys...>,runs,failed,top1_mean,top1_std,sparsity_mean,sparsity_std
/// A failing run is recorded in its cell and does not stop the sweep.
std::vector<SweepCell> run_sweep(const SweepSpec& spec, std::ostream* log = nullptr);

void write_aggregate_csv(std::ostream& out, const SweepSpec& spec, const std::vector<SweepCell>& cells);

/// Parses "key=v1,v2,..." into an axis.
SweepAxis parse_axis(const std::string& text);

}  // namespace feather
