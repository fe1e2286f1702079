#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "feather/analysis.hpp"
#include "feather/backbones.hpp"
#include "feather/data.hpp"
#include "feather/feather.hpp"
#include "feather/model.hpp"

namespace feather {

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double label_smoothing = 0.0;
  std::uint64_t seed = 0;
  int lr_warmup_epochs = 0;

  /// Off: plain dense training, no thresholding anywhere.
  bool prune = true;
  SparsitySchedule schedule{0.9, 20, 0.5};
  BackboneKind backbone = BackboneKind::global();
  ThresholdOperator op = ThresholdOperator::power(3.0);
  GradScalePolicy grad_policy = GradScalePolicy::auto_step();

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double achieved_sparsity = 0.0;  // right after threshold assignment
  double lr = 0.0;                 // at the last step of the epoch
  double theta = 1.0;
  double mask_pearson_vs_final = 0.0;
  double end_mask_sparsity = 0.0;  // of the masks snapshotted at epoch end
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;

  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  RunMetrics metrics;
  std::vector<MaskSnapshot> snapshots;
  /// Final per-layer state; `mask` holds the end-of-training mask.
  std::vector<PruneLayerState> layers;
};

/// Non-finite loss during training.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0 at `total_steps`.
double cosine_lr(long step, long total_steps, double base_lr, long warmup_steps = 0);

/// SGD with momentum and decoupled-from-m weight decay:
///   g ← grad + λ·w;  buffer ← μ·buffer + g;  w ← w − η·buffer
/// `grad` is the already θ-scaled gradient, so decay is never scaled.
void sgd_step(Vector<float>& weights, const Vector<float>& grad, Vector<float>& buffer, double lr, double momentum,
              double weight_decay);

/// Pruning state for every weighted layer of `model`, aliasing its weights.
std::vector<PruneLayerState> make_prune_states(Model& model, const ThresholdOperator& op, double theta);

/// Fraction of samples whose argmax logit matches the label. `weights`
/// overrides each weighted layer's weights when nonempty.
double evaluate_top1(const Model& model, const Dataset& data, std::span<const Tensorf> weights = {},
                     std::size_t batch_size = 512);

/// Thresholded copies of the layers' weights under their current thresholds.
std::vector<Tensorf> sparse_weights(std::span<const PruneLayerState> layers);

/// Observer invoked after each epoch's record is complete.
using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const TrainConfig& config, Model& model, const Dataset& train_set, const Dataset& val_set,
                  const EpochCallback& on_epoch = {});

}  // namespace feather
