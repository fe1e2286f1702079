#include "feather/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "feather/autodiff.hpp"
#include "feather/random.hpp"

namespace feather {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

std::string divergence_report(int epoch, std::size_t batch, double loss, std::span<const PruneLayerState> layers) {
  std::ostringstream os;
  os << "non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch << "; weight norms:";
  for (const auto& l : layers) os << ' ' << l.name << '=' << l.weights.data().norm();
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be positive");
  if (batch_size < 1) throw ContractError("batch_size must be positive");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(label_smoothing >= 0.0)) {
    throw ContractError("learning rate, weight decay and label smoothing must be nonnegative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must lie in [0,1)");
  if (label_smoothing >= 1.0) throw ContractError("label smoothing must be < 1");
  if (lr_warmup_epochs < 0 || lr_warmup_epochs >= epochs) throw ContractError("warmup epochs must lie in [0, epochs)");
  SparsitySchedule s = schedule;
  s.total_epochs = epochs;
  s.validate();
  op.validate();
  grad_policy.validate();
}

void RunMetrics::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,val_top1,achieved_sparsity,lr,theta,mask_pearson_vs_final,end_mask_sparsity\n";
  char buf[256];
  for (const auto& r : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_top1,
                  r.achieved_sparsity, r.lr, r.theta, r.mask_pearson_vs_final, r.end_mask_sparsity);
    out << buf;
  }
}

double cosine_lr(long step, long total_steps, double base_lr, long warmup_steps) {
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double span = static_cast<double>(total_steps - warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) / span;
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(Vector<float>& weights, const Vector<float>& grad, Vector<float>& buffer, double lr, double momentum,
              double weight_decay) {
  if (grad.size() != weights.size() || buffer.size() != weights.size()) {
    throw ContractError("sgd_step size mismatch: weights " + std::to_string(weights.size()) + ", grad " +
                        std::to_string(grad.size()) + ", buffer " + std::to_string(buffer.size()));
  }
  const auto eta = static_cast<float>(lr);
  const auto mu = static_cast<float>(momentum);
  const auto lambda = static_cast<float>(weight_decay);
  if (lambda != 0.0f) {
    buffer = mu * buffer + (grad + lambda * weights);
  } else {
    buffer = mu * buffer + grad;
  }
  weights -= eta * buffer;
}

std::vector<PruneLayerState> make_prune_states(Model& model, const ThresholdOperator& op, double theta) {
  std::vector<PruneLayerState> states;
  for (auto* l : model.weighted_layers()) {
    PruneLayerState s;
    s.name = l->name;
    s.weights = l->weight;
    s.op = op;
    s.theta = theta;
    s.mask = Mask::Constant(l->weight.size(), true);
    s.is_conv = l->kind == LayerKind::Conv2d;
    states.push_back(std::move(s));
  }
  return states;
}

std::vector<Tensorf> sparse_weights(std::span<const PruneLayerState> layers) {
  std::vector<Tensorf> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    const auto t = l.threshold.value_or(ThresholdValue(0.0));
    out.emplace_back(l.weights.shape(), apply_threshold(l.weights.data(), t, l.op).pruned);
  }
  return out;
}

double evaluate_top1(const Model& model, const Dataset& data, std::span<const Tensorf> weights, std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto out = model.forward(data.batch(rows), weights);
    const auto logits = out.matrix();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      if (best == data.labels[start + static_cast<std::size_t>(r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(const TrainConfig& config, Model& model, const Dataset& train_set, const Dataset& val_set,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw ContractError("training and validation sets must be nonempty");
  if (train_set.sample_shape != model.input_shape && train_set.sample_size() != shape_size(model.input_shape)) {
    throw DimensionError("dataset samples " + shape_string(train_set.sample_shape) + " do not fit model input " +
                         shape_string(model.input_shape));
  }

  SparsitySchedule schedule = config.schedule;
  schedule.total_epochs = config.epochs;
  const double theta = config.prune ? select_theta(config.grad_policy, schedule.final_sparsity) : 1.0;

  TrainResult result;
  auto& states = result.layers;
  states = make_prune_states(model, config.op, theta);
  if (!config.prune) {
    for (auto& s : states) s.threshold = ThresholdValue(0.0);
  }

  auto weighted = model.weighted_layers();
  std::vector<Vector<float>> weight_buf, bias_buf;
  for (auto* l : weighted) {
    weight_buf.push_back(Vector<float>::Zero(l->weight.size()));
    bias_buf.push_back(Vector<float>::Zero(l->bias.size()));
  }

  // Samples are fed in the model's input layout.
  Dataset feed = train_set;
  feed.sample_shape = model.input_shape;
  Dataset val_feed = val_set;
  val_feed.sample_shape = model.input_shape;

  const std::size_t n = feed.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(batches) * config.epochs;
  const long warmup_steps = static_cast<long>(batches) * config.lr_warmup_epochs;
  long step = 0;
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.theta = theta;
    if (config.prune) {
      assign_thresholds(config.backbone, states, cubic_sparsity(epoch, schedule));
      record.achieved_sparsity = achieved_sparsity(states);
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = SplitMix64::derive(config.seed, static_cast<std::uint64_t>(epoch), kShuffleStream);
    shuffle(std::span<std::size_t>(order), rng);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t start = b * config.batch_size;
      std::span<const std::size_t> rows(order.data() + start, std::min(config.batch_size, n - start));
      const double lr = cosine_lr(step, total_steps, config.lr, warmup_steps);
      record.lr = lr;

      {
        GradientTape<float> tape;
        std::vector<Tensorf> sparse;
        if (config.prune) {
          sparse.reserve(states.size());
          for (auto& s : states) sparse.push_back(feather_forward(s));
        }
        const auto logits = model.forward(feed.batch(rows), sparse);
        const auto labels = feed.batch_labels(rows);
        const auto loss = softmax_cross_entropy(logits, labels, config.label_smoothing);
        const double value = loss.item();
        if (!std::isfinite(value)) throw TrainingDiverged(divergence_report(epoch, b, value, states));
        loss_sum += value;
        tape.backward(loss);
        if (config.prune) {
          for (std::size_t i = 0; i < states.size(); ++i) install_dense_gradient(states[i], sparse[i]);
        }
      }

      for (std::size_t i = 0; i < weighted.size(); ++i) {
        auto& w = weighted[i]->weight;
        auto& bias = weighted[i]->bias;
        sgd_step(w.mutable_data(), w.grad(), weight_buf[i], lr, config.momentum, config.weight_decay);
        sgd_step(bias.mutable_data(), bias.grad(), bias_buf[i], lr, config.momentum, config.weight_decay);
        w.zero_grad();
        bias.zero_grad();
      }
      ++step;
    }
    record.train_loss = loss_sum / static_cast<double>(batches);

    MaskSnapshot snapshot;
    snapshot.epoch = epoch;
    std::vector<Tensorf> eval_weights;
    for (auto& s : states) {
      auto thresholded = apply_threshold(s.weights.data(), *s.threshold, s.op);
      snapshot.layers.push_back(thresholded.mask);
      if (config.prune) eval_weights.emplace_back(s.weights.shape(), std::move(thresholded.pruned));
    }
    double pruned = 0.0, total = 0.0;
    for (const auto& m : snapshot.layers) {
      pruned += static_cast<double>(m.size() - m.count());
      total += static_cast<double>(m.size());
    }
    record.end_mask_sparsity = pruned / total;
    record.val_top1 = evaluate_top1(model, val_feed, eval_weights);

    result.snapshots.push_back(std::move(snapshot));
    result.metrics.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }

  const auto curve = stability_curve(result.snapshots);
  for (std::size_t i = 0; i < curve.size(); ++i) result.metrics.epochs[i].mask_pearson_vs_final = curve[i].r;
  for (std::size_t i = 0; i < states.size(); ++i) states[i].mask = result.snapshots.back().layers[i];
  return result;
}

}  // namespace feather
