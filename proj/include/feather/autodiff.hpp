#pragma once

// Reverse-mode differentiation over Tensor.
//
// A GradientTape becomes the active tape of the current thread for its
// lifetime. Every op below records itself on the active tape when at least
// one input requires a gradient; backward() then replays the records in
// reverse. Forward reductions have a fixed order (Eigen's blocked kernels
// for products, sequential loops elsewhere) so results are run-to-run
// bitwise stable.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "feather/errors.hpp"
#include "feather/tensor.hpp"

namespace feather {

template <typename Scalar>
class GradientTape {
 public:
  using TensorType = Tensor<Scalar>;
  using VectorType = Vector<Scalar>;
  /// Computes input gradients from the output gradient. `din[i]` must be
  /// assigned whenever `wanted[i]` is set; other slots are ignored.
  using BackwardRule =
      std::function<void(const VectorType& dout, std::vector<VectorType>& din, const std::vector<char>& wanted)>;

  GradientTape() : previous_(active_) { active_ = this; }
  ~GradientTape() { active_ = previous_; }
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* active() { return active_; }

  std::size_t size() const { return records_.size(); }

  void record(std::vector<TensorType> inputs, TensorType output, BackwardRule rule) {
    producer_[output.id()] = records_.size();
    records_.push_back({std::move(inputs), std::move(output), std::move(rule)});
  }

  /// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
  /// gradient. Intermediate gradients live only for the duration of the call,
  /// so repeated calls add the same leaf contribution each time.
  void backward(const TensorType& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    auto found = producer_.find(loss.id());
    if (found == producer_.end()) {
      if (!loss.requires_grad()) throw ContractError("loss was not produced under this tape");
      TensorType leaf = loss;
      leaf.accumulate_grad(VectorType::Ones(1));
      return;
    }

    std::unordered_map<const void*, VectorType> pending;
    std::unordered_map<const void*, TensorType> leaves;
    pending.emplace(loss.id(), VectorType::Ones(1));

    for (std::size_t i = found->second + 1; i-- > 0;) {
      auto& rec = records_[i];
      auto out = pending.find(rec.output.id());
      if (out == pending.end()) continue;
      const VectorType dout = std::move(out->second);
      pending.erase(out);

      std::vector<char> wanted(rec.inputs.size(), 0);
      for (std::size_t j = 0; j < rec.inputs.size(); ++j) wanted[j] = rec.inputs[j].requires_grad();
      std::vector<VectorType> din(rec.inputs.size());
      rec.rule(dout, din, wanted);

      for (std::size_t j = 0; j < rec.inputs.size(); ++j) {
        if (!wanted[j]) continue;
        const auto& input = rec.inputs[j];
        if (din[j].size() != input.size()) {
          throw DimensionError("backward rule produced gradient of length " + std::to_string(din[j].size()) +
                               " for input of shape " + shape_string(input.shape()));
        }
        auto slot = pending.find(input.id());
        if (slot == pending.end()) {
          pending.emplace(input.id(), std::move(din[j]));
        } else {
          slot->second += din[j];
        }
        if (!producer_.contains(input.id())) leaves.emplace(input.id(), input);
      }
    }

    for (auto& [id, leaf] : leaves) {
      auto g = pending.find(id);
      if (g != pending.end()) leaf.accumulate_grad(g->second);
    }
  }

 private:
  struct Record {
    std::vector<TensorType> inputs;
    TensorType output;
    BackwardRule rule;
  };

  std::vector<Record> records_;
  std::unordered_map<const void*, std::size_t> producer_;
  GradientTape* previous_;
  static inline thread_local GradientTape* active_ = nullptr;
};

/// Backpropagates from `loss` through the thread's active tape.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  auto* tape = GradientTape<Scalar>::active();
  if (tape == nullptr) throw ContractError("backward() called without an active GradientTape");
  tape->backward(loss);
}

namespace detail {

/// Marks `out` as differentiable and records it when a tape is active and an
/// input needs a gradient.
template <typename Scalar>
void maybe_record(std::vector<Tensor<Scalar>> inputs, Tensor<Scalar>& out,
                  typename GradientTape<Scalar>::BackwardRule rule) {
  auto* tape = GradientTape<Scalar>::active();
  bool needed = false;
  for (const auto& t : inputs) needed = needed || t.requires_grad();
  if (tape == nullptr || !needed) return;
  out.set_requires_grad(true);
  tape->record(std::move(inputs), out, std::move(rule));
}

template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

}  // namespace detail

/// a[m×k] · b[k×n].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " · " + shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Vector<Scalar> data(m * n);
  detail::MatMap<Scalar>(data.data(), m, n).noalias() = a.matrix() * b.matrix();
  Tensor<Scalar> out({a.dim(0), b.dim(1)}, std::move(data));

  detail::maybe_record<Scalar>({a, b}, out, [a, b, m, k, n](const auto& dout, auto& din, const auto& wanted) {
    detail::ConstMatMap<Scalar> g(dout.data(), m, n);
    if (wanted[0]) {
      din[0].resize(m * k);
      detail::MatMap<Scalar>(din[0].data(), m, k).noalias() = g * b.matrix().transpose();
    }
    if (wanted[1]) {
      din[1].resize(k * n);
      detail::MatMap<Scalar>(din[1].data(), k, n).noalias() = a.matrix().transpose() * g;
    }
  });
  return out;
}

/// Adds a per-feature bias: x[N×F] + b[F], or x[N×C×H×W] + b[C] per channel.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& b) {
  if (!((x.rank() == 2 || x.rank() == 4) && b.rank() == 1 && x.dim(1) == b.dim(0))) {
    throw DimensionError("add_bias shape mismatch: " + shape_string(x.shape()) + " + " + shape_string(b.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(x.dim(0));
  const auto features = static_cast<Eigen::Index>(x.dim(1));
  const auto inner = x.size() / (rows * features);
  Vector<Scalar> data = x.data();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index f = 0; f < features; ++f) {
      data.segment((r * features + f) * inner, inner).array() += b.data()[f];
    }
  }
  Tensor<Scalar> out(x.shape(), std::move(data));

  detail::maybe_record<Scalar>({x, b}, out, [rows, features, inner](const auto& dout, auto& din, const auto& wanted) {
    if (wanted[0]) din[0] = dout;
    if (wanted[1]) {
      din[1] = Vector<Scalar>::Zero(features);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index f = 0; f < features; ++f) {
          const auto* p = dout.data() + (r * features + f) * inner;
          Scalar acc = 0;
          for (Eigen::Index i = 0; i < inner; ++i) acc += p[i];
          din[1][f] += acc;
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.data().cwiseMax(Scalar(0)));
  detail::maybe_record<Scalar>({x}, out, [x](const auto& dout, auto& din, const auto&) {
    din[0] = (x.data().array() > Scalar(0)).select(dout, Scalar(0));
  });
  return out;
}

/// Same data under a new shape of equal size.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_size(shape) != static_cast<std::size_t>(x.size())) {
    throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tensor<Scalar> out(std::move(shape), x.data());
  detail::maybe_record<Scalar>({x}, out, [](const auto& dout, auto& din, const auto&) { din[0] = dout; });
  return out;
}

/// Collapses all but the leading dimension: [N×...] → [N×rest].
template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw DimensionError("flatten needs rank >= 1, got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0);
  return reshape(x, {rows, static_cast<std::size_t>(x.size()) / rows});
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar acc = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += x.data()[i];
  auto out = Tensor<Scalar>::scalar(acc);
  const auto n = x.size();
  detail::maybe_record<Scalar>({x}, out, [n](const auto& dout, auto& din, const auto&) {
    din[0] = Vector<Scalar>::Constant(n, dout[0]);
  });
  return out;
}

/// Mean cross-entropy of softmax(logits) against one-hot targets smoothed
/// to (1 − smoothing) on the true class plus smoothing/K everywhere.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels,
                                     double smoothing = 0.0) {
  if (logits.rank() != 2) throw DimensionError("logits must be N×K, got " + shape_string(logits.shape()));
  const auto n = static_cast<Eigen::Index>(logits.dim(0));
  const auto k = static_cast<Eigen::Index>(logits.dim(1));
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw ContractError("label smoothing must lie in [0,1), got " + std::to_string(smoothing));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw IndexError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0," + std::to_string(k) + ")");
    }
  }

  const auto off = static_cast<Scalar>(smoothing / static_cast<double>(k));
  const auto on = static_cast<Scalar>(1.0 - smoothing) + off;
  auto x = logits.matrix();
  RowMatrix<Scalar> probs(n, k);
  Scalar total = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mx = x.row(r).maxCoeff();
    Scalar z = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
      probs(r, c) = std::exp(x(r, c) - mx);
      z += probs(r, c);
    }
    const Scalar log_z = std::log(z) + mx;
    Scalar row_loss = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
      probs(r, c) /= z;
      const Scalar target = c == labels[r] ? on : off;
      if (target != Scalar(0)) row_loss += target * (log_z - x(r, c));
    }
    total += row_loss;
  }
  auto out = Tensor<Scalar>::scalar(total / static_cast<Scalar>(n));

  std::vector<int> label_copy(labels.begin(), labels.end());
  detail::maybe_record<Scalar>(
      {logits}, out, [probs = std::move(probs), label_copy, on, off, n, k](const auto& dout, auto& din, const auto&) {
        din[0].resize(n * k);
        const Scalar scale = dout[0] / static_cast<Scalar>(n);
        for (Eigen::Index r = 0; r < n; ++r) {
          for (Eigen::Index c = 0; c < k; ++c) {
            const Scalar target = c == label_copy[r] ? on : off;
            din[0][r * k + c] = (probs(r, c) - target) * scale;
          }
        }
      });
  return out;
}

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

namespace detail {

struct ConvDims {
  Eigen::Index n, c, h, w, f, kh, kw, oh, ow, stride, pad;
  Eigen::Index patch() const { return c * kh * kw; }
  Eigen::Index positions() const { return oh * ow; }
};

// cols[(ch·kh + i)·kw + j, oy·ow + ox] = padded input at the tap.
template <typename Scalar>
void im2col(const Scalar* img, const ConvDims& d, RowMatrix<Scalar>& cols) {
  cols.setZero(d.patch(), d.positions());
  for (Eigen::Index ch = 0; ch < d.c; ++ch) {
    for (Eigen::Index i = 0; i < d.kh; ++i) {
      for (Eigen::Index j = 0; j < d.kw; ++j) {
        const Eigen::Index row = (ch * d.kh + i) * d.kw + j;
        for (Eigen::Index oy = 0; oy < d.oh; ++oy) {
          const Eigen::Index y = oy * d.stride + i - d.pad;
          if (y < 0 || y >= d.h) continue;
          for (Eigen::Index ox = 0; ox < d.ow; ++ox) {
            const Eigen::Index xx = ox * d.stride + j - d.pad;
            if (xx < 0 || xx >= d.w) continue;
            cols(row, oy * d.ow + ox) = img[(ch * d.h + y) * d.w + xx];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvDims& d, Scalar* img) {
  for (Eigen::Index ch = 0; ch < d.c; ++ch) {
    for (Eigen::Index i = 0; i < d.kh; ++i) {
      for (Eigen::Index j = 0; j < d.kw; ++j) {
        const Eigen::Index row = (ch * d.kh + i) * d.kw + j;
        for (Eigen::Index oy = 0; oy < d.oh; ++oy) {
          const Eigen::Index y = oy * d.stride + i - d.pad;
          if (y < 0 || y >= d.h) continue;
          for (Eigen::Index ox = 0; ox < d.ow; ++ox) {
            const Eigen::Index xx = ox * d.stride + j - d.pad;
            if (xx < 0 || xx >= d.w) continue;
            img[(ch * d.h + y) * d.w + xx] += cols(row, oy * d.ow + ox);
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Output spatial extent of a convolution: floor((in + 2·pad − k)/stride) + 1.
inline std::size_t conv_output_extent(std::size_t in, std::size_t k, const Conv2dGeometry& g) {
  return (in + 2 * g.padding - k) / g.stride + 1;
}

/// Cross-correlation of input[N×C×H×W] with kernel[F×C×kh×kw], zero padded.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, Conv2dGeometry geom = {}) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d shape mismatch: input " + shape_string(input.shape()) + ", kernel " +
                         shape_string(kernel.shape()));
  }
  if (geom.stride < 1) throw ContractError("conv2d stride must be >= 1");
  if (kernel.dim(2) > input.dim(2) + 2 * geom.padding || kernel.dim(3) > input.dim(3) + 2 * geom.padding) {
    throw DimensionError("conv2d kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                         shape_string(input.shape()) + " (padding " + std::to_string(geom.padding) + ")");
  }
  using I = Eigen::Index;
  detail::ConvDims d{static_cast<I>(input.dim(0)),
                     static_cast<I>(input.dim(1)),
                     static_cast<I>(input.dim(2)),
                     static_cast<I>(input.dim(3)),
                     static_cast<I>(kernel.dim(0)),
                     static_cast<I>(kernel.dim(2)),
                     static_cast<I>(kernel.dim(3)),
                     static_cast<I>(conv_output_extent(input.dim(2), kernel.dim(2), geom)),
                     static_cast<I>(conv_output_extent(input.dim(3), kernel.dim(3), geom)),
                     static_cast<I>(geom.stride),
                     static_cast<I>(geom.padding)};

  detail::ConstMatMap<Scalar> k_mat(kernel.data().data(), d.f, d.patch());
  Vector<Scalar> data(d.n * d.f * d.positions());
  RowMatrix<Scalar> cols;
  for (I s = 0; s < d.n; ++s) {
    detail::im2col(input.data().data() + s * d.c * d.h * d.w, d, cols);
    detail::MatMap<Scalar>(data.data() + s * d.f * d.positions(), d.f, d.positions()).noalias() = k_mat * cols;
  }
  Tensor<Scalar> out({input.dim(0), kernel.dim(0), static_cast<std::size_t>(d.oh), static_cast<std::size_t>(d.ow)},
                     std::move(data));

  detail::maybe_record<Scalar>({input, kernel}, out, [input, kernel, d](const auto& dout, auto& din, const auto& wanted) {
    detail::ConstMatMap<Scalar> k_mat(kernel.data().data(), d.f, d.patch());
    if (wanted[0]) din[0] = Vector<Scalar>::Zero(input.size());
    if (wanted[1]) din[1] = Vector<Scalar>::Zero(kernel.size());
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> dcols;
    for (I s = 0; s < d.n; ++s) {
      detail::ConstMatMap<Scalar> g(dout.data() + s * d.f * d.positions(), d.f, d.positions());
      if (wanted[1]) {
        detail::im2col(input.data().data() + s * d.c * d.h * d.w, d, cols);
        detail::MatMap<Scalar>(din[1].data(), d.f, d.patch()).noalias() += g * cols.transpose();
      }
      if (wanted[0]) {
        dcols.noalias() = k_mat.transpose() * g;
        detail::col2im_add(dcols, d, din[0].data() + s * d.c * d.h * d.w);
      }
    }
  });
  return out;
}

}  // namespace feather
