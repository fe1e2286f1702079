#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "feather/autodiff.hpp"
#include "feather/tensor.hpp"

namespace feather {

enum class LayerKind { Dense, Conv2d, ReLU, Flatten };

struct Layer {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  Tensorf weight;  // Dense: [in×out]; Conv2d: [F×C×kh×kw]
  Tensorf bias;    // Dense: [out]; Conv2d: [F]
  Conv2dGeometry geometry;

  bool has_weights() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
};

/// Feed-forward stack of layers over a fixed per-sample input shape.
struct Model {
  Shape input_shape;  // per sample, e.g. {784} or {1,28,28}
  std::vector<Layer> layers;

  /// Layers that carry weights, in forward order.
  std::vector<Layer*> weighted_layers();
  std::vector<const Layer*> weighted_layers() const;

  /// All trainable tensors (weights and biases).
  std::vector<Tensorf> parameters() const;

  /// Runs the stack on a batch [N×input_shape...]. `weights`, when nonempty,
  /// replaces each weighted layer's weight tensor in order (the thresholded
  /// copies during sparse training).
  Tensorf forward(const Tensorf& batch, std::span<const Tensorf> weights = {}) const;

  /// Per-sample output shape of every layer, in order.
  std::vector<Shape> activation_shapes() const;

  Model clone() const;
};

/// Fully connected ReLU network: widths = {in, hidden..., out}.
Model make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed);

struct CnnSpec {
  Shape input_shape{1, 28, 28};
  std::vector<std::size_t> channels{8, 16};  // 3×3 convs; the second and later use stride 2
  std::size_t classes = 10;
};

/// Small convolutional classifier: conv3×3(pad 1) → ReLU blocks, flatten, dense.
Model make_cnn(const CnnSpec& spec, std::uint64_t seed);

}  // namespace feather
