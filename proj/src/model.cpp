#include "feather/model.hpp"

#include <cmath>

#include "feather/random.hpp"

namespace feather {

namespace {

Tensorf uniform_tensor(Shape shape, double bound, SplitMix64& rng) {
  Tensorf t = Tensorf::zeros(std::move(shape), true);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.mutable_data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

// U(−1/√fan_in, 1/√fan_in) for weights and biases alike.
Layer dense_layer(std::string name, std::size_t in, std::size_t out, SplitMix64& rng) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.name = std::move(name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight = uniform_tensor({in, out}, bound, rng);
  l.bias = uniform_tensor({out}, bound, rng);
  return l;
}

Layer conv_layer(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k, Conv2dGeometry g,
                 SplitMix64& rng) {
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.name = std::move(name);
  l.geometry = g;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
  l.weight = uniform_tensor({out_ch, in_ch, k, k}, bound, rng);
  l.bias = uniform_tensor({out_ch}, bound, rng);
  return l;
}

Layer simple_layer(LayerKind kind) {
  Layer l;
  l.kind = kind;
  l.name = kind == LayerKind::ReLU ? "relu" : "flatten";
  return l;
}

}  // namespace

std::vector<Layer*> Model::weighted_layers() {
  std::vector<Layer*> out;
  for (auto& l : layers) {
    if (l.has_weights()) out.push_back(&l);
  }
  return out;
}

std::vector<const Layer*> Model::weighted_layers() const {
  std::vector<const Layer*> out;
  for (const auto& l : layers) {
    if (l.has_weights()) out.push_back(&l);
  }
  return out;
}

std::vector<Tensorf> Model::parameters() const {
  std::vector<Tensorf> out;
  for (const auto& l : layers) {
    if (!l.has_weights()) continue;
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

Tensorf Model::forward(const Tensorf& batch, std::span<const Tensorf> weights) const {
  const auto weighted = weighted_layers();
  if (!weights.empty() && weights.size() != weighted.size()) {
    throw ContractError("forward got " + std::to_string(weights.size()) + " weight overrides for " +
                        std::to_string(weighted.size()) + " weighted layers");
  }
  Shape expected{batch.dim(0)};
  expected.insert(expected.end(), input_shape.begin(), input_shape.end());
  if (batch.shape() != expected) {
    throw DimensionError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                         shape_string(expected));
  }

  Tensorf x = batch;
  std::size_t w_index = 0;
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Dense: {
        const Tensorf& w = weights.empty() ? l.weight : weights[w_index];
        ++w_index;
        if (x.rank() != 2) x = flatten(x);
        x = add_bias(matmul(x, w), l.bias);
        break;
      }
      case LayerKind::Conv2d: {
        const Tensorf& w = weights.empty() ? l.weight : weights[w_index];
        ++w_index;
        x = add_bias(conv2d(x, w, l.geometry), l.bias);
        break;
      }
      case LayerKind::ReLU:
        x = relu(x);
        break;
      case LayerKind::Flatten:
        x = flatten(x);
        break;
    }
  }
  return x;
}

std::vector<Shape> Model::activation_shapes() const {
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Dense:
        cur = {l.weight.dim(1)};
        break;
      case LayerKind::Conv2d:
        if (cur.size() != 3) throw DimensionError("conv layer '" + l.name + "' needs C×H×W input, got " + shape_string(cur));
        cur = {l.weight.dim(0), conv_output_extent(cur[1], l.weight.dim(2), l.geometry),
               conv_output_extent(cur[2], l.weight.dim(3), l.geometry)};
        break;
      case LayerKind::ReLU:
        break;
      case LayerKind::Flatten:
        cur = {shape_size(cur)};
        break;
    }
    out.push_back(cur);
  }
  return out;
}

Model Model::clone() const {
  Model copy = *this;
  for (auto& l : copy.layers) {
    if (!l.has_weights()) continue;
    l.weight = l.weight.clone();
    l.bias = l.bias.clone();
  }
  return copy;
}

Model make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ContractError("an MLP needs at least input and output widths");
  auto rng = SplitMix64::derive(seed, 0x6d6f64656cULL);
  Model m;
  m.input_shape = {widths.front()};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (i > 0) m.layers.push_back(simple_layer(LayerKind::ReLU));
    m.layers.push_back(dense_layer("fc" + std::to_string(i + 1), widths[i], widths[i + 1], rng));
  }
  return m;
}

Model make_cnn(const CnnSpec& spec, std::uint64_t seed) {
  if (spec.input_shape.size() != 3) throw ContractError("CNN input must be C×H×W, got " + shape_string(spec.input_shape));
  if (spec.channels.empty()) throw ContractError("CNN needs at least one conv layer");
  auto rng = SplitMix64::derive(seed, 0x6d6f64656cULL);
  Model m;
  m.input_shape = spec.input_shape;
  std::size_t in_ch = spec.input_shape[0];
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    Conv2dGeometry g{i == 0 ? 1u : 2u, 1};
    m.layers.push_back(conv_layer("conv" + std::to_string(i + 1), in_ch, spec.channels[i], 3, g, rng));
    m.layers.push_back(simple_layer(LayerKind::ReLU));
    in_ch = spec.channels[i];
  }
  m.layers.push_back(simple_layer(LayerKind::Flatten));
  const auto shapes = m.activation_shapes();
  m.layers.push_back(dense_layer("fc", shape_size(shapes.back()), spec.classes, rng));
  return m;
}

}  // namespace feather
