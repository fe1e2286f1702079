#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "feather/errors.hpp"

namespace feather {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-d array with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// the tape and a model refer to one parameter. `clone()` makes a deep copy.
/// Every dimension must be positive; rank 0 denotes a scalar.
template <typename Scalar>
class Tensor {
 public:
  using VectorType = Vector<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, VectorType data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (static_cast<std::size_t>(data.size()) != shape_size(shape)) {
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = static_cast<Eigen::Index>(shape_size(shape));
    return Tensor(std::move(shape), VectorType::Zero(n), requires_grad);
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    VectorType data(static_cast<Eigen::Index>(values.size()));
    std::copy(values.begin(), values.end(), data.data());
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    VectorType data(1);
    data[0] = value;
    return Tensor({}, std::move(data), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  Eigen::Index size() const { return impl_->data.size(); }

  const VectorType& data() const { return impl_->data; }
  /// Direct write access, for optimizers and initializers. Not recorded on any tape.
  VectorType& mutable_data() { return impl_->data; }

  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return impl_->grad.has_value(); }
  const VectorType& grad() const {
    if (!impl_->grad) throw ContractError("tensor has no gradient");
    return *impl_->grad;
  }
  void zero_grad() { impl_->grad.reset(); }
  void set_grad(VectorType grad) {
    if (grad.size() != size()) {
      throw DimensionError("gradient length " + std::to_string(grad.size()) + " does not match shape " +
                           shape_string(shape()));
    }
    impl_->grad = std::move(grad);
  }
  void accumulate_grad(const VectorType& delta) {
    if (!impl_->grad) {
      set_grad(delta);
    } else {
      *impl_->grad += delta;
    }
  }

  /// View a rank-2 tensor as a row-major matrix.
  Eigen::Map<const RowMatrix<Scalar>> matrix() const {
    if (rank() != 2) throw DimensionError("matrix view needs rank 2, got " + shape_string(shape()));
    return {impl_->data.data(), static_cast<Eigen::Index>(dim(0)), static_cast<Eigen::Index>(dim(1))};
  }

  Tensor clone() const {
    Tensor copy(shape(), data(), requires_grad());
    if (has_grad()) copy.set_grad(grad());
    return copy;
  }

  /// True when both handles alias the same storage.
  bool is(const Tensor& other) const { return impl_ == other.impl_; }
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    VectorType data;
    bool requires_grad = false;
    std::optional<VectorType> grad;
  };
  std::shared_ptr<Impl> impl_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Converts element type; the result is a fresh leaf without gradient.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  return Tensor<To>(t.shape(), t.data().template cast<To>());
}

}  // namespace feather
