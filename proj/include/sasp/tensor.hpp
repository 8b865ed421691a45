#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sasp/errors.hpp"

namespace sasp {

// Dimensions of a rank-2 [n, d] or rank-4 [n, c, h, w] tensor.
struct Shape {
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  std::size_t rank = 4;

  static Shape nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return Shape{{n, c, h, w}, 4};
  }
  static Shape nd(std::size_t n, std::size_t d) { return Shape{{n, d, 1, 1}, 2}; }

  std::size_t n() const { return dims[0]; }
  std::size_t c() const { return dims[1]; }
  std::size_t h() const { return dims[2]; }
  std::size_t w() const { return dims[3]; }
  std::size_t d() const { return dims[1]; }

  std::size_t size() const {
    std::size_t s = 1;
    for (std::size_t i = 0; i < rank; ++i) s *= dims[i];
    return s;
  }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (std::size_t i = 0; i < rank; ++i)
      if (dims[i] != o.dims[i]) return false;
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < rank; ++i) {
      if (i) s += ",";
      s += std::to_string(dims[i]);
    }
    return s + "]";
  }
};

// Dense row-major tensor. Rank 4 is [n][c][h][w]; rank 2 is [n][d].
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() : Tensor(Shape::nchw(1, 1, 1, 1)) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape) {
    validate_dims();
    data_.assign(shape_.size(), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
    validate_dims();
    if (data_.size() != shape_.size())
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank; }
  std::size_t size() const { return data_.size(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }
  const std::vector<Scalar>& vec() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  Scalar& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  const Scalar& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  Scalar& at(std::size_t n, std::size_t d) { return data_[n * shape_.dims[1] + d]; }
  const Scalar& at(std::size_t n, std::size_t d) const { return data_[n * shape_.dims[1] + d]; }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  // Same data viewed under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape.size() != size())
      throw InvalidArgument("cannot reshape " + shape_.str() + " to " + shape.str());
    return Tensor(shape, data_);
  }

  // Copies sample `i` (leading axis) into a batch-of-one tensor.
  Tensor sample(std::size_t i) const {
    Shape s = shape_;
    s.dims[0] = 1;
    const std::size_t stride = s.size();
    if (i >= shape_.n()) throw InvalidArgument("sample index out of range");
    return Tensor(s, std::vector<Scalar>(data_.begin() + i * stride,
                                         data_.begin() + (i + 1) * stride));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

 private:
  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.dims[1] + c) * shape_.dims[2] + h) * shape_.dims[3] + w;
  }

  void validate_dims() const {
    if (shape_.rank != 2 && shape_.rank != 4)
      throw InvalidArgument("tensor rank must be 2 or 4");
    for (std::size_t i = 0; i < shape_.rank; ++i)
      if (shape_.dims[i] == 0) throw InvalidArgument("zero dimension in shape " + shape_.str());
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

// Stacks batch-of-one (or batch-of-k) tensors along the leading axis.
template <typename Scalar>
Tensor<Scalar> stack(std::span<const Tensor<Scalar>* const> parts) {
  if (parts.empty()) throw InvalidArgument("stack of zero tensors");
  Shape s = parts.front()->shape();
  std::size_t total = 0;
  for (const auto* p : parts) {
    Shape q = p->shape();
    q.dims[0] = s.dims[0];
    if (!(q == s)) throw InvalidArgument("stack shape mismatch: " + s.str() + " vs " + p->shape().str());
    total += p->shape().n();
  }
  s.dims[0] = total;
  std::vector<Scalar> data;
  data.reserve(s.size());
  for (const auto* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  return Tensor<Scalar>(s, std::move(data));
}

}  // namespace sasp
