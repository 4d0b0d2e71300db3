#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "a2snas/error.hpp"

namespace a2snas {

/// Extents of a tensor of rank 0..5. Rank 0 is a scalar with one element.
class Shape {
 public:
  static constexpr int kMaxRank = 5;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims);
  explicit Shape(std::span<const std::int64_t> dims);

  int rank() const { return rank_; }
  std::int64_t operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const;
  std::span<const std::int64_t> dims() const { return {dims_.data(), static_cast<std::size_t>(rank_)}; }
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && a.dims_ == b.dims_;
  }

 private:
  std::array<std::int64_t, kMaxRank> dims_{};
  int rank_ = 0;
};

/// Spatial triple (depth, height, width).
struct Dhw {
  std::int64_t d = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;
  friend bool operator==(const Dhw&, const Dhw&) = default;
};

/// Dense row-major tensor value. Storage is shared and copy-on-write, so
/// copies are cheap and a tensor saved on a tape never changes underneath it.
/// `node` is the handle of this value on the active tape, or -1.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape)
      : shape_(shape), data_(std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape.numel()), T(0))) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(shape) {
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
      throw ShapeError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                       " values, got " + std::to_string(values.size()));
    }
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, T value) {
    return Tensor(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), value));
  }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }
  std::int64_t dim(int axis) const { return shape_[axis]; }

  std::span<const T> values() const { return *data_; }
  const T* data() const { return data_->data(); }
  T operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  T item() const { return (*data_)[0]; }

  /// Writable storage; detaches from other holders first.
  std::vector<T>& mutable_values() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    return *data_;
  }

  int node() const { return node_; }
  Tensor with_node(int node) const {
    Tensor t = *this;
    t.node_ = node;
    return t;
  }
  /// Same values, detached from any tape.
  Tensor detached() const { return with_node(-1); }

  Dhw dhw() const { return {shape_[2], shape_[3], shape_[4]}; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  int node_ = -1;
};

/// Element-wise conversion between precisions (drops tape membership).
template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.values().begin(), t.values().end());
  return Tensor<To>(t.shape(), std::move(out));
}

/// Index helper for rank-5 (N, C, D, H, W) tensors.
inline std::int64_t offset5(const Shape& s, std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h,
                            std::int64_t w) {
  return (((n * s[1] + c) * s[2] + d) * s[3] + h) * s[4] + w;
}

}  // namespace a2snas
