#include "a2snas/tensor.hpp"

#include <sstream>

namespace a2snas {

Shape::Shape(std::initializer_list<std::int64_t> dims) : Shape(std::span<const std::int64_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::int64_t> dims) {
  if (dims.size() > static_cast<std::size_t>(kMaxRank)) {
    throw ShapeError("rank " + std::to_string(dims.size()) + " exceeds the supported maximum of 5");
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] <= 0) throw ShapeError("tensor extents must be positive, axis " + std::to_string(i) + " is " +
                                       std::to_string(dims[i]));
    dims_[i] = dims[i];
  }
  rank_ = static_cast<int>(dims.size());
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<std::size_t>(i)];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < rank_; ++i) {
    if (i) os << ',';
    os << dims_[static_cast<std::size_t>(i)];
  }
  os << ')';
  return os.str();
}

}  // namespace a2snas
