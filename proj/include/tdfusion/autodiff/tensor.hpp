#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tdfusion {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace autodiff {

class Tape;

using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

/// Immutable dense array of doubles, optionally attached to a tape node.
///
/// Copies share storage. A tensor that is not on a tape is a constant for
/// differentiation purposes.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
    if (values.size() != tdfusion::numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape_));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NonFiniteError("non-finite value in tensor data");
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
  }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = tdfusion::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }

  std::span<const double> data() const {
    return data_ ? std::span<const double>(*data_) : std::span<const double>();
  }
  const std::vector<double>& values() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape_));
    return (*data_)[0];
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  /// Same values, cut from the tape.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = kNoNode;
    return t;
  }

  /// True when both tensors share shape and every value has the same bit pattern.
  bool bitwise_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    if (data_ == other.data_) return true;
    const auto a = data();
    const auto b = other.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    }
    return true;
  }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

}  // namespace autodiff
}  // namespace tdfusion
