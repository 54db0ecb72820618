#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lmnet {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (batch, channel, height, width) extents of a dense row-major tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense 4-D array in (n, c, h, w) row-major order. The shape is fixed at
/// construction; element values may be written through data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }

  T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) { return data_[index(b, ch, y, x)]; }
  const T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[index(b, ch, y, x)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* plane(std::size_t b, std::size_t ch) { return data_.data() + (b * shape_.c + ch) * shape_.plane(); }
  const T* plane(std::size_t b, std::size_t ch) const {
    return data_.data() + (b * shape_.c + ch) * shape_.plane();
  }

  /// New descriptor over the same elements; the element count must agree.
  Tensor reshaped(Shape shape) const {
    if (shape.size() != shape_.size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Copies samples [begin, begin + count) along the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.n()) {
    throw ShapeError("batch slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") exceeds batch of " + std::to_string(t.n()));
  }
  const std::size_t stride = t.c() * t.h() * t.w();
  auto first = t.data().begin() + static_cast<std::ptrdiff_t>(begin * stride);
  return Tensor<T>({count, t.c(), t.h(), t.w()},
                   std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count * stride)));
}

/// Stacks single-sample tensors of identical (c, h, w) along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>* const> samples) {
  if (samples.empty()) {
    throw ShapeError("cannot stack an empty sample list");
  }
  const Shape first = samples.front()->shape();
  std::vector<T> data;
  data.reserve(first.size() * samples.size());
  std::size_t total = 0;
  for (const Tensor<T>* s : samples) {
    const Shape& sh = s->shape();
    if (sh.c != first.c || sh.h != first.h || sh.w != first.w) {
      throw ShapeError("cannot stack " + sh.str() + " with " + first.str());
    }
    data.insert(data.end(), s->data().begin(), s->data().end());
    total += sh.n;
  }
  return Tensor<T>({total, first.c, first.h, first.w}, std::move(data));
}

}  // namespace lmnet
