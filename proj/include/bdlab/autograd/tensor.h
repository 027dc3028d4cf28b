#ifndef BDLAB_AUTOGRAD_TENSOR_H_
#define BDLAB_AUTOGRAD_TENSOR_H_

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdlab::ag {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

std::string shape_string(const Shape& s);

// Dense row-major tensor.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw std::invalid_argument("Tensor: value count " +
                                  std::to_string(values_.size()) +
                                  " does not match shape " +
                                  shape_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<T> data() { return values_; }
  std::span<const T> data() const { return values_; }
  T* ptr() { return values_.data(); }
  const T* ptr() const { return values_.data(); }
  std::vector<T>& vector() { return values_; }
  const std::vector<T>& vector() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T item() const {
    if (values_.size() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return values_[0];
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> values_;
};

// Elementwise clamp into [lo, hi]. Throws if lo > hi.
template <typename T>
std::vector<T> clip(std::span<const T> values, T lo, T hi) {
  if (lo > hi) throw std::invalid_argument("clip: lo > hi");
  std::vector<T> out(values.begin(), values.end());
  for (T& v : out) v = v < lo ? lo : (v > hi ? hi : v);
  return out;
}

template <typename T>
void clip_inplace(std::span<T> values, T lo, T hi) {
  if (lo > hi) throw std::invalid_argument("clip: lo > hi");
  for (T& v : values) v = v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace bdlab::ag

#endif  // BDLAB_AUTOGRAD_TENSOR_H_
