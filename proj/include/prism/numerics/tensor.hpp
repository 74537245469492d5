#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prism/errors.hpp"

namespace prism::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Storage starts on a 64-byte boundary. Vectorized kernels peel to the first aligned
/// element, so a fixed base alignment keeps their summation order, and results, run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Dense row-major array. Value count always equals the product of the shape.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    cache_extent();
  }

  Tensor(Shape shape, const std::vector<Real>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (data_.size() != shape_size(shape_)) {
      throw ConfigError("tensor of shape " + shape_string(shape_) + " given " +
                        std::to_string(data_.size()) + " values");
    }
    cache_extent();
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor vector(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 helpers; rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const Real& at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ConfigError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    out.cache_extent();
    return out;
  }

  template <class Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void cache_extent() noexcept {
    rows_ = rank() >= 2 ? shape_[0] : 1;
    cols_ = rank() >= 2 ? (shape_[0] == 0 ? 0 : size() / shape_[0]) : (rank() == 1 ? shape_[0] : 1);
  }

  Shape shape_;
  std::vector<Real, AlignedAllocator<Real>> data_;
  std::size_t rows_ = 1;
  std::size_t cols_ = 1;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace prism::num
