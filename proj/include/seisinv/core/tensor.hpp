#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seisinv/core/error.hpp"

namespace seisinv {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorized kernels choose their peeling by address, so a
/// fixed base alignment keeps floating-point results independent of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape dims, T fill = T{}) : dims_(std::move(dims)), data_(shape_size(dims_), fill) {}
  Tensor(Shape dims, Buffer<T> data) : dims_(std::move(dims)), data_(std::move(data)) { check_size(); }
  Tensor(Shape dims, const std::vector<T>& data) : dims_(std::move(dims)), data_(data.begin(), data.end()) {
    check_size();
  }

  const Shape& dims() const { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <class... I>
  T& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <class... I>
  const T& operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  /// Same elements viewed with a different shape of equal size.
  Tensor reshaped(Shape dims) const {
    if (shape_size(dims) != size())
      throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
    return Tensor(std::move(dims), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Buffer<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.dims_ == b.dims_ && a.data_ == b.data_; }

 private:
  void check_size() const {
    if (data_.size() != shape_size(dims_))
      throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(dims_));
  }

  template <class... I>
  std::size_t offset(I... idx) const {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizeof...(I); ++k) off = off * dims_[k] + ids[k];
    return off;
  }

  Shape dims_;
  Buffer<T> data_;
};

}  // namespace seisinv
