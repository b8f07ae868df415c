#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace desnow {

using Shape = std::vector<int>;

// 64-byte aligned allocation. Vectorised reductions split their work by the
// address of the first element, so buffers at varying alignment would round
// differently from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Feature maps use NHWC layout, so the
// channel index is the fastest-moving one.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor nhwc(int n, int h, int w, int c, double fill = 0.0) {
    return Tensor({n, h, w, c}, fill);
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-4 NHWC conveniences.
  int n() const { return shape_[0]; }
  int h() const { return shape_[1]; }
  int w() const { return shape_[2]; }
  int c() const { return shape_[3]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const Buffer& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int y, int x, int ch) {
    return data_[offset(n, y, x, ch)];
  }
  double at(int n, int y, int x, int ch) const {
    return data_[offset(n, y, x, ch)];
  }
  std::size_t offset(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + y) * shape_[2] + x) *
               shape_[3] +
           ch;
  }

  void fill(double v);
  Tensor reshaped(Shape shape) const;

  // In-place accumulation; shapes must match.
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  double sum() const;
  double abs_max() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Buffer data_;
};

std::size_t shape_size(const Shape& shape);

// Slices image `index` out of an NHWC batch as a (1, H, W, C) tensor.
Tensor batch_item(const Tensor& batch, int index);
// Stacks equally shaped (1, H, W, C) or (H, W, C) tensors into a batch.
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace desnow
