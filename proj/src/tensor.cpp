#include "desnow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "desnow/error.hpp"

namespace desnow {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  require(data_.size() == shape_size(shape_),
          "tensor data does not match shape " + shape_string(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == data_.size(),
          "cannot reshape " + shape_string(shape_) + " to " +
              shape_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require(same_shape(other), "shape mismatch in += : " + shape_string(shape_) +
                                 " vs " + shape_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

double Tensor::abs_max() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor batch_item(const Tensor& batch, int index) {
  require(batch.rank() == 4, "batch_item expects an NHWC tensor");
  require(index >= 0 && index < batch.n(), "batch index out of range");
  const std::size_t per = batch.size() / static_cast<std::size_t>(batch.n());
  const auto first = batch.storage().begin() +
                     static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(index));
  return Tensor({1, batch.h(), batch.w(), batch.c()},
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
}

Tensor stack_batch(std::span<const Tensor> items) {
  require(!items.empty(), "cannot stack an empty batch");
  Shape inner = items.front().shape();
  if (inner.size() == 4) {
    require(inner[0] == 1, "stack_batch expects single-image tensors");
    inner.erase(inner.begin());
  }
  require(inner.size() == 3, "stack_batch expects (H, W, C) items");
  std::vector<double> values;
  values.reserve(items.front().size() * items.size());
  for (const Tensor& t : items) {
    require(t.size() == items.front().size(), "stack_batch: mismatched items");
    values.insert(values.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor({static_cast<int>(items.size()), inner[0], inner[1], inner[2]},
                std::move(values));
}

}  // namespace desnow
