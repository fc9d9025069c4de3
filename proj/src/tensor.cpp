#include "scenegen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "scenegen/error.hpp"

namespace scenegen {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, real fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("negative tensor dimension " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " +
                         shape.str());
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(real s) {
  for (auto& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](real v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError(std::string(what) + ": shape mismatch " +
                         a.shape().str() + " vs " + b.shape().str());
  }
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out -= b;
  return out;
}

Tensor operator*(const Tensor& a, real s) {
  Tensor out = a;
  out *= s;
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw DimensionError("concat_channels: " + a.shape().str() + " vs " +
                         b.shape().str());
  }
  Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t sa = a.shape().sample(), sb = b.shape().sample();
  for (int i = 0; i < a.n(); ++i) {
    std::memcpy(out.sample(i), a.sample(i), sa * sizeof(real));
    std::memcpy(out.sample(i) + sa, b.sample(i), sb * sizeof(real));
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels) {
  if (first_channels < 0 || first_channels > t.c()) {
    throw DimensionError("split_channels: bad split");
  }
  Tensor a(t.n(), first_channels, t.h(), t.w());
  Tensor b(t.n(), t.c() - first_channels, t.h(), t.w());
  const std::size_t sa = a.shape().sample(), sb = b.shape().sample();
  for (int i = 0; i < t.n(); ++i) {
    std::memcpy(a.sample(i), t.sample(i), sa * sizeof(real));
    std::memcpy(b.sample(i), t.sample(i) + sa, sb * sizeof(real));
  }
  return {std::move(a), std::move(b)};
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) return {};
  Shape s = items.front().shape();
  for (const auto& t : items) {
    if (t.n() != 1 || t.c() != s.c || t.h() != s.h || t.w() != s.w) {
      throw DimensionError("stack_batch: inconsistent item " + t.shape().str());
    }
  }
  Tensor out(static_cast<int>(items.size()), s.c, s.h, s.w);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::memcpy(out.sample(static_cast<int>(i)), items[i].data(),
                s.sample() * sizeof(real));
  }
  return out;
}

Tensor slice_batch(const Tensor& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.n()) {
    throw DimensionError("slice_batch: out of range");
  }
  Tensor out(count, t.c(), t.h(), t.w());
  if (count > 0) {
    std::memcpy(out.data(), t.sample(begin),
                count * t.shape().sample() * sizeof(real));
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

}  // namespace scenegen
