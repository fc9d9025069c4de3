#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace scenegen {

#ifdef SCENEGEN_USE_DOUBLE
using real = double;
#else
using real = float;
#endif

// NCHW shape. Vectors are stored as (n, c, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense owning float (or double) tensor in NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(int n, int c, int h = 1, int w = 1, real fill = real(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::span<real> span() { return data_; }
  std::span<const real> span() const { return data_; }
  std::vector<real>& vec() { return data_; }
  const std::vector<real>& vec() const { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }
  real& at(int n, int c, int y, int x) {
    return data_[index(n, c, y, x)];
  }
  real at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  // Pointer to sample `i` (c*h*w contiguous values).
  real* sample(int i) { return data_.data() + i * shape_.sample(); }
  const real* sample(int i) const { return data_.data() + i * shape_.sample(); }

  void fill(real v);
  void zero() { fill(real(0)); }
  // Keeps the data, changes the logical shape. Element count must match.
  Tensor reshaped(Shape shape) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(real s);

  bool all_finite() const;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  Shape shape_{};
  std::vector<real> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, real s);

// Concatenate along channels; splits the gradient back with `split_channels`.
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels);

// Stack single-sample tensors (n == 1) along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);
Tensor slice_batch(const Tensor& t, int begin, int count);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace scenegen
