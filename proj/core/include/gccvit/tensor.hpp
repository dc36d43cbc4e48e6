#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gccvit {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array. Plain value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value) { return Tensor({1}, {value}); }
  static Tensor vector(std::vector<float> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 2-D element access; rank must be 2.
  float& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  float at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  /// Same data viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  /// True when no element is NaN or infinite.
  bool all_finite() const;
  /// Throws NumericError naming `what` if any element is non-finite.
  void check_finite(const std::string& what) const;

  float max_abs() const;
  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Value kernels. The differentiable counterparts in autodiff.hpp are built on these.

/// c = a·b for a: m×k, b: k×n.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Numerically stable softmax along `axis` (negative axes count from the back).
Tensor softmax(const Tensor& x, int axis = -1);
/// Exact-erf GELU: x·Φ(x).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
/// Normalizes each last-axis slice with population variance, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

float gelu_scalar(float x);
float gelu_derivative(float x);

}  // namespace gccvit
