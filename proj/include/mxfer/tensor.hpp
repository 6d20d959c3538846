#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mxfer {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Shape mismatch between operands; the message names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value escaped an op boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major f64 tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor full(Shape shape, double value);
  static Tensor vector(std::vector<double> data);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  Tensor reshaped(Shape shape) const;
  /// Rows [begin, end) of a rank-2 tensor.
  Tensor rows(std::size_t begin, std::size_t end) const;
  Tensor row(std::size_t r) const { return rows(r, r + 1); }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Gradient-free kernels shared by inference and the tape.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds a length-n bias to every row of an m x n matrix.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);
double sum(const Tensor& a);
double mean(const Tensor& a);
std::vector<std::size_t> argmax_rows(const Tensor& a);

/// Multi-channel 2-D cross-correlation, stride 1, "same" zero padding.
/// x: [N, C, H, W], w: [O, C, k, k] with odd k, bias: [O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Fixed single kernel applied to every channel independently ("same" padding).
/// x: [N, C, H, W], kernel: [k, k] with odd k.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);

}  // namespace kernels

/// Throws NumericError naming `op` if `t` contains NaN or Inf.
void require_finite(const Tensor& t, const char* op);

}  // namespace mxfer
