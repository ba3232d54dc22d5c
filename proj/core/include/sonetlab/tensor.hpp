#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sonetlab {

// Dense row-major array of 64-bit floats with shape metadata. Tensors are
// plain values: copy freely, never alias. Everything in this project (vectors,
// matrices, images, conv kernels) is one of these.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor of(std::initializer_list<double> values);  // 1-D
  static Tensor matrix(int rows, int cols, std::initializer_list<double> values);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor zeros_like(const Tensor& t);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool defined() const { return !shape_.empty() || !data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return {data_.data(), data_.size()}; }
  std::span<const double> span() const { return {data_.data(), data_.size()}; }

  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

  // Scalar extraction; the tensor must hold exactly one element.
  double item() const;

  // Same buffer under a new shape (sizes must agree).
  Tensor reshaped(std::vector<int> shape) const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor axpy(double a, const Tensor& x, const Tensor& y);  // a*x + y

// acc += g, allocating acc (zeros) on first use.
void accumulate(Tensor& acc, const Tensor& g);

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double max_abs(const Tensor& a);
double sum(const Tensor& a);
double mean(const Tensor& a);
bool all_finite(const Tensor& a);

}  // namespace sonetlab
