#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace arvit {

// All network math runs in double. Finite-difference gradient checks need
// the widest precision and the desk-scale models are small enough that the
// narrower float path is not worth a second code path.
using Real = double;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major N-d array. The shape is fixed at construction; reshaping
// produces a new tensor sharing no storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor full(Shape shape, Real v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(Real v) { return Tensor(Shape{1}, v); }
  static Tensor from(Shape shape, std::initializer_list<Real> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const Real> data() const { return data_; }
  std::span<Real> data() { return data_; }
  const std::vector<Real>& vec() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& at(std::initializer_list<std::size_t> index);
  Real at(std::initializer_list<std::size_t> index) const;

  // Single element of a one-element tensor.
  Real item() const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<Real> data_;
};

// Throws NumericError naming `op` if `t` holds NaN or Inf.
void check_finite(const Tensor& t, std::string_view op);

// Bitwise equality of shape and contents.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace arvit
