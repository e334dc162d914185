#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ctl {

// Dense row-major array of doubles, rank 1..4.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(std::initializer_list<std::size_t> shape) : Tensor(Shape(shape)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Length of the last axis, and number of rows formed by the leading axes.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[offset({i, j})]; }
  double at(std::size_t i, std::size_t j) const { return data_[offset({i, j})]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[offset({i, j, k})]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[offset({i, j, k})]; }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[offset({i, j, k, l})];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[offset({i, j, k, l})];
  }

  // Pointer to the row addressed by the leading indices (all but the last axis).
  double* row(std::size_t r) { return data_.data() + r * cols(); }
  const double* row(std::size_t r) const { return data_.data() + r * cols(); }

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  void set_zero() { fill(0.0); }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);
std::size_t shape_numel(const Tensor::Shape& shape);

// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace ctl
