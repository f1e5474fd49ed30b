#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scmse {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

/// Dense row-major n-d array over a scalar type. Rank is small (<= 4 in
/// practice); storage is contiguous so Eigen::Map views cover the math.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != numel_of(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  Index dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  Index numel() const { return static_cast<Index>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](Index i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<size_t>(i)]; }

  T& at(Index i, Index j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at(Index i, Index j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  T& at(Index i, Index j, Index k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(Index i, Index j, Index k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& at(Index i, Index j, Index k, Index l) {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(Index i, Index j, Index k, Index l) const {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ArrayX = Eigen::Array<T, Eigen::Dynamic, 1>;

  /// Rank-2 matrix view.
  Eigen::Map<MatrixRM> mat() {
    require_rank(2);
    return Eigen::Map<MatrixRM>(data(), shape_[0], shape_[1]);
  }
  Eigen::Map<const MatrixRM> mat() const {
    require_rank(2);
    return Eigen::Map<const MatrixRM>(data(), shape_[0], shape_[1]);
  }

  /// View of any tensor as a (rows x cols) matrix; rows*cols must equal numel.
  Eigen::Map<MatrixRM> as_mat(Index rows, Index cols) {
    if (rows * cols != numel())
      throw std::invalid_argument("Tensor::as_mat: size mismatch for " + shape_str(shape_));
    return Eigen::Map<MatrixRM>(data(), rows, cols);
  }
  Eigen::Map<const MatrixRM> as_mat(Index rows, Index cols) const {
    if (rows * cols != numel())
      throw std::invalid_argument("Tensor::as_mat: size mismatch for " + shape_str(shape_));
    return Eigen::Map<const MatrixRM>(data(), rows, cols);
  }

  /// Flat elementwise view.
  Eigen::Map<ArrayX> arr() { return Eigen::Map<ArrayX>(data(), numel()); }
  Eigen::Map<const ArrayX> arr() const { return Eigen::Map<const ArrayX>(data(), numel()); }

  Tensor reshaped(Shape shape) const {
    if (numel_of(shape) != numel())
      throw std::invalid_argument("Tensor::reshaped: numel mismatch " + shape_str(shape_) +
                                  " -> " + shape_str(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (Index i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T(0)); }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  void require_rank(int r) const {
    if (rank() != r)
      throw std::invalid_argument("Tensor: expected rank " + std::to_string(r) + ", have " +
                                  shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace scmse
