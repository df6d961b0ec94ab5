#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace flowlite {

using Index = Eigen::Index;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
template <class... Parts>
[[noreturn]] inline void fail(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw std::invalid_argument(os.str());
}
}  // namespace detail

/// Throws std::invalid_argument with the streamed message when `ok` is false.
template <class... Parts>
inline void require(bool ok, const Parts&... parts) {
  if (!ok) detail::fail(parts...);
}

struct Shape4 {
  Index b = 0, c = 0, h = 0, w = 0;

  Index size() const { return b * c * h * w; }
  bool operator==(const Shape4&) const = default;

  friend std::ostream& operator<<(std::ostream& os, const Shape4& s) {
    return os << s.b << "x" << s.c << "x" << s.h << "x" << s.w;
  }
};

/// Dense rank-4 array in batch, channel, row, column order (NCHW), contiguous.
/// Shape is fixed at construction; element data is mutable value storage.
template <typename T>
class Tensor4 {
 public:
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Tensor4() = default;

  Tensor4(Index b, Index c, Index h, Index w) : shape_{b, c, h, w} {
    require(b >= 1 && c >= 1 && h >= 1 && w >= 1,
            "tensor dimensions must all be >= 1, got ", shape_);
    data_ = Storage::Zero(shape_.size());
  }

  explicit Tensor4(const Shape4& s) : Tensor4(s.b, s.c, s.h, s.w) {}

  const Shape4& shape() const { return shape_; }
  Index batch() const { return shape_.b; }
  Index channels() const { return shape_.c; }
  Index height() const { return shape_.h; }
  Index width() const { return shape_.w; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  T operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  T* plane(Index n, Index c) {
    return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w;
  }
  const T* plane(Index n, Index c) const {
    return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w;
  }

  T* row(Index n, Index c, Index y) { return plane(n, c) + y * shape_.w; }
  const T* row(Index n, Index c, Index y) const { return plane(n, c) + y * shape_.w; }

  Eigen::Map<Storage> flat() { return {data_.data(), data_.size()}; }
  Eigen::Map<const Storage> flat() const { return {data_.data(), data_.size()}; }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(shape_.b, shape_.c, shape_.h, shape_.w);
    out.flat() = data_.template cast<U>();
    return out;
  }

  bool same_shape(const Tensor4& other) const { return shape_ == other.shape_; }

 private:
  Shape4 shape_{};
  Storage data_;
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
  return Tensor4<T>(t.shape());
}

template <typename T>
bool bitwise_equal(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!a.same_shape(b)) return false;
  return (a.flat() == b.flat()).all();
}

template <typename T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch ", a.shape(), " vs ", b.shape());
  return (a.flat() - b.flat()).abs().maxCoeff();
}

}  // namespace flowlite
