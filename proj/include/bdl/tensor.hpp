#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bdl {

// Error hierarchy shared by every module.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Dims = std::vector<std::size_t>;

inline std::string dims_to_string(const Dims& d) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
  os << ']';
  return os.str();
}

inline std::size_t checked_volume(const Dims& d) {
  if (d.empty()) throw ShapeError("tensor dims must be nonempty");
  std::size_t n = 1;
  for (auto v : d) {
    if (v == 0) throw ShapeError("zero-sized dimension in " + dims_to_string(d));
    n *= v;
  }
  return n;
}

/// Dense row-major n-dimensional array.
///
/// Images use the [C, H, W] layout. The scalar type is a template parameter
/// so the network code can be instantiated in double for gradient checks;
/// everything else works on `Tensor` (float).
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
    data_.assign(checked_volume(dims_), fill);
  }

  BasicTensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (checked_volume(dims_) != data_.size())
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match dims " +
                       dims_to_string(dims_));
  }

  static BasicTensor image(std::size_t c, std::size_t h, std::size_t w, T fill = T(0)) {
    return BasicTensor(Dims{c, h, w}, fill);
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // [C, H, W] accessors.
  std::size_t channels() const { return dim3(0); }
  std::size_t height() const { return dim3(1); }
  std::size_t width() const { return dim3(2); }
  T& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }
  std::span<T> plane(std::size_t c) { return {data_.data() + c * dims_[1] * dims_[2], dims_[1] * dims_[2]}; }
  std::span<const T> plane(std::size_t c) const {
    return {data_.data() + c * dims_[1] * dims_[2], dims_[1] * dims_[2]};
  }

  bool same_shape(const BasicTensor& o) const noexcept { return dims_ == o.dims_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  BasicTensor reshaped(Dims d) const { return BasicTensor(std::move(d), data_); }

  BasicTensor& operator+=(const BasicTensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  BasicTensor& operator-=(const BasicTensor& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  BasicTensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  BasicTensor& operator+=(T s) {
    for (auto& v : data_) v += s;
    return *this;
  }

  /// this += a * x
  BasicTensor& axpy(T a, const BasicTensor& x) {
    require_same(x, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
    return *this;
  }

  friend BasicTensor operator+(BasicTensor a, const BasicTensor& b) { return a += b; }
  friend BasicTensor operator-(BasicTensor a, const BasicTensor& b) { return a -= b; }
  friend BasicTensor operator*(BasicTensor a, T s) { return a *= s; }
  friend BasicTensor operator*(T s, BasicTensor a) { return a *= s; }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  double sum() const {
    double s = 0.0;
    for (auto v : data_) s += static_cast<double>(v);
    return s;
  }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }
  double squared_norm() const {
    double s = 0.0;
    for (auto v : data_) s += static_cast<double>(v) * static_cast<double>(v);
    return s;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void clamp(T lo, T hi) {
    for (auto& v : data_) v = std::clamp(v, lo, hi);
  }

 private:
  std::size_t dim3(std::size_t i) const {
    if (dims_.size() != 3) throw ShapeError("expected [C,H,W] tensor, got " + dims_to_string(dims_));
    return dims_[i];
  }
  void require_same(const BasicTensor& o, const char* op) const {
    if (dims_ != o.dims_)
      throw ShapeError(std::string(op) + ": shape mismatch " + dims_to_string(dims_) + " vs " +
                       dims_to_string(o.dims_));
  }

  Dims dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <class T, class F>
BasicTensor<T> map(const BasicTensor<T>& a, F&& f) {
  BasicTensor<T> out = a;
  for (auto& v : out.values()) v = f(v);
  return out;
}

template <class T>
BasicTensor<T> clamped(BasicTensor<T> a, T lo, T hi) {
  a.clamp(lo, hi);
  return a;
}

/// FNV-1a over the raw float bits; used for trace checksums and config hashes.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  auto p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <class T>
std::uint64_t checksum(const BasicTensor<T>& t) {
  return fnv1a(t.data(), t.size() * sizeof(T));
}

}  // namespace bdl
