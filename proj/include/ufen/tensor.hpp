#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "ufen/core.hpp"

namespace ufen {

// Dense row-major tensor of rank 1..4.
template <class T>
class BasicTensor {
 public:
  static constexpr std::size_t kMaxRank = 4;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<std::size_t> dims, T fill = T{}) : dims_(std::move(dims)) {
    check_rank();
    data_.assign(element_count(dims_), fill);
  }

  BasicTensor(std::vector<std::size_t> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_rank();
    require(data_.size() == element_count(dims_), ErrorKind::Data, "tensor payload does not match its dimensions");
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <class... I>
  T& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <class... I>
  const T& operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  template <class... I>
  std::size_t offset(I... idx) const {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizeof...(I); ++k) off = off * dims_[k] + ids[k];
    return off;
  }

  // Contiguous innermost slice at the given leading indices.
  template <class... I>
  std::span<T> row(I... idx) {
    const std::size_t n = inner_extent(sizeof...(I));
    return std::span<T>(data_).subspan(offset(idx...) * n, n);
  }
  template <class... I>
  std::span<const T> row(I... idx) const {
    const std::size_t n = inner_extent(sizeof...(I));
    return std::span<const T>(data_).subspan(offset(idx...) * n, n);
  }

  bool same_shape(const BasicTensor& other) const { return dims_ == other.dims_; }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  std::string shape_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    return os.str();
  }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  void check_rank() const {
    require(!dims_.empty() && dims_.size() <= kMaxRank, ErrorKind::Data, "tensor rank must be between 1 and 4");
  }
  std::size_t inner_extent(std::size_t leading) const {
    std::size_t n = 1;
    for (std::size_t k = leading; k < dims_.size(); ++k) n *= dims_[k];
    return n;
  }

  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ufen
