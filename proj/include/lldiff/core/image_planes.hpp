#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lldiff/core/error.hpp"

namespace lldiff {

/// Storage aligned to a full cache line. Vectorised kernels choose their
/// peeling from the pointer alignment, so an unaligned heap block can change
/// the summation order between otherwise identical runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Batch x channels x height x width.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
  }
};

/// Dense NCHW array, the carrier for images, activations and weights alike.
template <class T>
class ImagePlanes {
 public:
  using value_type = T;

  ImagePlanes() = default;
  explicit ImagePlanes(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {
    require(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0, ErrorCode::invalid_argument,
            "negative image dimension " + shape.str());
  }
  ImagePlanes(int n, int c, int h, int w, T fill = T(0)) : ImagePlanes(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.n; }
  int channels() const { return shape_.c; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> plane(int n, int c) { return {data_.data() + index(n, c, 0, 0), shape_.plane_size()}; }
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0), shape_.plane_size()};
  }
  /// All channels of batch item n, contiguous.
  std::span<T> item(int n) {
    return {data_.data() + index(n, 0, 0, 0), shape_.plane_size() * static_cast<std::size_t>(shape_.c)};
  }
  std::span<const T> item(int n) const {
    return {data_.data() + index(n, 0, 0, 0), shape_.plane_size() * static_cast<std::size_t>(shape_.c)};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with equal element count.
  ImagePlanes reshaped(Shape s) const {
    require(s.count() == shape_.count(), ErrorCode::shape_mismatch,
            "reshape " + shape_.str() + " -> " + s.str());
    ImagePlanes out = *this;
    out.shape_ = s;
    return out;
  }

  template <class U>
  ImagePlanes<U> cast() const {
    ImagePlanes<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const ImagePlanes&) const = default;

 private:
  Shape shape_{};
  AlignedVector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  require(a == b, ErrorCode::shape_mismatch, std::string(what) + ": " + a.str() + " vs " + b.str());
}

/// Extract batch items [first, first+count).
template <class T>
ImagePlanes<T> slice_batch(const ImagePlanes<T>& src, int first, int count) {
  require(first >= 0 && count >= 0 && first + count <= src.batch(), ErrorCode::out_of_range,
          "batch slice out of range");
  Shape s = src.shape();
  s.n = count;
  ImagePlanes<T> out(s);
  const std::size_t per = s.plane_size() * static_cast<std::size_t>(s.c);
  std::copy_n(src.data() + per * static_cast<std::size_t>(first), per * static_cast<std::size_t>(count),
              out.data());
  return out;
}

/// Stack single items (n == 1 each, congruent) into one batch.
template <class T>
ImagePlanes<T> stack_batch(std::span<const ImagePlanes<T>> items) {
  require(!items.empty(), ErrorCode::invalid_argument, "stack of zero images");
  Shape s = items.front().shape();
  int total = 0;
  for (const auto& it : items) {
    require(it.channels() == s.c && it.height() == s.h && it.width() == s.w, ErrorCode::shape_mismatch,
            "stack_batch: incongruent items");
    total += it.batch();
  }
  s.n = total;
  ImagePlanes<T> out(s);
  T* dst = out.data();
  for (const auto& it : items) dst = std::copy(it.data(), it.data() + it.size(), dst);
  return out;
}

/// Concatenate along channels; all inputs share n, h, w.
template <class T>
ImagePlanes<T> concat_channels(std::span<const ImagePlanes<T>* const> parts) {
  require(!parts.empty(), ErrorCode::invalid_argument, "concat of zero tensors");
  Shape s = parts.front()->shape();
  s.c = 0;
  for (const auto* p : parts) {
    require(p->batch() == s.n && p->height() == s.h && p->width() == s.w, ErrorCode::shape_mismatch,
            "concat_channels: " + p->shape().str() + " incongruent with " + parts.front()->shape().str());
    s.c += p->channels();
  }
  ImagePlanes<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    T* dst = out.item(n).data();
    for (const auto* p : parts) {
      auto src = p->item(n);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

}  // namespace lldiff
