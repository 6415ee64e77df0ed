#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace zs6d {

/// Dense row-major 2D buffer. Used for masks, depth maps and coordinate maps.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, const T &fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t size() const noexcept { return data_.size(); }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T &operator()(int x, int y) {
    assert(contains(x, y));
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const T &operator()(int x, int y) const {
    assert(contains(x, y));
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }

  std::vector<T> &data() noexcept { return data_; }
  const std::vector<T> &data() const noexcept { return data_; }

  friend bool operator==(const Image &a, const Image &b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Mask = Image<unsigned char>;

}  // namespace zs6d
