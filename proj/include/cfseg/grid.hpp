#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfseg/errors.hpp"

namespace cfseg {

// Dense row-major H x W array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {
    if (height < 0 || width < 0) throw ArgumentError("grid dimensions must be nonnegative");
  }
  Grid(int height, int width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
      throw ArgumentError("grid data size does not match " + std::to_string(height) + "x" +
                          std::to_string(width));
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int y, int x) { return data_[index(y, x)]; }
  const T& operator()(int y, int x) const { return data_[index(y, x)]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

// Intensities in [0, 1].
using Image = Grid<float>;

// Label image: 0 = background, 1 = right lung, 2 = left lung.
using Mask = Grid<std::uint8_t>;

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kRightLung = 1;
inline constexpr std::uint8_t kLeftLung = 2;

inline void validate_mask(const Mask& mask) {
  for (auto v : mask.values())
    if (v > kLeftLung) throw ValidationError("mask label out of range: " + std::to_string(v));
}

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ArgumentError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) +
                        "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                        "x" + std::to_string(b.width()));
}

}  // namespace cfseg
