#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace stylemark {

// 8-bit interleaved pixel grid, 1 (gray) or 3 (RGB) channels, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, std::uint8_t fill = 0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<std::uint8_t> data() noexcept { return data_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// PNG I/O. Gray+alpha and RGBA inputs are reduced to gray/RGB, 16-bit to 8-bit.
Image load_png(const std::filesystem::path& path);

// Encoding parameters are fixed so the same image always yields the same bytes.
void save_png(const Image& image, const std::filesystem::path& path);

// Reads the header only.
struct ImageSize {
  int width = 0;
  int height = 0;
};
ImageSize probe_png(const std::filesystem::path& path);

}  // namespace stylemark
