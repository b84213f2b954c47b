#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace storyviz {

using Rgb = std::array<float, 3>;

// Planar (CHW) RGB image with float channels in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {0.f, 0.f, 0.f});

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float& at(int channel, int y, int x) {
    return data_[(static_cast<size_t>(channel) * height_ + y) * width_ + x];
  }
  float at(int channel, int y, int x) const {
    return data_[(static_cast<size_t>(channel) * height_ + y) * width_ + x];
  }

  Rgb pixel(int y, int x) const { return {at(0, y, x), at(1, y, x), at(2, y, x)}; }
  void set_pixel(int y, int x, const Rgb& c);

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  // Quantizes to 8 bits the same way the PNG writer does.
  Image quantized() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// ITU-R BT.601 luma averaged over all pixels.
double mean_luminance(const Image& image);

// 8-bit RGB PNG. Throws IoError naming the path on failure.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

inline std::uint8_t to_byte(float v) {
  const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<std::uint8_t>(c * 255.f + 0.5f);
}

}  // namespace storyviz
