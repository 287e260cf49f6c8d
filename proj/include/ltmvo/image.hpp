#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltmvo/ad.hpp"

namespace ltmvo::img {

/// Dense image, values in [0,1], channel-major storage (C, H, W) to match
/// the tensor layout used by the networks. Values are clamped on ingestion.
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;  // (C, H, W) row-major

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c) {
    data.assign(static_cast<size_t>(h) * w * c, 0.f);
  }

  float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  void clamp01() {
    for (auto& v : data) v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  }

  /// Mean over channels; returns a single-channel image.
  Image to_gray() const;

  /// Bilinear resize to (h, w).
  Image resized(int h, int w) const;

  template <typename T>
  ad::Var<T> to_var() const {
    std::vector<T> v(data.begin(), data.end());
    return ad::Var<T>::constant({channels, height, width}, std::move(v));
  }
};

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA); alpha is dropped and
/// values are mapped to [0,1] by /255.
Image read_png(const std::string& path);

/// Writes an 8-bit PNG; 1-channel images become grayscale, 3-channel RGB.
void write_png(const std::string& path, const Image& image);

}  // namespace ltmvo::img
