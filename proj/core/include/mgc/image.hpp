#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace mgc {

/// Dense RGB image, values in [0, 1], row-major HWC layout.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pix;  // height * width * 3

  Image() = default;
  Image(int h, int w) : height(h), width(w), pix(static_cast<std::size_t>(h) * w * 3, 0.0) {}

  double& at(int y, int x, int c) {
    return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

}  // namespace mgc
