#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "mgc/image.hpp"
#include "mgc/rng.hpp"

namespace mgc::data {

/// Deterministic index -> image mapping. Sources are read-only after
/// construction and safe to read concurrently.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::size_t size() const = 0;
  virtual Image get(std::size_t index) const = 0;
};

/// Decode an 8-bit binary PPM (P6). Maxval above 255 is rejected.
Image decode_ppm(std::istream& in, const std::string& name = "<stream>");
Image load_ppm(const std::string& path);

/// Encode as P6 with maxval 255 and a canonical header.
void encode_ppm(std::ostream& out, const Image& img);
void save_ppm(const std::string& path, const Image& img);

/// Folder of .ppm files, listed in lexicographic order.
std::unique_ptr<ImageSource> load_folder(const std::string& path);

struct SyntheticParams {
  std::size_t count = 64;
  std::uint64_t seed = 0;
  int side = 256;
};

/// Procedural images: gradient backgrounds with a handful of solid/gradient
/// rectangles and circles, so crops of the same image share recognizable
/// spatial structure.
std::unique_ptr<ImageSource> synthetic(const SyntheticParams& params);

}  // namespace mgc::data
