#include "mgc/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace mgc::data {

namespace {

// Skips whitespace and '#' comments between PPM header tokens.
int next_header_int(std::istream& in, const std::string& name) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw std::runtime_error(name + ": malformed PPM header");
  long value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    if (value > 1 << 30) throw std::runtime_error(name + ": PPM header value out of range");
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(value);
}

}  // namespace

Image decode_ppm(std::istream& in, const std::string& name) {
  char magic[2];
  if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '6')
    throw std::runtime_error(name + ": not a P6 PPM file");
  const int width = next_header_int(in, name);
  const int height = next_header_int(in, name);
  const int maxval = next_header_int(in, name);
  if (width <= 0 || height <= 0) throw std::runtime_error(name + ": invalid PPM dimensions");
  if (maxval > 255)
    throw std::runtime_error(name + ": unsupported PPM maxval " + std::to_string(maxval) +
                             " (only 8-bit samples supported)");
  if (maxval <= 0) throw std::runtime_error(name + ": invalid PPM maxval");
  const int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) throw std::runtime_error(name + ": malformed PPM header");

  const std::size_t payload = static_cast<std::size_t>(width) * height * 3;
  std::vector<unsigned char> bytes(payload);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(payload)))
    throw std::runtime_error(name + ": truncated PPM payload");

  Image img(height, width);
  for (std::size_t i = 0; i < payload; ++i)
    img.pix[i] = static_cast<double>(bytes[i]) / maxval;
  return img;
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  return decode_ppm(in, path);
}

void encode_ppm(std::ostream& out, const Image& img) {
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(img.pix.size());
  for (double v : img.pix)
    bytes.push_back(static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void save_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  encode_ppm(out, img);
}

namespace {

class FolderSource final : public ImageSource {
 public:
  explicit FolderSource(std::vector<std::string> files) : files_(std::move(files)) {}
  std::size_t size() const override { return files_.size(); }
  Image get(std::size_t index) const override {
    if (index >= files_.size()) throw std::out_of_range("image index out of range");
    return load_ppm(files_[index]);
  }

 private:
  std::vector<std::string> files_;
};

class SyntheticSource final : public ImageSource {
 public:
  explicit SyntheticSource(const SyntheticParams& params) : params_(params) {
    if (params.count == 0) throw std::invalid_argument("synthetic count must be > 0");
  }
  std::size_t size() const override { return params_.count; }
  Image get(std::size_t index) const override;

 private:
  SyntheticParams params_;
};

Image SyntheticSource::get(std::size_t index) const {
  if (index >= params_.count) throw std::out_of_range("image index out of range");
  Rng rng = make_rng(params_.seed, rngtag::synthetic, index);
  const int side = params_.side;
  Image img(side, side);

  // Gradient background between two random colors.
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = uniform(rng);
    c1[c] = uniform(rng);
  }
  const double angle = uniform(rng, 0.0, 2.0 * 3.14159265358979323846);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double t = 0.5 + 0.5 * ((x - side / 2.0) * dx + (y - side / 2.0) * dy) / side;
      const double tc = std::clamp(t, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = c0[c] * (1.0 - tc) + c1[c] * tc;
    }

  const int shapes = static_cast<int>(uniform_int(rng, 3, 8));
  for (int n = 0; n < shapes; ++n) {
    const bool circle = uniform(rng) < 0.5;
    const bool grad = uniform(rng) < 0.5;
    double a[3], b[3];
    for (int c = 0; c < 3; ++c) {
      a[c] = uniform(rng);
      b[c] = grad ? uniform(rng) : a[c];
    }
    if (circle) {
      const double cx = uniform(rng, 0.1 * side, 0.9 * side);
      const double cy = uniform(rng, 0.1 * side, 0.9 * side);
      const double r = uniform(rng, 0.05 * side, 0.25 * side);
      const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(side - 1, static_cast<int>(cy + r));
      const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(side - 1, static_cast<int>(cx + r));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 > r * r) continue;
          const double t = std::sqrt(d2) / r;
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = a[c] * (1.0 - t) + b[c] * t;
        }
    } else {
      const double w = uniform(rng, 0.1 * side, 0.5 * side);
      const double h = uniform(rng, 0.1 * side, 0.5 * side);
      const double rx = uniform(rng, 0.0, side - w);
      const double ry = uniform(rng, 0.0, side - h);
      const int y0 = static_cast<int>(ry), y1 = std::min(side - 1, static_cast<int>(ry + h));
      const int x0 = static_cast<int>(rx), x1 = std::min(side - 1, static_cast<int>(rx + w));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double t = w > 0.0 ? (x - x0) / w : 0.0;
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = a[c] * (1.0 - t) + b[c] * t;
        }
    }
  }
  for (double& v : img.pix) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace

std::unique_ptr<ImageSource> load_folder(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw std::runtime_error(path + ": not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".ppm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error(path + ": no images (*.ppm) found");
  return std::make_unique<FolderSource>(std::move(files));
}

std::unique_ptr<ImageSource> synthetic(const SyntheticParams& params) {
  return std::make_unique<SyntheticSource>(params);
}

}  // namespace mgc::data
