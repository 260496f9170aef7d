#include "mgc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mgc::checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'G', 'C', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save(const std::string& path,
          const std::vector<std::pair<std::string, const Matrix*>>& tensors,
          const nlohmann::json& meta, const std::string& dtype) {
  if (dtype != "f64" && dtype != "f32")
    throw std::invalid_argument("checkpoint dtype must be f64 or f32");
  const std::size_t elem = dtype == "f64" ? 8 : 4;

  nlohmann::json index;
  index["format_version"] = 1;
  index["meta"] = meta;
  auto& list = index["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, mat] : tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(mat->size()) * elem;
    list.push_back({{"name", name},
                    {"dtype", dtype},
                    {"rows", mat->rows()},
                    {"cols", mat->cols()},
                    {"byte_offset", offset},
                    {"byte_len", bytes}});
    offset += bytes;
  }
  const std::string header = index.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, mat] : tensors) {
    (void)name;
    for (Eigen::Index i = 0; i < mat->rows(); ++i)
      for (Eigen::Index j = 0; j < mat->cols(); ++j) {
        if (elem == 8) {
          const double v = (*mat)(i, j);
          out.write(reinterpret_cast<const char*>(&v), 8);
        } else {
          const float v = static_cast<float>((*mat)(i, j));
          out.write(reinterpret_cast<const char*>(&v), 4);
        }
      }
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

Loaded load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not an MGC checkpoint");
  const std::uint64_t header_len = read_u64(in);
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len)))
    throw std::runtime_error(path + ": truncated header");
  nlohmann::json index = nlohmann::json::parse(header);
  if (index.at("format_version").get<int>() != 1)
    throw std::runtime_error(path + ": unsupported checkpoint version");

  Loaded loaded;
  loaded.meta = index.value("meta", nlohmann::json::object());
  const std::streampos blob_start = in.tellg();
  for (const auto& entry : index.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    const std::uint64_t offset = entry.at("byte_offset").get<std::uint64_t>();
    if (dtype != "f64" && dtype != "f32")
      throw std::runtime_error(path + ": unknown dtype " + dtype);
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    Matrix mat(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        if (dtype == "f64") {
          double v;
          if (!in.read(reinterpret_cast<char*>(&v), 8))
            throw std::runtime_error(path + ": truncated tensor " + name);
          mat(i, j) = v;
        } else {
          float v;
          if (!in.read(reinterpret_cast<char*>(&v), 4))
            throw std::runtime_error(path + ": truncated tensor " + name);
          mat(i, j) = static_cast<double>(v);
        }
      }
    loaded.tensors.emplace(name, std::move(mat));
  }
  return loaded;
}

}  // namespace mgc::checkpoint
