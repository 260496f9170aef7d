#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace mgc::checkpoint {

using Matrix = Eigen::MatrixXd;

// Container layout (all integers little-endian):
//   bytes 0..7   magic "MGCCKPT1"
//   bytes 8..15  uint64 length of the JSON index
//   JSON index   {"format_version":1, "meta":{...},
//                 "tensors":[{"name","dtype","rows","cols",
//                             "byte_offset","byte_len"}, ...]}
//   blob         tensor payloads, row-major, offsets relative to blob start
// dtype is "f64" (default on write) or "f32".

void save(const std::string& path,
          const std::vector<std::pair<std::string, const Matrix*>>& tensors,
          const nlohmann::json& meta, const std::string& dtype = "f64");

struct Loaded {
  nlohmann::json meta;
  std::map<std::string, Matrix> tensors;
};

Loaded load(const std::string& path);

}  // namespace mgc::checkpoint
