#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xsgen/nn.hpp"
#include "xsgen/tensor.hpp"

namespace xsg {

// Compressed binary tensor container: named f64 tensors and u8 arrays,
// zlib-deflated per entry. Used for dataset samples and checkpoints.
struct TensorFile {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::vector<uint8_t>> bytes;
  std::map<std::string, std::string> meta;  // small string fields

  void save(const std::string& path) const;
  static TensorFile load(const std::string& path);
};

// Checkpoint = manifest JSON (convention version, dims, depths) + all
// parameter tensors keyed by module path.
void save_checkpoint(const std::string& path, const std::string& manifest_json,
                     const nn::ParamMap& params);

struct Checkpoint {
  std::string manifest_json;
  std::map<std::string, Tensor> tensors;
};

// Throws IoError on a convention-version mismatch or corrupt file.
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the live parameter map; every parameter must
// be present with a matching shape.
void apply_checkpoint(const Checkpoint& ck, nn::ParamMap& params);

}  // namespace xsg
