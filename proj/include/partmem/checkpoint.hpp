#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partmem/dataset.hpp"
#include "partmem/feature_extractor.hpp"
#include "partmem/memory_bank.hpp"
#include "partmem/model.hpp"

namespace partmem::io {

// Sectioned container reusing the tensor format: magic "PAMC", version u32,
// section count u32, then per section a length-prefixed name, a type byte
// (tensor or raw), and a length-prefixed payload. Tensor payloads embed a
// full feature-file blob; raw payloads carry a string table.
struct Checkpoint {
  std::uint32_t epoch = 0;
  ModelDims dims;
  std::vector<ParamTensor> params;
  std::vector<ParamTensor> velocities;
  std::optional<MemoryBank> bank;
  double bank_delta = 0.5;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model with the checkpoint's dims and parameters, for evaluation.
PartModel build_model(const Checkpoint& ckpt);

}  // namespace partmem::io
