#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "partmem/tensor.hpp"

namespace partmem {

// Model geometry shared by the feature source, the part heads, the memory
// bank and the evaluation harness.
struct ModelDims {
  std::size_t height = 12;
  std::size_t width = 12;
  std::size_t channels = 64;
  std::size_t p1 = 6;  // horizontal parts (stripes of the map)
  std::size_t p2 = 6;  // vertical parts (stripes of the transposed map); 0 disables the branch
  std::size_t input_dim = 256;
  std::size_t patches = 8;
  std::size_t patch_embed = 8;

  std::size_t parts_total() const { return p1 + p2; }
  std::size_t map_size() const { return height * width * channels; }
  std::size_t hidden() const { return patches * patch_embed; }
  void validate() const;
};

// Named parameter tensor living outside any tape; bound as a leaf per step.
struct ParamTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

// Small trainable stack standing in for a CNN backbone: shared per-patch
// linear -> relu -> linear -> relu -> reshape to [H,W,C].
class ToyBackbone {
 public:
  ToyBackbone() = default;
  ToyBackbone(const ModelDims& dims, std::uint64_t seed);

  struct Bound {
    ad::Var w1, b1, w2, b2;
  };

  Bound bind(ad::Tape& tape, bool requires_grad) const;

  // input: rank-1 vector of length input_dim -> [H,W,C] map.
  ad::Var forward(ad::Tape& tape, const Bound& p, const ad::Var& input) const;

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }
  const ModelDims& dims() const { return dims_; }
  std::size_t param_count() const;

 private:
  ModelDims dims_;
  std::vector<ParamTensor> params_;  // w1, b1, w2, b2
};

struct Branches {
  ad::Var horizontal;  // the map itself
  ad::Var vertical;    // spatial transpose: out[w,h,c] = in[h,w,c]
};

// Spatial transpose of a [H,W,C] map, built from slice/concat so gradients
// flow through both branches.
ad::Var spatial_transpose(ad::Tape& tape, const ad::Var& map3);

Branches duplicate_branches(ad::Tape& tape, const ad::Var& map3);

// Wraps a loaded sample payload as the branch input map. Rank-1 payloads go
// through the backbone; rank-3 payloads are used directly as the map.
ad::Var extract(ad::Tape& tape, const ToyBackbone& backbone,
                const ToyBackbone::Bound& bound, const ad::Shape& payload_shape,
                const std::vector<double>& payload);

}  // namespace partmem
