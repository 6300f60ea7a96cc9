#pragma once

#include <cstdint>
#include <vector>

#include "partmem/feature_extractor.hpp"
#include "partmem/parts.hpp"
#include "partmem/tensor.hpp"

namespace partmem {

// Feature source + partitioning + per-branch affine heads. The head maps a
// pooled part vector through a C -> C affine shared across the parts of its
// branch, then re-normalizes; these are the features scored against the
// memory and used as retrieval descriptors.
class PartModel {
 public:
  PartModel() = default;
  PartModel(const ModelDims& dims, std::uint64_t seed);

  struct Bound {
    ToyBackbone::Bound backbone;
    ad::Var head_h_w, head_h_b;
    ad::Var head_v_w, head_v_b;
  };

  Bound bind(ad::Tape& tape, bool requires_grad) const;

  // One sample's payload -> ordered head features (p1 horizontal then p2
  // vertical, each [C], unit norm).
  std::vector<ad::Var> forward(ad::Tape& tape, const Bound& bound,
                               const ad::Shape& payload_shape,
                               const std::vector<double>& payload) const;

  // Pooled parts before the head, for runs that store h in the bank.
  PartFeatureSet forward_parts(ad::Tape& tape, const Bound& bound,
                               const ad::Shape& payload_shape,
                               const std::vector<double>& payload) const;

  std::vector<ad::Var> apply_heads(const Bound& bound, const PartFeatureSet& set) const;

  const ModelDims& dims() const { return dims_; }
  ToyBackbone& backbone() { return backbone_; }
  const ToyBackbone& backbone() const { return backbone_; }

  // Backbone params followed by the head params; order is the checkpoint and
  // optimizer-state order.
  std::vector<ParamTensor*> all_params();
  std::vector<const ParamTensor*> all_params() const;

  std::vector<ParamTensor>& head_params() { return heads_; }
  const std::vector<ParamTensor>& head_params() const { return heads_; }

 private:
  ModelDims dims_;
  ToyBackbone backbone_;
  std::vector<ParamTensor> heads_;  // head.h.w, head.h.b, head.v.w, head.v.b
};

}  // namespace partmem
