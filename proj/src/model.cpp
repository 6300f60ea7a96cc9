#include "partmem/model.hpp"

#include <cmath>
#include <random>
#include <string>

namespace partmem {

PartModel::PartModel(const ModelDims& dims, std::uint64_t seed)
    : dims_(dims), backbone_(dims, seed) {
  const std::size_t c = dims.channels;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto affine = [&](const std::string& prefix) {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(c)));
    ParamTensor w;
    w.name = prefix + ".w";
    w.shape = {c, c};
    w.values.resize(c * c);
    for (double& v : w.values) v = dist(rng);
    // Identity bump keeps the untrained head near a pass-through.
    for (std::size_t i = 0; i < c; ++i) w.values[i * c + i] += 1.0;
    heads_.push_back(std::move(w));
    ParamTensor b;
    b.name = prefix + ".b";
    b.shape = {c};
    b.values.assign(c, 0.0);
    heads_.push_back(std::move(b));
  };
  affine("head.h");
  affine("head.v");
}

PartModel::Bound PartModel::bind(ad::Tape& tape, bool requires_grad) const {
  Bound b;
  b.backbone = backbone_.bind(tape, requires_grad);
  b.head_h_w = tape.leaf(heads_[0].shape, heads_[0].values, requires_grad);
  b.head_h_b = tape.leaf(heads_[1].shape, heads_[1].values, requires_grad);
  b.head_v_w = tape.leaf(heads_[2].shape, heads_[2].values, requires_grad);
  b.head_v_b = tape.leaf(heads_[3].shape, heads_[3].values, requires_grad);
  return b;
}

PartFeatureSet PartModel::forward_parts(ad::Tape& tape, const Bound& bound,
                                        const ad::Shape& payload_shape,
                                        const std::vector<double>& payload) const {
  ad::Var map = extract(tape, backbone_, bound.backbone, payload_shape, payload);
  std::vector<ad::Var> h_horiz = pool_parts(partition(map, dims_.p1));
  std::vector<ad::Var> h_vert;
  if (dims_.p2 > 0)
    h_vert = pool_parts(partition(spatial_transpose(tape, map), dims_.p2));
  return assemble(h_horiz, h_vert, dims_.p1, dims_.p2);
}

std::vector<ad::Var> PartModel::apply_heads(const Bound& bound,
                                            const PartFeatureSet& set) const {
  std::vector<ad::Var> out;
  out.reserve(set.parts.size());
  for (std::size_t p = 0; p < set.parts.size(); ++p) {
    const bool horizontal = set.orientation[p] == Orientation::horizontal;
    const ad::Var& w = horizontal ? bound.head_h_w : bound.head_v_w;
    const ad::Var& b = horizontal ? bound.head_h_b : bound.head_v_b;
    out.push_back(ad::l2_normalize(ad::add(ad::matmul(w, set.parts[p]), b)));
  }
  return out;
}

std::vector<ad::Var> PartModel::forward(ad::Tape& tape, const Bound& bound,
                                        const ad::Shape& payload_shape,
                                        const std::vector<double>& payload) const {
  return apply_heads(bound, forward_parts(tape, bound, payload_shape, payload));
}

std::vector<ParamTensor*> PartModel::all_params() {
  std::vector<ParamTensor*> out;
  for (auto& p : backbone_.params()) out.push_back(&p);
  for (auto& p : heads_) out.push_back(&p);
  return out;
}

std::vector<const ParamTensor*> PartModel::all_params() const {
  std::vector<const ParamTensor*> out;
  for (const auto& p : backbone_.params()) out.push_back(&p);
  for (const auto& p : heads_) out.push_back(&p);
  return out;
}

}  // namespace partmem
