#include "partmem/feature_extractor.hpp"

#include <random>
#include <stdexcept>

#include "partmem/errors.hpp"

namespace partmem {

void ModelDims::validate() const {
  if (height == 0 || width == 0 || channels == 0)
    throw ConfigError("model dims must be positive");
  if (p1 == 0) throw ConfigError("p1 must be at least 1");
  if (p1 > height)
    throw ConfigError("p1 = " + std::to_string(p1) + " exceeds map height " +
                      std::to_string(height));
  if (p2 > width)
    throw ConfigError("p2 = " + std::to_string(p2) + " exceeds map width " +
                      std::to_string(width));
  if (patches == 0 || patch_embed == 0)
    throw ConfigError("backbone patches and patch_embed must be positive");
  if (input_dim % patches != 0)
    throw ConfigError("input_dim " + std::to_string(input_dim) +
                      " not divisible by patches " + std::to_string(patches));
}

ToyBackbone::ToyBackbone(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  dims.validate();
  const std::size_t patch_width = dims.input_dim / dims.patches;
  const std::size_t hidden = dims.hidden();
  const std::size_t out = dims.map_size();

  std::mt19937_64 rng(seed);
  auto init = [&](const std::string& name, ad::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    ParamTensor p;
    p.name = name;
    p.shape = std::move(shape);
    p.values.resize(ad::numel(p.shape));
    for (double& v : p.values) v = dist(rng);
    params_.push_back(std::move(p));
  };
  // He-style scaling keeps activations O(1) through the relu stages.
  init("backbone.w1", {dims.patch_embed, patch_width},
       std::sqrt(2.0 / static_cast<double>(patch_width)));
  init("backbone.b1", {dims.patch_embed}, 0.0);
  init("backbone.w2", {out, hidden}, std::sqrt(2.0 / static_cast<double>(hidden)));
  init("backbone.b2", {out}, 0.0);

  if (param_count() >= 1000000)
    throw ConfigError("toy backbone would have " + std::to_string(param_count()) +
                      " parameters; limit is 10^6");
}

std::size_t ToyBackbone::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

ToyBackbone::Bound ToyBackbone::bind(ad::Tape& tape, bool requires_grad) const {
  Bound b;
  b.w1 = tape.leaf(params_[0].shape, params_[0].values, requires_grad);
  b.b1 = tape.leaf(params_[1].shape, params_[1].values, requires_grad);
  b.w2 = tape.leaf(params_[2].shape, params_[2].values, requires_grad);
  b.b2 = tape.leaf(params_[3].shape, params_[3].values, requires_grad);
  return b;
}

ad::Var ToyBackbone::forward(ad::Tape& tape, const Bound& p, const ad::Var& input) const {
  (void)tape;
  if (input.rank() != 1 || input.shape()[0] != dims_.input_dim)
    throw DataError("backbone input must be a vector of length " +
                    std::to_string(dims_.input_dim) + ", got " +
                    ad::shape_str(input.shape()));
  const std::size_t patch_width = dims_.input_dim / dims_.patches;

  // Shared linear over patches, stacked into the hidden vector.
  std::vector<ad::Var> embedded;
  embedded.reserve(dims_.patches);
  for (std::size_t i = 0; i < dims_.patches; ++i) {
    ad::Var patch = ad::slice(input, 0, i * patch_width, (i + 1) * patch_width);
    embedded.push_back(ad::relu(ad::add(ad::matmul(p.w1, patch), p.b1)));
  }
  ad::Var hidden = ad::concat(embedded, 0);
  ad::Var out = ad::relu(ad::add(ad::matmul(p.w2, hidden), p.b2));
  return out.reshape({dims_.height, dims_.width, dims_.channels});
}

ad::Var spatial_transpose(ad::Tape& tape, const ad::Var& map3) {
  if (map3.rank() != 3)
    throw std::invalid_argument("spatial_transpose: expected rank 3, got " +
                                ad::shape_str(map3.shape()));
  const std::size_t h = map3.shape()[0], w = map3.shape()[1], c = map3.shape()[2];
  // Column w of the input, viewed as [1,H,C], has exactly the row-major
  // layout of row w of the transpose, so stacking the columns along axis 0
  // assembles out[w,h,c] = in[h,w,c].
  std::vector<ad::Var> columns;
  columns.reserve(w);
  for (std::size_t j = 0; j < w; ++j)
    columns.push_back(ad::slice(map3, 1, j, j + 1).reshape({1, h, c}));
  ad::Var stacked = ad::concat(columns, 0);
  (void)tape;
  return stacked.reshape({w, h, c});
}

Branches duplicate_branches(ad::Tape& tape, const ad::Var& map3) {
  Branches b;
  b.horizontal = map3;
  b.vertical = spatial_transpose(tape, map3);
  return b;
}

ad::Var extract(ad::Tape& tape, const ToyBackbone& backbone,
                const ToyBackbone::Bound& bound, const ad::Shape& payload_shape,
                const std::vector<double>& payload) {
  const ModelDims& dims = backbone.dims();
  if (payload_shape.size() == 1) {
    if (payload_shape[0] != dims.input_dim)
      throw DataError("feature vector has dimension " +
                      std::to_string(payload_shape[0]) + ", configured input_dim is " +
                      std::to_string(dims.input_dim));
    ad::Var input = tape.constant(payload_shape, payload);
    return backbone.forward(tape, bound, input);
  }
  if (payload_shape.size() == 3) {
    if (payload_shape[0] != dims.height || payload_shape[1] != dims.width ||
        payload_shape[2] != dims.channels)
      throw DataError("precomputed map has shape " + ad::shape_str(payload_shape) +
                      ", configured map is [" + std::to_string(dims.height) + "," +
                      std::to_string(dims.width) + "," + std::to_string(dims.channels) +
                      "]");
    return tape.constant(payload_shape, payload);
  }
  throw DataError("sample payload must be rank 1 (vector) or rank 3 (map), got " +
                  ad::shape_str(payload_shape));
}

}  // namespace partmem
