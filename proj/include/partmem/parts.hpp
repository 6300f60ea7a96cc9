#pragma once

#include <span>
#include <vector>

#include "partmem/tensor.hpp"

namespace partmem {

struct StripeRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// p contiguous ranges tiling [0, extent); each floor(extent/p) wide, the last
// absorbs the remainder. Throws std::invalid_argument when p < 1 or p > extent.
std::vector<StripeRange> stripe_ranges(std::size_t extent, std::size_t p);

// Splits a [H,W,C] map into p height stripes.
std::vector<ad::Var> partition(const ad::Var& map3, std::size_t p);

// Spatial mean of each stripe, giving one [C] vector per stripe.
std::vector<ad::Var> pool_parts(std::span<const ad::Var> stripes);

enum class Orientation { horizontal, vertical };

struct PartFeatureSet {
  std::vector<ad::Var> parts;  // p1 horizontal then p2 vertical, each [C], unit norm
  std::vector<Orientation> orientation;
  std::size_t p1 = 0;
  std::size_t p2 = 0;
};

// Concatenates the branch part lists (horizontal first) and L2-normalizes
// each part vector. Counts must match the configured p1/p2.
PartFeatureSet assemble(std::span<const ad::Var> h_horizontal,
                        std::span<const ad::Var> h_vertical, std::size_t p1,
                        std::size_t p2);

}  // namespace partmem
