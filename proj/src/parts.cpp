#include "partmem/parts.hpp"

#include <stdexcept>
#include <string>

namespace partmem {

std::vector<StripeRange> stripe_ranges(std::size_t extent, std::size_t p) {
  if (p < 1) throw std::invalid_argument("partition: p must be at least 1");
  if (p > extent)
    throw std::invalid_argument("partition: p = " + std::to_string(p) +
                                " exceeds extent " + std::to_string(extent));
  const std::size_t base = extent / p;
  std::vector<StripeRange> ranges(p);
  for (std::size_t i = 0; i < p; ++i) {
    ranges[i].begin = i * base;
    ranges[i].end = (i + 1 == p) ? extent : (i + 1) * base;
  }
  return ranges;
}

std::vector<ad::Var> partition(const ad::Var& map3, std::size_t p) {
  if (map3.rank() != 3)
    throw std::invalid_argument("partition: expected rank 3 map, got " +
                                ad::shape_str(map3.shape()));
  const auto ranges = stripe_ranges(map3.shape()[0], p);
  std::vector<ad::Var> stripes;
  stripes.reserve(p);
  for (const auto& r : ranges) stripes.push_back(ad::slice(map3, 0, r.begin, r.end));
  return stripes;
}

std::vector<ad::Var> pool_parts(std::span<const ad::Var> stripes) {
  if (stripes.empty()) throw std::invalid_argument("pool_parts: no stripes");
  std::vector<ad::Var> pooled;
  pooled.reserve(stripes.size());
  for (const ad::Var& s : stripes)
    pooled.push_back(ad::mean_over_region(s, {0, 1}));
  return pooled;
}

PartFeatureSet assemble(std::span<const ad::Var> h_horizontal,
                        std::span<const ad::Var> h_vertical, std::size_t p1,
                        std::size_t p2) {
  if (h_horizontal.size() != p1)
    throw std::invalid_argument("assemble: expected " + std::to_string(p1) +
                                " horizontal parts, got " +
                                std::to_string(h_horizontal.size()));
  if (h_vertical.size() != p2)
    throw std::invalid_argument("assemble: expected " + std::to_string(p2) +
                                " vertical parts, got " +
                                std::to_string(h_vertical.size()));
  PartFeatureSet set;
  set.p1 = p1;
  set.p2 = p2;
  set.parts.reserve(p1 + p2);
  for (const ad::Var& h : h_horizontal) {
    set.parts.push_back(ad::l2_normalize(h));
    set.orientation.push_back(Orientation::horizontal);
  }
  for (const ad::Var& h : h_vertical) {
    set.parts.push_back(ad::l2_normalize(h));
    set.orientation.push_back(Orientation::vertical);
  }
  return set;
}

}  // namespace partmem
