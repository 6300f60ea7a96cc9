#include "partmem/memory_bank.hpp"

#include <cmath>
#include <stdexcept>

#include "partmem/errors.hpp"
#include "partmem/tensor.hpp"

namespace partmem {

std::optional<std::size_t> ClassCenters::index_of(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const double> ClassCenters::center(std::size_t identity_index,
                                             std::size_t part) const {
  return {centers.data() + (identity_index * parts + part) * channels, channels};
}

MemoryBank::MemoryBank(std::vector<std::string> identities, std::size_t parts,
                       std::size_t channels, bool normalize_slots)
    : identities_(std::move(identities)),
      parts_(parts),
      channels_(channels),
      normalize_(normalize_slots) {
  if (identities_.empty()) throw DataError("memory bank needs at least one image");
  if (parts_ == 0 || channels_ == 0)
    throw DataError("memory bank part/channel dimensions must be positive");
  slots_.assign(identities_.size() * parts_ * channels_, 0.0);
  initialized_.assign(identities_.size() * parts_, 0);
}

MemoryBank init_bank(std::span<const std::string> train_identities, std::size_t parts,
                     std::size_t channels, bool normalize_slots) {
  if (train_identities.empty()) throw DataError("empty manifest: no training images");
  return MemoryBank(std::vector<std::string>(train_identities.begin(),
                                             train_identities.end()),
                    parts, channels, normalize_slots);
}

void MemoryBank::update(std::size_t image_index, std::size_t part_index,
                        std::span<const double> h, double delta) {
  if (image_index >= identities_.size())
    throw std::out_of_range("memory update: image index " + std::to_string(image_index) +
                            " out of range (M = " + std::to_string(identities_.size()) +
                            ")");
  if (part_index >= parts_)
    throw std::out_of_range("memory update: part index " + std::to_string(part_index) +
                            " out of range (b = " + std::to_string(parts_) + ")");
  if (h.size() != channels_)
    throw std::invalid_argument("memory update: feature has dimension " +
                                std::to_string(h.size()) + ", slot has " +
                                std::to_string(channels_));
  if (delta < 0.0 || delta > 1.0)
    throw std::invalid_argument("memory update: delta must be in [0,1], got " +
                                std::to_string(delta));
  for (double v : h)
    if (!std::isfinite(v))
      throw NumericError("memory update: non-finite feature value");

  double* slot = slots_.data() + offset(image_index, part_index);
  char& flag = initialized_[image_index * parts_ + part_index];
  if (!flag) {
    for (std::size_t c = 0; c < channels_; ++c) slot[c] = h[c];
    flag = 1;
  } else {
    for (std::size_t c = 0; c < channels_; ++c)
      slot[c] = delta * slot[c] + (1.0 - delta) * h[c];
  }
  if (normalize_) {
    double sq = 0.0;
    for (std::size_t c = 0; c < channels_; ++c) sq += slot[c] * slot[c];
    const double norm = std::sqrt(sq);
    if (norm < ad::kNormalizeGuard) {
      for (std::size_t c = 0; c < channels_; ++c) slot[c] = 0.0;
    } else {
      for (std::size_t c = 0; c < channels_; ++c) slot[c] /= norm;
    }
  }
  ++update_count_;
}

ClassCenters MemoryBank::class_centers() const {
  ClassCenters out;
  out.parts = parts_;
  out.channels = channels_;
  std::vector<std::vector<std::size_t>> part_counts;  // per identity, per part
  for (std::size_t i = 0; i < identities_.size(); ++i) {
    bool any = false;
    for (std::size_t p = 0; p < parts_; ++p)
      any = any || initialized_[i * parts_ + p];
    if (!any) continue;
    const std::string& label = identities_[i];
    auto it = out.index_.find(label);
    std::size_t row;
    if (it == out.index_.end()) {
      row = out.labels.size();
      out.index_.emplace(label, row);
      out.labels.push_back(label);
      out.counts.push_back(0);
      out.centers.resize(out.labels.size() * parts_ * channels_, 0.0);
      part_counts.emplace_back(parts_, 0);
    } else {
      row = it->second;
    }
    out.counts[row] += 1;
    for (std::size_t p = 0; p < parts_; ++p) {
      if (!initialized_[i * parts_ + p]) continue;
      const double* slot = slots_.data() + offset(i, p);
      double* center = out.centers.data() + (row * parts_ + p) * channels_;
      for (std::size_t c = 0; c < channels_; ++c) center[c] += slot[c];
      part_counts[row][p] += 1;
    }
  }
  for (std::size_t row = 0; row < out.labels.size(); ++row)
    for (std::size_t p = 0; p < parts_; ++p) {
      const std::size_t n = part_counts[row][p];
      if (n == 0) continue;
      double* center = out.centers.data() + (row * parts_ + p) * channels_;
      for (std::size_t c = 0; c < channels_; ++c) center[c] /= static_cast<double>(n);
    }
  return out;
}

std::vector<double> MemoryBank::similarity_scores(std::span<const double> f,
                                                  std::size_t part_index,
                                                  double beta) const {
  if (beta <= 0.0 || beta > 1.0)
    throw std::invalid_argument("similarity_scores: beta must be in (0,1], got " +
                                std::to_string(beta));
  if (part_index >= parts_)
    throw std::out_of_range("similarity_scores: part index out of range");
  if (f.size() != channels_)
    throw std::invalid_argument("similarity_scores: feature dimension mismatch");
  std::vector<double> scores(identities_.size(), 0.0);
  for (std::size_t i = 0; i < identities_.size(); ++i) {
    const double* slot = slots_.data() + offset(i, part_index);
    double s = 0.0;
    for (std::size_t c = 0; c < channels_; ++c) s += slot[c] * f[c];
    scores[i] = s / beta;
  }
  return scores;
}

bool MemoryBank::is_initialized(std::size_t image_index, std::size_t part_index) const {
  return initialized_[image_index * parts_ + part_index] != 0;
}

std::span<const double> MemoryBank::slot(std::size_t image_index,
                                         std::size_t part_index) const {
  return {slots_.data() + offset(image_index, part_index), channels_};
}

void MemoryBank::restore(std::vector<double> slots, std::vector<char> flags) {
  if (slots.size() != slots_.size() || flags.size() != initialized_.size())
    throw DataError("memory bank restore: size mismatch");
  slots_ = std::move(slots);
  initialized_ = std::move(flags);
}

}  // namespace partmem
