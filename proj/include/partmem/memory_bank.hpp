#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace partmem {

// Per-identity, per-part mean of the initialized bank slots. Identities with
// no initialized slot are excluded. Always recomputed from the slots, never
// cached incrementally.
struct ClassCenters {
  std::vector<std::string> labels;       // R distinct identities, in first-seen order
  std::vector<double> centers;           // R x b x C
  std::vector<std::size_t> counts;       // images contributing per identity
  std::size_t parts = 0;
  std::size_t channels = 0;

  std::size_t size() const { return labels.size(); }
  std::optional<std::size_t> index_of(const std::string& label) const;
  std::span<const double> center(std::size_t identity_index, std::size_t part) const;

  std::unordered_map<std::string, std::size_t> index_;
};

// One slot per training image per part, blended with momentum delta and
// optionally re-normalized after each write. The first write to a slot stores
// the feature directly.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::vector<std::string> identities, std::size_t parts,
             std::size_t channels, bool normalize_slots = true);

  void update(std::size_t image_index, std::size_t part_index,
              std::span<const double> h, double delta);

  ClassCenters class_centers() const;

  // (V[i,part] . f) / beta for every image slot; pair with is_initialized to
  // drop unwritten slots from any downstream softmax.
  std::vector<double> similarity_scores(std::span<const double> f,
                                        std::size_t part_index, double beta) const;

  std::size_t images() const { return identities_.size(); }
  std::size_t parts() const { return parts_; }
  std::size_t channels() const { return channels_; }
  bool normalize_slots() const { return normalize_; }
  bool is_initialized(std::size_t image_index, std::size_t part_index) const;
  std::span<const double> slot(std::size_t image_index, std::size_t part_index) const;
  const std::vector<std::string>& identities() const { return identities_; }
  std::size_t update_count() const { return update_count_; }

  // Serialization hooks used by the checkpoint container.
  const std::vector<double>& raw_slots() const { return slots_; }
  const std::vector<char>& raw_flags() const { return initialized_; }
  void restore(std::vector<double> slots, std::vector<char> flags);

 private:
  std::size_t offset(std::size_t image, std::size_t part) const {
    return (image * parts_ + part) * channels_;
  }

  std::vector<std::string> identities_;
  std::size_t parts_ = 0;
  std::size_t channels_ = 0;
  bool normalize_ = true;
  std::vector<double> slots_;       // M x b x C
  std::vector<char> initialized_;   // M x b
  std::size_t update_count_ = 0;
};

// Builds the bank over the training images of a manifest, preserving order.
MemoryBank init_bank(std::span<const std::string> train_identities, std::size_t parts,
                     std::size_t channels, bool normalize_slots = true);

}  // namespace partmem
