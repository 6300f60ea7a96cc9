#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace partmem {

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckOptions {
  std::size_t configs = 50;
  std::size_t batch = 4;
  std::size_t parts = 2;
  std::size_t channels = 8;
  std::size_t identities = 3;
  std::size_t bank_images = 6;
  double step = 1e-6;
  double kink_margin = 1e-3;  // hinge configurations closer than this are re-drawn
};

// Checks the analytic gradients of the distance, triplet-center, memory
// softmax (both targets) and combined losses against central differences on
// seeded random scenarios. Returns one row per loss with the worst error.
std::vector<GradCheckRow> run_loss_gradient_checks(std::uint64_t seed,
                                                   const GradCheckOptions& opts = {});

}  // namespace partmem
