#pragma once

#include <span>
#include <string>
#include <vector>

#include "partmem/memory_bank.hpp"
#include "partmem/tensor.hpp"

namespace partmem {

enum class SoftmaxTarget { instance, klass };

struct LossConfig {
  double lambda = 1.0;  // weight of the metric-learning term
  double alpha = 1.0;   // triplet-center margin
  double beta = 0.05;   // softmax temperature
  SoftmaxTarget softmax_target = SoftmaxTarget::instance;

  void validate() const;
};

// Head features of one mini-batch: per sample the ordered part vectors
// (each [C], unit norm) plus its identity label and training image index.
struct BatchFeatures {
  std::vector<std::vector<ad::Var>> parts;  // [batch][b]
  std::vector<std::string> labels;
  std::vector<std::size_t> image_indices;

  std::size_t batch() const { return parts.size(); }
};

double half_sq_l2(std::span<const double> f, std::span<const double> c);
ad::Var half_sq_l2(const ad::Var& f, const ad::Var& c);

// Hinge toward the own-class center against the nearest other-class center,
// summed over parts, averaged over the batch. Needs at least two identities
// among the centers. The nearest negative is selected by value; the recorded
// subgraph differentiates only the active branch.
ad::Var triplet_center_loss(ad::Tape& tape, const BatchFeatures& batch,
                            const ClassCenters& centers, double alpha);

struct SoftmaxLossResult {
  ad::Var loss;
  std::size_t skipped_terms = 0;  // sample-part terms with an unwritten target
};

// -log softmax of the target score over the bank slots (instance mode) or
// the class centers (class mode), temperature beta, max-stabilized. Averaged
// over the batch, summed over parts. Gradients reach the features only.
SoftmaxLossResult memory_softmax_loss(ad::Tape& tape, const BatchFeatures& batch,
                                      const MemoryBank& bank, double beta,
                                      SoftmaxTarget target,
                                      const ClassCenters* centers = nullptr);

ad::Var combined_loss(ad::Tape& tape, const ad::Var& tcl, const ad::Var& sm,
                      double lambda);

// In-batch triplet hinge over all valid (anchor, positive, negative) index
// triples, no mining; the metric term for runs without class centers.
ad::Var batch_triplet_loss(ad::Tape& tape, const BatchFeatures& batch, double alpha);

}  // namespace partmem
