#include "partmem/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "partmem/errors.hpp"

namespace partmem {

namespace {

ad::Var sum_vars(ad::Tape& tape, std::span<const ad::Var> terms) {
  if (terms.empty()) return tape.scalar_constant(0.0);
  ad::Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return acc;
}

}  // namespace

void LossConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (alpha < 0.0) throw ConfigError("alpha must be nonnegative");
  if (beta <= 0.0 || beta > 1.0) throw ConfigError("beta must be in (0,1]");
}

double half_sq_l2(std::span<const double> f, std::span<const double> c) {
  if (f.size() != c.size())
    throw std::invalid_argument("half_sq_l2: dimension mismatch " +
                                std::to_string(f.size()) + " vs " +
                                std::to_string(c.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = f[i] - c[i];
    s += d * d;
  }
  return 0.5 * s;
}

ad::Var half_sq_l2(const ad::Var& f, const ad::Var& c) {
  ad::Var diff = ad::add(f, ad::scale(c, -1.0));
  return ad::scale(ad::dot(diff, diff), 0.5);
}

ad::Var triplet_center_loss(ad::Tape& tape, const BatchFeatures& batch,
                            const ClassCenters& centers, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("triplet_center_loss: alpha must be >= 0");
  if (batch.batch() == 0)
    throw std::invalid_argument("triplet_center_loss: empty batch");
  if (centers.size() < 2)
    throw std::invalid_argument(
        "triplet_center_loss: needs at least 2 identities among centers, got " +
        std::to_string(centers.size()));
  std::vector<ad::Var> hinges;
  for (std::size_t i = 0; i < batch.batch(); ++i) {
    const auto own = centers.index_of(batch.labels[i]);
    if (!own)
      throw std::invalid_argument("triplet_center_loss: no center for identity '" +
                                  batch.labels[i] + "'");
    for (std::size_t p = 0; p < batch.parts[i].size(); ++p) {
      const ad::Var& f = batch.parts[i][p];
      const auto& fv = f.values();

      // Nearest negative picked by value; only the winner enters the tape.
      std::size_t best = centers.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < centers.size(); ++j) {
        if (j == *own) continue;
        const double d = half_sq_l2(fv, centers.center(j, p));
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }

      auto center_const = [&](std::size_t row) {
        auto c = centers.center(row, p);
        return tape.constant({c.size()}, std::vector<double>(c.begin(), c.end()));
      };
      ad::Var d_pos = half_sq_l2(f, center_const(*own));
      ad::Var d_neg = half_sq_l2(f, center_const(best));
      ad::Var margin = ad::add(ad::add(d_pos, tape.scalar_constant(alpha)),
                               ad::scale(d_neg, -1.0));
      hinges.push_back(ad::relu(margin));
    }
  }
  ad::Var total = sum_vars(tape, hinges);
  return ad::scale(total, 1.0 / static_cast<double>(batch.batch()));
}

SoftmaxLossResult memory_softmax_loss(ad::Tape& tape, const BatchFeatures& batch,
                                      const MemoryBank& bank, double beta,
                                      SoftmaxTarget target,
                                      const ClassCenters* centers) {
  if (beta <= 0.0 || beta > 1.0)
    throw std::invalid_argument("memory_softmax_loss: beta must be in (0,1], got " +
                                std::to_string(beta));
  if (target == SoftmaxTarget::klass && centers == nullptr)
    throw std::invalid_argument("memory_softmax_loss: class mode needs centers");

  SoftmaxLossResult result;
  std::vector<ad::Var> terms;
  const std::size_t channels = bank.channels();

  for (std::size_t i = 0; i < batch.batch(); ++i) {
    for (std::size_t p = 0; p < batch.parts[i].size(); ++p) {
      const ad::Var& f = batch.parts[i][p];
      const auto& fv = f.values();
      if (fv.size() != channels)
        throw std::invalid_argument("memory_softmax_loss: feature dimension " +
                                    std::to_string(fv.size()) + " does not match bank " +
                                    std::to_string(channels));

      // Gather target vector plus all participating reference vectors.
      std::vector<std::span<const double>> refs;
      std::ptrdiff_t target_ref = -1;
      if (target == SoftmaxTarget::instance) {
        const std::size_t own = batch.image_indices[i];
        if (own >= bank.images())
          throw std::out_of_range("memory_softmax_loss: image index out of range");
        if (!bank.is_initialized(own, p)) {
          ++result.skipped_terms;
          continue;
        }
        for (std::size_t m = 0; m < bank.images(); ++m) {
          if (!bank.is_initialized(m, p)) continue;
          if (m == own) target_ref = static_cast<std::ptrdiff_t>(refs.size());
          refs.push_back(bank.slot(m, p));
        }
      } else {
        const auto own = centers->index_of(batch.labels[i]);
        if (!own) {
          ++result.skipped_terms;
          continue;
        }
        for (std::size_t r = 0; r < centers->size(); ++r) {
          if (r == *own) target_ref = static_cast<std::ptrdiff_t>(refs.size());
          refs.push_back(centers->center(r, p));
        }
      }

      // Max-stabilized log-sum-exp, with the gradient direction
      // (sum_j p_j v_j - v_target) / beta folded in at forward time.
      std::vector<double> scores(refs.size());
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < refs.size(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < channels; ++c) s += refs[r][c] * fv[c];
        scores[r] = s / beta;
        max_score = std::max(max_score, scores[r]);
      }
      double z = 0.0;
      for (double s : scores) z += std::exp(s - max_score);
      const double loss = -(scores[target_ref] - max_score) + std::log(z);

      std::vector<double> grad_dir(channels, 0.0);
      for (std::size_t r = 0; r < refs.size(); ++r) {
        const double prob = std::exp(scores[r] - max_score) / z;
        for (std::size_t c = 0; c < channels; ++c) grad_dir[c] += prob * refs[r][c];
      }
      for (std::size_t c = 0; c < channels; ++c) {
        grad_dir[c] -= refs[target_ref][c];
        grad_dir[c] /= beta;
      }

      const int parent = f.node();
      terms.push_back(tape.record(
          "memory_softmax", {parent}, {1}, {loss},
          [parent, grad_dir = std::move(grad_dir)](const std::vector<double>& g,
                                                   ad::Tape& t) {
            if (!t.node_requires_grad(parent)) return;
            auto& gp = t.grad_buffer(parent);
            for (std::size_t c = 0; c < gp.size(); ++c) gp[c] += g[0] * grad_dir[c];
          }));
    }
  }

  ad::Var total = sum_vars(tape, terms);
  result.loss = batch.batch() > 0
                    ? ad::scale(total, 1.0 / static_cast<double>(batch.batch()))
                    : total;
  return result;
}

ad::Var combined_loss(ad::Tape& tape, const ad::Var& tcl, const ad::Var& sm,
                      double lambda) {
  (void)tape;
  if (!std::isfinite(tcl.scalar()) || !std::isfinite(sm.scalar()))
    throw NumericError("combined_loss: non-finite loss term");
  return ad::add(ad::scale(tcl, lambda), sm);
}

ad::Var batch_triplet_loss(ad::Tape& tape, const BatchFeatures& batch, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("batch_triplet_loss: alpha must be >= 0");
  std::vector<ad::Var> hinges;
  const std::size_t n = batch.batch();
  std::size_t triples = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (pos == a || batch.labels[pos] != batch.labels[a]) continue;
      for (std::size_t neg = 0; neg < n; ++neg) {
        if (batch.labels[neg] == batch.labels[a]) continue;
        ++triples;
        for (std::size_t p = 0; p < batch.parts[a].size(); ++p) {
          ad::Var d_pos = half_sq_l2(batch.parts[a][p], batch.parts[pos][p]);
          ad::Var d_neg = half_sq_l2(batch.parts[a][p], batch.parts[neg][p]);
          ad::Var margin = ad::add(ad::add(d_pos, tape.scalar_constant(alpha)),
                                   ad::scale(d_neg, -1.0));
          hinges.push_back(ad::relu(margin));
        }
      }
    }
  ad::Var total = sum_vars(tape, hinges);
  if (triples == 0) return total;
  return ad::scale(total, 1.0 / static_cast<double>(triples));
}

}  // namespace partmem
