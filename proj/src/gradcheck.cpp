#include "partmem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>

#include "partmem/losses.hpp"
#include "partmem/memory_bank.hpp"
#include "partmem/tensor.hpp"

namespace partmem {

namespace {

struct Scenario {
  MemoryBank bank;
  ClassCenters centers;
  std::vector<double> features;  // batch x parts x channels, flattened
  std::vector<std::string> labels;
  std::vector<std::size_t> image_indices;
  double alpha = 1.0;
  double beta = 0.5;
  double lambda = 1.0;
};

// Rebuilds the batch view over a flat feature tensor so every loss is a
// scalar function of one input var.
BatchFeatures batch_from_var(const ad::Var& x, const Scenario& sc,
                             const GradCheckOptions& opts) {
  BatchFeatures batch;
  batch.labels = sc.labels;
  batch.image_indices = sc.image_indices;
  for (std::size_t i = 0; i < opts.batch; ++i) {
    std::vector<ad::Var> parts;
    for (std::size_t p = 0; p < opts.parts; ++p) {
      const std::size_t off = (i * opts.parts + p) * opts.channels;
      parts.push_back(ad::slice(x, 0, off, off + opts.channels));
    }
    batch.parts.push_back(std::move(parts));
  }
  return batch;
}

Scenario draw_scenario(std::mt19937_64& rng, const GradCheckOptions& opts) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> alpha_dist(0.2, 1.5);
  std::uniform_real_distribution<double> beta_dist(0.05, 1.0);
  std::uniform_real_distribution<double> lambda_dist(0.1, 2.0);

  for (int attempt = 0; attempt < 100; ++attempt) {
    Scenario sc;
    std::vector<std::string> identities;
    for (std::size_t m = 0; m < opts.bank_images; ++m)
      identities.push_back("id" + std::to_string(m % opts.identities));
    sc.bank = MemoryBank(identities, opts.parts, opts.channels, true);
    std::vector<double> h(opts.channels);
    for (std::size_t m = 0; m < opts.bank_images; ++m)
      for (std::size_t p = 0; p < opts.parts; ++p) {
        for (double& v : h) v = unit(rng);
        sc.bank.update(m, p, h, 0.5);
      }
    sc.centers = sc.bank.class_centers();

    sc.features.resize(opts.batch * opts.parts * opts.channels);
    for (double& v : sc.features) v = unit(rng);
    for (std::size_t i = 0; i < opts.batch; ++i) {
      sc.labels.push_back("id" + std::to_string(i % opts.identities));
      sc.image_indices.push_back(i % opts.bank_images);
    }
    sc.alpha = alpha_dist(rng);
    sc.beta = beta_dist(rng);
    sc.lambda = lambda_dist(rng);

    // Reject configurations with any hinge margin near the kink.
    bool near_kink = false;
    for (std::size_t i = 0; i < opts.batch && !near_kink; ++i) {
      const auto own = sc.centers.index_of(sc.labels[i]);
      for (std::size_t p = 0; p < opts.parts && !near_kink; ++p) {
        std::span<const double> f{sc.features.data() + (i * opts.parts + p) * opts.channels,
                                  opts.channels};
        const double d_pos = half_sq_l2(f, sc.centers.center(*own, p));
        double d_neg = std::numeric_limits<double>::infinity();
        double d_neg2 = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < sc.centers.size(); ++j) {
          if (j == *own) continue;
          const double d = half_sq_l2(f, sc.centers.center(j, p));
          if (d < d_neg) {
            d_neg2 = d_neg;
            d_neg = d;
          } else {
            d_neg2 = std::min(d_neg2, d);
          }
        }
        if (std::abs(d_pos + sc.alpha - d_neg) < opts.kink_margin) near_kink = true;
        // A photo-finish between the two closest negatives is a kink too.
        if (std::isfinite(d_neg2) && d_neg2 - d_neg < opts.kink_margin) near_kink = true;
      }
    }
    if (!near_kink) return sc;
  }
  throw std::runtime_error("gradcheck: could not draw a kink-free configuration");
}

}  // namespace

std::vector<GradCheckRow> run_loss_gradient_checks(std::uint64_t seed,
                                                   const GradCheckOptions& opts) {
  std::mt19937_64 rng(seed);
  GradCheckRow half{"half_sq_l2", 0.0};
  GradCheckRow tcl{"triplet_center", 0.0};
  GradCheckRow sm_inst{"memory_softmax_instance", 0.0};
  GradCheckRow sm_class{"memory_softmax_class", 0.0};
  GradCheckRow combined{"combined", 0.0};

  const ad::Shape flat{opts.batch * opts.parts * opts.channels};
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  for (std::size_t cfg = 0; cfg < opts.configs; ++cfg) {
    Scenario sc = draw_scenario(rng, opts);

    {
      std::vector<double> x(opts.channels), c(opts.channels);
      for (double& v : x) v = unit(rng);
      for (double& v : c) v = unit(rng);
      auto fn = [&](ad::Tape& tape, const ad::Var& in) {
        return half_sq_l2(in, tape.constant({opts.channels}, c));
      };
      half.max_rel_err = std::max(
          half.max_rel_err, ad::finite_diff_check(fn, {opts.channels}, x, opts.step));
    }

    auto tcl_fn = [&](ad::Tape& tape, const ad::Var& in) {
      (void)tape;
      return triplet_center_loss(*in.tape(), batch_from_var(in, sc, opts), sc.centers,
                                 sc.alpha);
    };
    tcl.max_rel_err = std::max(
        tcl.max_rel_err, ad::finite_diff_check(tcl_fn, flat, sc.features, opts.step));

    auto sm_inst_fn = [&](ad::Tape& tape, const ad::Var& in) {
      return memory_softmax_loss(tape, batch_from_var(in, sc, opts), sc.bank, sc.beta,
                                 SoftmaxTarget::instance)
          .loss;
    };
    sm_inst.max_rel_err =
        std::max(sm_inst.max_rel_err,
                 ad::finite_diff_check(sm_inst_fn, flat, sc.features, opts.step));

    auto sm_class_fn = [&](ad::Tape& tape, const ad::Var& in) {
      return memory_softmax_loss(tape, batch_from_var(in, sc, opts), sc.bank, sc.beta,
                                 SoftmaxTarget::klass, &sc.centers)
          .loss;
    };
    sm_class.max_rel_err =
        std::max(sm_class.max_rel_err,
                 ad::finite_diff_check(sm_class_fn, flat, sc.features, opts.step));

    auto combined_fn = [&](ad::Tape& tape, const ad::Var& in) {
      BatchFeatures batch = batch_from_var(in, sc, opts);
      ad::Var t = triplet_center_loss(tape, batch, sc.centers, sc.alpha);
      ad::Var s =
          memory_softmax_loss(tape, batch, sc.bank, sc.beta, SoftmaxTarget::instance)
              .loss;
      return combined_loss(tape, t, s, sc.lambda);
    };
    combined.max_rel_err =
        std::max(combined.max_rel_err,
                 ad::finite_diff_check(combined_fn, flat, sc.features, opts.step));
  }

  return {half, tcl, sm_inst, sm_class, combined};
}

}  // namespace partmem
