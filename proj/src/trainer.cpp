#include "partmem/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "partmem/errors.hpp"

namespace partmem {

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  return std::mt19937_64(seed ^ (0x9e3779b97f4a7c15ull * (epoch + 1)));
}

}  // namespace

std::vector<LrStage> default_lr_schedule(std::size_t epochs) {
  if (epochs == 0) return {};
  if (epochs <= 40) return {{1, epochs, 0.05}};
  return {{1, 40, 0.05}, {41, epochs, 0.005}};
}

double TrainConfig::lr_at(std::size_t epoch) const {
  for (const auto& s : lr_schedule)
    if (epoch >= s.first_epoch && epoch <= s.last_epoch) return s.rate;
  throw ConfigError("no learning-rate stage covers epoch " + std::to_string(epoch));
}

void TrainConfig::validate() const {
  dims.validate();
  loss.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must be in [0,1)");
  if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must be in [0,1]");
  if (use_triplet_center && !memory_enabled)
    throw ConfigError("triplet-center loss needs the memory enabled (its centers "
                      "come from the bank)");
  if (epochs > 0) {
    std::size_t expect = 1;
    for (const auto& s : lr_schedule) {
      if (s.first_epoch != expect)
        throw ConfigError("learning-rate stages must tile [1,epochs] contiguously");
      if (s.last_epoch < s.first_epoch)
        throw ConfigError("learning-rate stage range is empty");
      if (s.rate <= 0.0) throw ConfigError("learning rates must be positive");
      expect = s.last_epoch + 1;
    }
    if (expect != epochs + 1)
      throw ConfigError("learning-rate stages cover [1," + std::to_string(expect - 1) +
                        "], expected [1," + std::to_string(epochs) + "]");
  }
  if (center_refresh_interval == 0)
    throw ConfigError("center_refresh_interval must be positive");
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double mu) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("sgd_step: size mismatch");
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void CenterCache::attach(const MemoryBank* bank, bool full_every_call,
                         std::size_t interval) {
  bank_ = bank;
  full_every_call_ = full_every_call;
  interval_ = interval;
  cache_.reset();
  images_by_identity_.clear();
  identity_order_.clear();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < bank->images(); ++i) {
    const std::string& label = bank->identities()[i];
    auto it = index.find(label);
    if (it == index.end()) {
      index.emplace(label, identity_order_.size());
      identity_order_.push_back(label);
      images_by_identity_.emplace_back();
      images_by_identity_.back().push_back(i);
    } else {
      images_by_identity_[it->second].push_back(i);
    }
  }
}

void CenterCache::full_refresh() {
  cache_ = bank_->class_centers();
  calls_since_full_ = 0;
}

void CenterCache::partial_refresh(const std::vector<std::string>& batch_labels) {
  ClassCenters& cache = *cache_;
  const std::size_t parts = bank_->parts();
  const std::size_t channels = bank_->channels();

  auto recompute = [&](const std::string& label) {
    auto it = std::find(identity_order_.begin(), identity_order_.end(), label);
    if (it == identity_order_.end()) return;
    const auto& images = images_by_identity_[it - identity_order_.begin()];
    std::vector<double> mean(parts * channels, 0.0);
    std::vector<std::size_t> counts(parts, 0);
    std::size_t any = 0;
    for (std::size_t img : images) {
      bool contributed = false;
      for (std::size_t p = 0; p < parts; ++p) {
        if (!bank_->is_initialized(img, p)) continue;
        auto slot = bank_->slot(img, p);
        for (std::size_t c = 0; c < channels; ++c) mean[p * channels + c] += slot[c];
        ++counts[p];
        contributed = true;
      }
      if (contributed) ++any;
    }
    if (any == 0) return;
    for (std::size_t p = 0; p < parts; ++p)
      if (counts[p] > 0)
        for (std::size_t c = 0; c < channels; ++c)
          mean[p * channels + c] /= static_cast<double>(counts[p]);

    auto row = cache.index_of(label);
    if (!row) {
      row = cache.labels.size();
      cache.index_.emplace(label, *row);
      cache.labels.push_back(label);
      cache.counts.push_back(any);
      cache.centers.resize(cache.labels.size() * parts * channels, 0.0);
    }
    cache.counts[*row] = any;
    std::copy(mean.begin(), mean.end(),
              cache.centers.begin() + static_cast<std::ptrdiff_t>(*row * parts * channels));
  };

  std::set<std::string> labels(batch_labels.begin(), batch_labels.end());
  for (const auto& label : labels) recompute(label);

  // Refresh each batch identity's nearest-neighbor center as well; those are
  // the candidates the hinge is most likely to select as negatives.
  std::set<std::string> neighbors;
  for (const auto& label : labels) {
    auto row = cache.index_of(label);
    if (!row) continue;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_row = cache.size();
    for (std::size_t j = 0; j < cache.size(); ++j) {
      if (j == *row) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < parts * channels; ++k) {
        const double diff = cache.centers[*row * parts * channels + k] -
                            cache.centers[j * parts * channels + k];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_row = j;
      }
    }
    if (best_row < cache.size() && !labels.count(cache.labels[best_row]))
      neighbors.insert(cache.labels[best_row]);
  }
  for (const auto& label : neighbors) recompute(label);
}

const ClassCenters& CenterCache::get(const std::vector<std::string>& batch_labels) {
  if (!cache_ || full_every_call_ || calls_since_full_ >= interval_) {
    full_refresh();
  } else {
    partial_refresh(batch_labels);
  }
  ++calls_since_full_;
  return *cache_;
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), model_(cfg.dims, cfg.seed) {
  cfg_.validate();
  for (const auto* p : model_.all_params())
    velocities_.emplace_back(p->values.size(), 0.0);
}

Trainer::Trainer(const TrainConfig& cfg, const io::Checkpoint& resume_from)
    : cfg_(cfg), model_(cfg.dims, cfg.seed) {
  cfg_.validate();
  const ModelDims& a = cfg.dims;
  const ModelDims& b = resume_from.dims;
  if (a.height != b.height || a.width != b.width || a.channels != b.channels ||
      a.p1 != b.p1 || a.p2 != b.p2 || a.input_dim != b.input_dim ||
      a.patches != b.patches || a.patch_embed != b.patch_embed)
    throw DataError("checkpoint dims disagree with the configured model");

  std::unordered_map<std::string, const ParamTensor*> by_name;
  for (const auto& p : resume_from.params) by_name[p.name] = &p;
  for (auto* p : model_.all_params()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw DataError("checkpoint missing parameter '" + p->name + "'");
    if (it->second->shape != p->shape)
      throw DataError("checkpoint parameter '" + p->name + "' has wrong shape");
    p->values = it->second->values;
  }
  std::unordered_map<std::string, const ParamTensor*> vel_by_name;
  for (const auto& v : resume_from.velocities) vel_by_name[v.name] = &v;
  for (const auto* p : model_.all_params()) {
    auto it = vel_by_name.find(p->name);
    if (it != vel_by_name.end())
      velocities_.push_back(it->second->values);
    else
      velocities_.emplace_back(p->values.size(), 0.0);
  }
  if (resume_from.bank) {
    bank_ = *resume_from.bank;
    bank_filled_ = true;
  }
  start_epoch_ = resume_from.epoch;
}

io::Checkpoint Trainer::snapshot(std::uint32_t epoch) const {
  io::Checkpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.dims = cfg_.dims;
  const auto params = model_.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.params.push_back(*params[i]);
    ckpt.velocities.push_back({params[i]->name, params[i]->shape, velocities_[i]});
  }
  if (cfg_.memory_enabled && bank_.images() > 0) {
    ckpt.bank = bank_;
    ckpt.bank_delta = cfg_.delta;
  }
  return ckpt;
}

void Trainer::fill_bank(const std::vector<const io::LoadedSample*>& train_samples) {
  // One no-gradient pass over the training set seeds every slot, so the
  // first epoch already has live softmax targets and class centers.
  for (std::size_t i = 0; i < train_samples.size(); ++i) {
    ad::Tape tape;
    auto bound = model_.bind(tape, false);
    const auto& s = *train_samples[i];
    PartFeatureSet set =
        model_.forward_parts(tape, bound, s.features.shape, s.features.values);
    std::vector<ad::Var> feats =
        cfg_.store_head_features ? model_.apply_heads(bound, set) : set.parts;
    for (std::size_t p = 0; p < feats.size(); ++p)
      bank_.update(i, p, feats[p].values(), cfg_.delta);
  }
  bank_filled_ = true;
}

TrainResult Trainer::train(const std::vector<io::LoadedSample>& samples,
                           const std::filesystem::path& out_dir) {
  std::vector<const io::LoadedSample*> train_samples;
  for (const auto& s : samples)
    if (s.record.split == io::Split::train) train_samples.push_back(&s);
  if (train_samples.empty()) throw DataError("no training samples in manifest");

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.checkpoint_path = out_dir / "checkpoint.pamc";
  result.metrics_path = out_dir / "metrics.csv";

  const std::size_t b = cfg_.dims.parts_total();
  if (cfg_.memory_enabled) {
    if (bank_.images() == 0) {
      std::vector<std::string> identities;
      identities.reserve(train_samples.size());
      for (const auto* s : train_samples) identities.push_back(s->record.identity);
      bank_ = init_bank(identities, b, cfg_.dims.channels, cfg_.normalize_slots);
    }
    if (!bank_filled_) fill_bank(train_samples);
  }

  CenterCache center_cache;
  const bool need_centers =
      cfg_.memory_enabled && (cfg_.use_triplet_center ||
                              cfg_.loss.softmax_target == SoftmaxTarget::klass);
  if (need_centers)
    center_cache.attach(&bank_, cfg_.full_center_recompute,
                        cfg_.center_refresh_interval);

  save_checkpoint(result.checkpoint_path, snapshot(static_cast<std::uint32_t>(start_epoch_)));

  auto params = model_.all_params();
  std::size_t iteration = 0;
  for (std::size_t epoch = start_epoch_ + 1; epoch <= cfg_.epochs; ++epoch) {
    const double lr = cfg_.lr_at(epoch);
    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = epoch_rng(cfg_.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      ++iteration;
      const std::size_t end = std::min(start + cfg_.batch_size, order.size());

      ad::Tape tape;
      auto bound = model_.bind(tape, true);
      BatchFeatures batch;
      std::vector<std::vector<ad::Var>> bank_feats;
      for (std::size_t k = start; k < end; ++k) {
        const io::LoadedSample& s = *train_samples[order[k]];
        PartFeatureSet set =
            model_.forward_parts(tape, bound, s.features.shape, s.features.values);
        std::vector<ad::Var> f = model_.apply_heads(bound, set);
        bank_feats.push_back(cfg_.store_head_features ? f : set.parts);
        batch.parts.push_back(std::move(f));
        batch.labels.push_back(s.record.identity);
        batch.image_indices.push_back(order[k]);
      }

      std::size_t distinct = 0;
      {
        std::set<std::string> ids(batch.labels.begin(), batch.labels.end());
        distinct = ids.size();
      }

      IterationLogRow row;
      row.epoch = epoch;
      row.iteration = iteration;
      row.lr = lr;

      ad::Var tcl = tape.scalar_constant(0.0);
      if (cfg_.use_triplet_center) {
        if (distinct >= 2) {
          const ClassCenters& centers = center_cache.get(batch.labels);
          if (centers.size() >= 2) {
            tcl = triplet_center_loss(tape, batch, centers, cfg_.loss.alpha);
          } else {
            ++result.tcl_skipped_batches;
          }
        } else {
          ++result.tcl_skipped_batches;
        }
      } else {
        if (distinct >= 2) {
          tcl = batch_triplet_loss(tape, batch, cfg_.loss.alpha);
        } else {
          ++result.tcl_skipped_batches;
        }
      }

      ad::Var sm = tape.scalar_constant(0.0);
      if (cfg_.memory_enabled) {
        const ClassCenters* centers_ptr = nullptr;
        ClassCenters class_mode_centers;
        if (cfg_.loss.softmax_target == SoftmaxTarget::klass) {
          class_mode_centers = center_cache.get(batch.labels);
          centers_ptr = &class_mode_centers;
        }
        auto sm_result = memory_softmax_loss(tape, batch, bank_, cfg_.loss.beta,
                                             cfg_.loss.softmax_target, centers_ptr);
        sm = sm_result.loss;
        row.skipped_terms = sm_result.skipped_terms;
      }

      ad::Var total = combined_loss(tape, tcl, sm, cfg_.loss.lambda);
      row.tcl = tcl.scalar();
      row.softmax = sm.scalar();
      row.combined = total.scalar();

      tape.backward(total, {1.0});

      std::vector<std::vector<double>> grads;
      grads.reserve(params.size());
      bool finite = true;
      const ad::Var bound_vars[] = {bound.backbone.w1, bound.backbone.b1,
                                    bound.backbone.w2, bound.backbone.b2,
                                    bound.head_h_w,    bound.head_h_b,
                                    bound.head_v_w,    bound.head_v_b};
      for (const auto& v : bound_vars) {
        grads.push_back(tape.grad(v));
        for (double g : grads.back())
          if (!std::isfinite(g)) finite = false;
      }
      if (!finite) {
        ++result.rejected_steps;
        result.log.push_back(row);
        continue;
      }

      for (std::size_t pi = 0; pi < params.size(); ++pi)
        sgd_step(params[pi]->values, grads[pi], velocities_[pi], lr, cfg_.momentum);

      if (cfg_.memory_enabled) {
        for (std::size_t bi = 0; bi < batch.batch(); ++bi)
          for (std::size_t p = 0; p < bank_feats[bi].size(); ++p)
            bank_.update(batch.image_indices[bi], p, bank_feats[bi][p].values(),
                         cfg_.delta);
      }

      result.log.push_back(row);
    }
    save_checkpoint(result.checkpoint_path, snapshot(static_cast<std::uint32_t>(epoch)));
  }

  write_metrics_csv(result.metrics_path, result.log);
  return result;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<IterationLogRow>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write metrics log " + path.string());
  out << "epoch,iteration,lr,tcl,softmax,combined,skipped_terms\n";
  out << std::setprecision(17);
  for (const auto& r : log)
    out << r.epoch << ',' << r.iteration << ',' << r.lr << ',' << r.tcl << ','
        << r.softmax << ',' << r.combined << ',' << r.skipped_terms << '\n';
  if (!out) throw DataError("write failed for metrics log " + path.string());
}

std::vector<IterationLogRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics log " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError(path.string() + ": empty metrics log");
  std::vector<IterationLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    IterationLogRow r;
    char c;
    ss >> r.epoch >> c >> r.iteration >> c >> r.lr >> c >> r.tcl >> c >> r.softmax >>
        c >> r.combined >> c >> r.skipped_terms;
    if (ss.fail()) throw DataError(path.string() + ": malformed metrics row");
    rows.push_back(r);
  }
  return rows;
}

}  // namespace partmem
