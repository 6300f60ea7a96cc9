#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partmem/checkpoint.hpp"
#include "partmem/dataset.hpp"
#include "partmem/losses.hpp"
#include "partmem/memory_bank.hpp"
#include "partmem/model.hpp"

namespace partmem {

struct LrStage {
  std::size_t first_epoch = 1;  // 1-based, inclusive
  std::size_t last_epoch = 1;
  double rate = 0.05;
};

// Single-stage 0.05 up to 40 epochs, then the 0.05 / 0.005 two-stage split.
std::vector<LrStage> default_lr_schedule(std::size_t epochs);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  std::vector<LrStage> lr_schedule = default_lr_schedule(60);
  double momentum = 0.9;
  std::uint64_t seed = 42;
  LossConfig loss;
  double delta = 0.5;  // memory update rate
  ModelDims dims;

  bool memory_enabled = true;
  bool use_triplet_center = true;  // false: in-batch triplet metric term
  bool normalize_slots = true;
  bool store_head_features = true;  // false: store pooled parts in the bank
  bool full_center_recompute = false;
  std::size_t center_refresh_interval = 100;

  double lr_at(std::size_t epoch) const;
  void validate() const;
};

struct IterationLogRow {
  std::size_t epoch = 0;
  std::size_t iteration = 0;  // global, 1-based
  double lr = 0.0;
  double tcl = 0.0;
  double softmax = 0.0;
  double combined = 0.0;
  std::size_t skipped_terms = 0;
};

// Classical momentum: v' = mu*v + g, p' = p - lr*v'.
void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double mu);

// Class centers kept fresh lazily: every call re-averages the identities in
// the batch plus each one's nearest-neighbor center, with a full recompute
// on a fixed interval (or every call in correctness mode).
class CenterCache {
 public:
  void attach(const MemoryBank* bank, bool full_every_call, std::size_t interval);
  const ClassCenters& get(const std::vector<std::string>& batch_labels);
  void invalidate() { cache_.reset(); }

 private:
  void full_refresh();
  void partial_refresh(const std::vector<std::string>& batch_labels);

  const MemoryBank* bank_ = nullptr;
  bool full_every_call_ = false;
  std::size_t interval_ = 100;
  std::size_t calls_since_full_ = 0;
  std::optional<ClassCenters> cache_;
  std::vector<std::vector<std::size_t>> images_by_identity_;
  std::vector<std::string> identity_order_;
};

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::vector<IterationLogRow> log;
  std::size_t tcl_skipped_batches = 0;
  std::size_t rejected_steps = 0;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const TrainConfig& cfg, const io::Checkpoint& resume_from);

  // Runs epochs start+1..cfg.epochs over the train-split samples, writing
  // checkpoint.pamc and metrics.csv under out_dir.
  TrainResult train(const std::vector<io::LoadedSample>& samples,
                    const std::filesystem::path& out_dir);

  const PartModel& model() const { return model_; }
  PartModel& model() { return model_; }
  const MemoryBank& bank() const { return bank_; }
  std::size_t start_epoch() const { return start_epoch_; }

 private:
  io::Checkpoint snapshot(std::uint32_t epoch) const;
  void fill_bank(const std::vector<const io::LoadedSample*>& train_samples);

  TrainConfig cfg_;
  PartModel model_;
  MemoryBank bank_;
  std::vector<std::vector<double>> velocities_;
  std::size_t start_epoch_ = 0;
  bool bank_filled_ = false;
};

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<IterationLogRow>& log);
std::vector<IterationLogRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace partmem
