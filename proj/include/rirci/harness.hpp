#pragma once

#include "rirci/losses.hpp"
#include "rirci/metrics.hpp"
#include "rirci/model.hpp"
#include "rirci/synthesis.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rirci::harness {

/// Mutually exclusive model variants. Table 2 ablations are predict-image
/// (#1), ffc (#2), restore-only (#3) and imagine-only (#4); no-scse and
/// no-spectral replace one GLCI propagation path by a 3x3 conv.
enum class Variant { Full, PredictImage, Ffc, RestoreOnly, ImagineOnly, NoScse, NoSpectral };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch_size = 8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  uint64_t seed = 0;
  losses::LossWeights loss_weights;
  Variant variant = Variant::Full;
  /// "full" or "tiny" (reduced widths, two bottleneck blocks).
  std::string model_size = "full";
  /// "random" for the fixed-seed extractor, otherwise a path to VGG16 weights.
  std::string perceptual = "random";
  uint64_t perceptual_seed = 0;
  int64_t perceptual_width_divisor = 1;
  std::string manifest;
  std::string output_dir = "run";
  /// Epochs between periodic checkpoints; 0 keeps only best.pt and last.pt.
  int64_t checkpoint_every = 1;
  double val_fraction = 0.02;
  /// Stops after this many optimizer steps when > 0.
  int64_t max_steps = 0;
  bool two_phase = false;
  /// Stage-1-only epochs in two-phase mode (0 = half of `epochs`).
  int64_t phase1_epochs = 0;
  bool detach_stage1 = false;
  int64_t threads = 1;
  /// Keeps decoded samples in memory between epochs.
  bool cache = true;
  /// Validation cadence in steps; 0 validates at the end of each epoch.
  int64_t validate_every = 0;

  /// Every key accepted by set() and the config file, in schema order.
  static const std::vector<std::string>& keys();
  /// Assigns one key from its textual value. Throws ContractError.
  void set(const std::string& key, const std::string& value);
  nlohmann::json to_json() const;
  void validate() const;
  /// Model architecture implied by model_size, variant and detach_stage1.
  ModelConfig model_config() const;
};

/// Reads a flat INI-style file (`key = value`, `#`/`;` comments, no sections).
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Applies, in order: file values, RIRCI_SEED from the environment, then
/// `overrides` (command-line flags).
TrainConfig resolve_config(const std::optional<std::filesystem::path>& file,
                           const std::map<std::string, std::string>& overrides);

/// One decoded training tuple as 1 x C x H x W tensors.
struct Batch {
  torch::Tensor J, I, A, M, C_b;
  std::vector<std::string> ids;
  std::vector<double> opacity;
};

/// Sample access with optional in-memory caching.
class SampleStore {
 public:
  SampleStore(const synthesis::DatasetManifest& manifest, bool cache);
  Batch batch(const std::vector<const synthesis::ManifestEntry*>& entries);

 private:
  const synthesis::DatasetManifest& manifest_;
  bool cache_;
  std::map<std::string, Batch> memo_;
};

struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  int phase = 0;
  double L_b = 0, L_r = 0, L_i = 0, L_f = 0, L_m = 0, total = 0;

  nlohmann::json to_json() const;
};

struct ValidationRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  metrics::MetricsReport report;
};

struct RunRecord {
  nlohmann::json config;
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validation;
  double wall_clock_seconds = 0.0;
  std::string source_fingerprint;

  nlohmann::json to_json() const;
};

/// Raised when the total loss stops being finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& msg, std::vector<std::string> ids)
      : std::runtime_error(msg), batch_ids(std::move(ids)) {}
  std::vector<std::string> batch_ids;
};

/// Deterministic train/validation split of the manifest's "train" entries.
struct Split {
  std::vector<const synthesis::ManifestEntry*> train;
  std::vector<const synthesis::ManifestEntry*> val;
};
Split carve_validation(const synthesis::DatasetManifest& manifest, double fraction, uint64_t seed);

/// Runs the model over `entries` in batches and scores Î against I and M̂
/// against M. With `oracle` the ground truth stands in for the prediction.
std::vector<metrics::SampleMetrics> score(RirciModel& model, SampleStore& store,
                                          const std::vector<const synthesis::ManifestEntry*>& entries,
                                          int64_t batch_size, bool oracle = false);

class Trainer {
 public:
  /// Builds the model, extractor and optimizer and carves the split. Writes
  /// nothing until a step is taken.
  Trainer(TrainConfig cfg, synthesis::DatasetManifest manifest);

  /// One optimizer step on the next batch of the seeded order.
  StepRecord step();
  /// Loss of the next batch without updating weights or advancing the order.
  StepRecord peek_loss();
  /// Trains until `epochs` or `max_steps`, validating, logging and
  /// checkpointing along the way.
  RunRecord run();

  metrics::MetricsReport validate();
  /// Metrics on the training entries (the tiny-overfit target).
  metrics::MetricsReport score_train();

  RirciModel& model() { return model_; }
  const Split& split() const { return split_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t steps_taken() const { return step_; }

 private:
  std::vector<const synthesis::ManifestEntry*> next_batch_entries(bool advance);
  StepRecord compute(const std::vector<const synthesis::ManifestEntry*>& entries, bool update);
  void reshuffle();
  void enter_phase2();
  void checkpoint(const std::filesystem::path& path, double best);

  TrainConfig cfg_;
  synthesis::DatasetManifest manifest_;
  Split split_;
  SampleStore store_;
  RirciModel model_{nullptr};
  losses::PerceptualExtractor extractor_{nullptr};
  std::unique_ptr<torch::optim::Adam> optim_;
  std::vector<const synthesis::ManifestEntry*> order_;
  size_t cursor_ = 0;
  int64_t epoch_ = 0;
  int64_t step_ = 0;
  int phase_ = 0;  // 0 joint, 1 stage-1 only, 2 stage 2 with stage 1 frozen
};

struct EvaluateOptions {
  std::string split = "test";
  bool oracle = false;
  bool buckets = false;
  int64_t batch_size = 8;
  /// When set, the checkpoint must match this architecture.
  std::optional<ModelConfig> expected;
  /// Directory for report.json and per_sample.csv; empty writes nothing.
  std::filesystem::path out_dir;
};

metrics::MetricsReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                const EvaluateOptions& options);

/// Runs the checkpoint on one image of any size and writes Î to `output`.
/// With `dump_intermediates`, also writes `<output stem>_intermediates.png`:
/// a 2 x 3 grid of M̂, Ĉ_w, Ĉ_b / Î_r, Î_i, Î. Returns the grid path if written.
std::optional<std::filesystem::path> remove_watermark(const std::filesystem::path& checkpoint,
                                                      const std::filesystem::path& input,
                                                      const std::filesystem::path& output,
                                                      bool dump_intermediates);

}  // namespace rirci::harness
