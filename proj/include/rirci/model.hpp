#pragma once

#include "rirci/stage1.hpp"
#include "rirci/stage2.hpp"

#include <filesystem>
#include <map>

namespace rirci {

struct ModelConfig {
  stage1::Stage1Config stage1;
  stage2::Stage2Config stage2;
  /// Blocks gradients from stage 2 into stage 1.
  bool detach_stage1 = false;

  /// Reduced widths for desk-scale experiments (K = 2 bottleneck blocks).
  static ModelConfig tiny();

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Stable hash of the architecture-defining fields.
  std::string fingerprint() const;
};

struct ModelOutput {
  stage1::Stage1Output stage1;
  stage2::Stage2Output stage2;
};

/// Two-stage watermark removal network.
struct RirciModelImpl : torch::nn::Module {
  explicit RirciModelImpl(ModelConfig cfg);

  /// Input sides must be multiples of 16.
  ModelOutput forward(const torch::Tensor& image);
  /// Reflection-pads to a multiple of 16, runs forward(), and crops every
  /// output back to the input size.
  ModelOutput forward_padded(const torch::Tensor& image);

  ModelConfig cfg;
  stage1::Stage1Net stage1{nullptr};
  stage2::Stage2Net stage2{nullptr};
};
TORCH_MODULE(RirciModel);

/// Checkpoint record: named parameters and buffers, the model config and its
/// fingerprint, plus free-form training metadata.
struct CheckpointMeta {
  int64_t step = 0;
  int64_t epoch = 0;
  double best_val_psnr = 0.0;
  std::string extra;  // JSON text
};

/// Raised when a checkpoint was produced by a different architecture.
class FingerprintMismatch : public std::runtime_error {
 public:
  FingerprintMismatch(const std::string& msg, std::string diff)
      : std::runtime_error(msg), diff_(std::move(diff)) {}
  const std::string& diff() const { return diff_; }

 private:
  std::string diff_;
};

void save_checkpoint(RirciModel& model, const CheckpointMeta& meta, const std::filesystem::path& path);

/// Reads the stored model config without loading weights.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// Loads weights into `model`; throws FingerprintMismatch (with a readable
/// diff of the two configs) if the checkpoint belongs to another architecture.
CheckpointMeta load_checkpoint(RirciModel& model, const std::filesystem::path& path);

/// Lines describing fields whose values differ between two JSON objects.
std::string json_diff(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix = "");

/// Imports third-party weights from a torch archive. `name_map` maps external
/// tensor names to this model's parameter names; unmapped names are ignored.
/// Returns the number of tensors copied. Shape mismatches throw ContractError.
int64_t import_weights(torch::nn::Module& model, const std::filesystem::path& archive,
                       const std::map<std::string, std::string>& name_map);

}  // namespace rirci
