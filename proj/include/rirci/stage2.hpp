#pragma once

#include "rirci/blocks.hpp"
#include "rirci/stage1.hpp"

namespace rirci::stage2 {

/// Which restoration sub-networks are active.
enum class Paths {
  Both,
  RestoreOnly,  ///< ablation #3
  ImagineOnly,  ///< ablation #4
};

std::string to_string(Paths p);
Paths paths_from_string(const std::string& s);

struct Stage2Config {
  /// Stem width; channels double at each of the three stride-2 convs.
  int64_t base_channels = 32;
  /// Bottleneck blocks per path (at 1/8 resolution).
  int64_t blocks = 6;
  blocks::Size2 local_block{8, 8};
  blocks::Size2 global_grid{8, 8};
  int64_t hidden_ratio = 2;
  blocks::BottleneckKind bottleneck = blocks::BottleneckKind::Glci;
  bool use_scse = true;
  bool use_spectral = true;
  int64_t fusion_channels = 32;
  Paths paths = Paths::Both;

  blocks::GlciConfig glci() const;
  nlohmann::json to_json() const;
  static Stage2Config from_json(const nlohmann::json& j);
};

/// Raw (unclamped) network outputs, N x 3 x H x W. `imagined` is undefined
/// under RestoreOnly and `restored` under ImagineOnly.
struct Stage2Output {
  torch::Tensor restored;
  torch::Tensor imagined;
  torch::Tensor fused;

  /// Copies with every defined image clamped to [0,1].
  Stage2Output clamped() const;
};

/// Stem conv, three stride-2 convs, a stack of bottleneck blocks, a mirrored
/// nearest-upsample stack and an RGB head. Predicts a correction that is added
/// onto the input image.
struct RestorationPathImpl : torch::nn::Module {
  explicit RestorationPathImpl(const Stage2Config& cfg);
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& mask);

  torch::nn::Conv2d stem{nullptr};
  torch::nn::ModuleList down{nullptr};
  torch::nn::Sequential body{nullptr};
  torch::nn::ModuleList up{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(RestorationPath);

/// Embeds [I_r, I_i, M] and attends at 1/4 resolution with a non-local block,
/// then decodes a blend weight between the two paths plus an RGB correction.
struct FusionHeadImpl : torch::nn::Module {
  explicit FusionHeadImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& restored, const torch::Tensor& imagined,
                        const torch::Tensor& mask);

  torch::nn::Conv2d embed{nullptr}, down1{nullptr}, down2{nullptr};
  blocks::NonLocalBlock attend{nullptr};
  torch::nn::Conv2d up2{nullptr}, up1{nullptr}, head{nullptr};
};
TORCH_MODULE(FusionHead);

struct Stage2NetImpl : torch::nn::Module {
  explicit Stage2NetImpl(Stage2Config cfg);

  /// Content restoration from [M, C_b].
  torch::Tensor restore_path(const torch::Tensor& mask, const torch::Tensor& background_component);
  /// Content imagination from [(1-M)J, M]; pixels with M == 1 never reach the network.
  torch::Tensor imagine_path(const torch::Tensor& image, const torch::Tensor& mask);
  torch::Tensor fuse(const torch::Tensor& restored, const torch::Tensor& imagined, const torch::Tensor& mask);

  Stage2Output forward(const torch::Tensor& image, const stage1::Stage1Output& s1);

  Stage2Config cfg;
  RestorationPath restore{nullptr};
  RestorationPath imagine{nullptr};
  FusionHead fusion{nullptr};
};
TORCH_MODULE(Stage2Net);

}  // namespace rirci::stage2
