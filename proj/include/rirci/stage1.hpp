#pragma once

#include "rirci/blocks.hpp"

#include <array>
#include <vector>

namespace rirci::stage1 {

struct Stage1Config {
  std::array<int64_t, 5> widths{32, 64, 128, 256, 512};
  /// Number of iterative mask refinement units.
  int64_t refine_steps = 3;
  /// Ablation #1: the component branch predicts the watermark-free image
  /// instead of the watermark component.
  bool predict_image = false;

  nlohmann::json to_json() const;
  static Stage1Config from_json(const nlohmann::json& j);
};

/// All tensors are N x C x H x W.
struct Stage1Output {
  torch::Tensor mask_logits;           // N x 1 x H x W
  torch::Tensor mask;                  // sigmoid(mask_logits)
  torch::Tensor watermark_component;   // N x 3 x H x W, in [0,1]
  torch::Tensor background_component;  // J - mask * watermark_component
  /// Masks before the final refinement step, coarse to fine (unsupervised).
  std::vector<torch::Tensor> intermediate_masks;

  Stage1Output detached() const;
};

/// C_b = J - M * C_w.
torch::Tensor compose_background(const torch::Tensor& image, const torch::Tensor& mask,
                                 const torch::Tensor& watermark_component);

/// One encoder stage: optional stride-2 conv, then a residual block.
struct EncoderStageImpl : torch::nn::Module {
  EncoderStageImpl(int64_t in, int64_t out, bool downsample);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  blocks::ResBlock res{nullptr};
};
TORCH_MODULE(EncoderStage);

/// Nearest-neighbour x2 upsampling + conv, then fusion with a skip feature.
struct UpStageImpl : torch::nn::Module {
  UpStageImpl(int64_t in, int64_t skip, int64_t out);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip);

  torch::nn::Conv2d up{nullptr}, fuse{nullptr};
};
TORCH_MODULE(UpStage);

/// conv stack taking [features, previous soft mask] and emitting a residual
/// update to the mask logits.
struct MaskRefinerImpl : torch::nn::Module {
  explicit MaskRefinerImpl(int64_t feature_channels);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& logits);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(MaskRefiner);

/// U-shape network with a shared decoding block and two decoding branches
/// (mask and watermark component). Input sides must be multiples of 16.
struct Stage1NetImpl : torch::nn::Module {
  explicit Stage1NetImpl(Stage1Config cfg);

  /// Five feature maps; level k has spatial size (H/2^k, W/2^k).
  std::vector<torch::Tensor> encode(const torch::Tensor& image);
  Stage1Output forward(const torch::Tensor& image);

  Stage1Config cfg;
  torch::nn::ModuleList encoder{nullptr};
  blocks::ResBlock shared_bottom{nullptr};
  UpStage shared_up{nullptr};
  blocks::ResBlock shared_res{nullptr};
  torch::nn::ModuleList mask_up{nullptr};
  torch::nn::Conv2d mask_head{nullptr};
  torch::nn::ModuleList refiners{nullptr};
  torch::nn::ModuleList component_up{nullptr};
  torch::nn::Conv2d component_head{nullptr};
};
TORCH_MODULE(Stage1Net);

}  // namespace rirci::stage1
