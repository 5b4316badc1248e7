#pragma once

#include "rirci/model.hpp"

#include <array>
#include <filesystem>

namespace rirci::losses {

struct LossWeights {
  double lambda1 = 2.0;
  double lambda2 = 1.0;
  double lambda3 = 3.0;
  double gamma = 1.5;
  /// Opacity threshold splitting restoration/imagination emphasis.
  double alpha_threshold = 0.75;

  void validate() const;
};

enum class Provenance { Pretrained, FixedSeedRandom };

/// Frozen VGG16-topology feature extractor; the three stages are the
/// activations before the first three max-pooling layers (relu1_2, relu2_2,
/// relu3_3). Inputs in [0,1] are normalized with the recorded mean/std.
struct PerceptualExtractorImpl : torch::nn::Module {
  /// `width_divisor` shrinks every conv width (1 = VGG16 widths).
  PerceptualExtractorImpl(Provenance provenance, uint64_t seed = 0, int64_t width_divisor = 1);

  /// Loads VGG16 `features.*` weights from a torch archive whose keys use the
  /// torchvision names with '.' replaced by '__' (e.g. "features__0__weight").
  static std::shared_ptr<PerceptualExtractorImpl> pretrained(const std::filesystem::path& archive);
  /// Writes the weights in the layout pretrained() reads.
  void save(const std::filesystem::path& archive) const;

  std::array<torch::Tensor, 3> forward(const torch::Tensor& image);

  nlohmann::json provenance_json() const;

  Provenance provenance;
  uint64_t seed;
  int64_t width_divisor;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stdev{0.229, 0.224, 0.225};
  /// Conv layers in VGG16 `features` order (indices 0,2,5,7,10,12,14).
  std::vector<torch::nn::Conv2d> convs;
};
TORCH_MODULE(PerceptualExtractor);

/// Mean absolute difference.
torch::Tensor l1(const torch::Tensor& x, const torch::Tensor& y);
/// Mean of |M * (X - Y)| over all elements of X (M broadcasts over channels).
torch::Tensor masked_l1(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& m);
/// Sum over the three stages of the mean absolute feature difference.
torch::Tensor perceptual(const torch::Tensor& x, const torch::Tensor& y, PerceptualExtractor& extractor);
/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
torch::Tensor mask_bce(const torch::Tensor& pred, const torch::Tensor& target, double eps = 1e-7);

/// Ground truth for one batch, N x C x H x W.
struct Targets {
  torch::Tensor I;    // clean background (also the target for I_r and I_i)
  torch::Tensor A;    // opacity, N x 1 x H x W
  torch::Tensor M;    // A > 0
  torch::Tensor C_b;  // (1 - A) * I
};

struct LossBreakdown {
  torch::Tensor L_b, L_r, L_i, L_f, L_m, total;

  /// {L_b, L_r, L_i, L_f, L_m, L} as doubles.
  nlohmann::json to_json() const;
};

/// L = L_b + L_r + L_i + L_f + lambda3 * L_m. Terms of a disabled stage-2
/// path are zero. When stage 1 predicts the image directly (ablation #1) L_b
/// targets I instead of C_b.
LossBreakdown total_loss(const Targets& t, const stage1::Stage1Output& s1, const stage2::Stage2Output& s2,
                         const LossWeights& w, PerceptualExtractor& extractor, bool stage1_predicts_image = false);

/// Stage-1-only objective L_b + lambda3 * L_m (first phase of two-phase training).
LossBreakdown stage1_loss(const Targets& t, const stage1::Stage1Output& s1, const LossWeights& w,
                          PerceptualExtractor& extractor, bool stage1_predicts_image = false);

}  // namespace rirci::losses
