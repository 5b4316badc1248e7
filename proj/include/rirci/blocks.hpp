#pragma once

#include "rirci/image.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <utility>

namespace rirci::blocks {

using Size2 = std::pair<int64_t, int64_t>;

/// Splits N x C x H x W into non-overlapping ph x pw patches:
/// N x C x (H/ph * W/pw) x (ph * pw), patches in row-major grid order.
/// Throws ContractError if H or W is not a multiple of the patch size.
torch::Tensor partition(const torch::Tensor& x, Size2 patch);
/// Inverse of partition() for an H x W feature.
torch::Tensor merge(const torch::Tensor& parts, Size2 patch, int64_t height, int64_t width);

/// Reflection-pads bottom/right to multiples of (mh, mw).
torch::Tensor pad_to(const torch::Tensor& x, Size2 multiple);

/// Number of learnable scalars in a module tree.
int64_t parameter_count(const torch::nn::Module& m);

// ---------------------------------------------------------------------------
// Axis MLPs
// ---------------------------------------------------------------------------

/// Mixes values inside each b_h x b_w patch: the flattened intra-patch position
/// is the perceptron's feature axis, and the same two-layer perceptron is
/// shared by every patch and channel. Residual: y = x + mlp(x).
struct LocalMlpImpl : torch::nn::Module {
  LocalMlpImpl(Size2 block, int64_t hidden_ratio = 2);
  torch::Tensor forward(const torch::Tensor& x);

  /// Zeroes the output layer so the block starts as the identity.
  void zero_init_output();
  nlohmann::json config_json() const;

  Size2 block;
  int64_t hidden_ratio;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(LocalMlp);

/// Splits the feature into a g_h x g_w grid of cells and mixes the values found
/// at the same position of every cell (the cell index is the feature axis).
struct GlobalMlpImpl : torch::nn::Module {
  GlobalMlpImpl(Size2 grid, int64_t hidden_ratio = 2);
  torch::Tensor forward(const torch::Tensor& x);

  void zero_init_output();
  nlohmann::json config_json() const;

  Size2 grid;
  int64_t hidden_ratio;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(GlobalMlp);

// ---------------------------------------------------------------------------
// Spectral transform
// ---------------------------------------------------------------------------

/// rfft2 over H x W with real and imaginary parts stacked on channels:
/// N x C x H x W -> N x 2C x H x (W/2+1).
torch::Tensor fourier_forward(const torch::Tensor& x);
/// Inverse of fourier_forward() back to N x C x H x W.
torch::Tensor fourier_inverse(const torch::Tensor& stacked, int64_t height, int64_t width);

/// Frequency-domain 1x1 conv + per-channel norm + GELU between a forward and
/// an inverse FFT. Every output position depends on every input position.
struct SpectralTransformImpl : torch::nn::Module {
  explicit SpectralTransformImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  nlohmann::json config_json() const;

  int64_t channels;
  torch::nn::Conv2d conv{nullptr};
  torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(SpectralTransform);

// ---------------------------------------------------------------------------
// Concurrent spatial and channel squeeze-and-excitation
// ---------------------------------------------------------------------------

struct ScseImpl : torch::nn::Module {
  explicit ScseImpl(int64_t channels, int64_t reduction = 2);
  torch::Tensor forward(const torch::Tensor& x);
  /// Per-channel gates, N x C x 1 x 1.
  torch::Tensor channel_gate(const torch::Tensor& x);
  /// Per-position gates, N x 1 x H x W.
  torch::Tensor spatial_gate(const torch::Tensor& x);
  nlohmann::json config_json() const;

  int64_t channels;
  int64_t reduction;
  torch::nn::Linear squeeze{nullptr}, excite{nullptr};
  torch::nn::Conv2d spatial{nullptr};
};
TORCH_MODULE(Scse);

// ---------------------------------------------------------------------------
// Global and local context interaction
// ---------------------------------------------------------------------------

struct GlciConfig {
  int64_t channels = 64;
  Size2 local_block{8, 8};
  Size2 global_grid{8, 8};
  int64_t hidden_ratio = 2;
  /// false replaces the global->local scSE path with a 3x3 conv.
  bool use_scse = true;
  /// false replaces the local->global spectral path with a 3x3 conv.
  bool use_spectral = true;

  nlohmann::json to_json() const;
};

/// Local half -> LocalMlp, global half -> GlobalMlp; the spectral transform of
/// the local features is added into the global branch and scSE-gated global
/// features are added into the local branch; both halves are concatenated,
/// fused by a 1x1 conv and added back onto the input.
struct GlciImpl : torch::nn::Module {
  explicit GlciImpl(GlciConfig cfg);
  torch::Tensor forward(const torch::Tensor& x);
  nlohmann::json config_json() const;

  GlciConfig cfg;
  LocalMlp local{nullptr};
  GlobalMlp global{nullptr};
  torch::nn::AnyModule local_to_global;
  torch::nn::AnyModule global_to_local;
  torch::nn::Conv2d fuse{nullptr};
};
TORCH_MODULE(Glci);

// ---------------------------------------------------------------------------
// Alternatives used by ablation variants
// ---------------------------------------------------------------------------

/// Fast-Fourier-convolution residual block (LaMa-style local/global split).
struct FfcBlockImpl : torch::nn::Module {
  explicit FfcBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t channels;
  torch::nn::Conv2d l2l{nullptr}, g2l{nullptr}, l2g{nullptr};
  SpectralTransform g2g{nullptr};
  torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(FfcBlock);

/// Two 3x3 convs with a residual connection.
struct ResBlockImpl : torch::nn::Module {
  explicit ResBlockImpl(int64_t channels, bool smooth = false);
  torch::Tensor forward(const torch::Tensor& x);

  bool smooth;
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

// ---------------------------------------------------------------------------
// Non-local block
// ---------------------------------------------------------------------------

/// Embedded-Gaussian self-attention over all spatial positions with a residual
/// connection.
struct NonLocalBlockImpl : torch::nn::Module {
  explicit NonLocalBlockImpl(int64_t channels, int64_t inter_channels = 0);
  torch::Tensor forward(const torch::Tensor& x);
  /// Row-stochastic N x HW x HW attention map (rows index queries).
  torch::Tensor attention(const torch::Tensor& x);
  nlohmann::json config_json() const;

  int64_t channels;
  int64_t inter_channels;
  torch::nn::Conv2d theta{nullptr}, phi{nullptr}, g{nullptr}, out{nullptr};
};
TORCH_MODULE(NonLocalBlock);

// ---------------------------------------------------------------------------
// Bottleneck block selection for the restoration paths
// ---------------------------------------------------------------------------

enum class BottleneckKind {
  Glci,  ///< full block
  Ffc,   ///< FFC block instead of GLCI
  Conv,  ///< plain residual 3x3 convs instead of GLCI
};

std::string to_string(BottleneckKind k);
BottleneckKind bottleneck_from_string(const std::string& s);

torch::nn::AnyModule make_bottleneck(BottleneckKind kind, const GlciConfig& cfg);

}  // namespace rirci::blocks
