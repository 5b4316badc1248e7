#include "rirci/blocks.hpp"

namespace rirci::blocks {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

torch::Tensor crop(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return x.narrow(2, 0, h).narrow(3, 0, w);
}

void require_nchw(const torch::Tensor& x, const char* what) {
  if (x.dim() != 4 || x.size(0) <= 0 || x.size(1) <= 0 || x.size(2) <= 0 || x.size(3) <= 0) {
    throw ContractError(std::string(what) + ": expected a non-empty N x C x H x W tensor");
  }
}

}  // namespace

torch::Tensor partition(const torch::Tensor& x, Size2 patch) {
  require_nchw(x, "partition");
  const auto [ph, pw] = patch;
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (ph <= 0 || pw <= 0 || h % ph != 0 || w % pw != 0) {
    throw ContractError("partition: " + std::to_string(h) + "x" + std::to_string(w) +
                        " is not divisible into " + std::to_string(ph) + "x" + std::to_string(pw) +
                        " patches");
  }
  const int64_t gh = h / ph, gw = w / pw;
  return x.view({n, c, gh, ph, gw, pw}).permute({0, 1, 2, 4, 3, 5}).reshape({n, c, gh * gw, ph * pw});
}

torch::Tensor merge(const torch::Tensor& parts, Size2 patch, int64_t height, int64_t width) {
  const auto [ph, pw] = patch;
  const int64_t n = parts.size(0), c = parts.size(1);
  const int64_t gh = height / ph, gw = width / pw;
  return parts.reshape({n, c, gh, gw, ph, pw}).permute({0, 1, 2, 4, 3, 5}).reshape({n, c, height, width});
}

torch::Tensor pad_to(const torch::Tensor& x, Size2 multiple) {
  const int64_t h = x.size(2), w = x.size(3);
  const int64_t ph = (multiple.first - h % multiple.first) % multiple.first;
  const int64_t pw = (multiple.second - w % multiple.second) % multiple.second;
  if (ph == 0 && pw == 0) return x;
  const bool can_reflect = ph < h && pw < w;
  F::PadFuncOptions::mode_t mode = torch::kReflect;
  if (!can_reflect) mode = torch::kReplicate;
  return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(mode));
}

int64_t parameter_count(const nn::Module& m) {
  int64_t total = 0;
  for (const auto& p : m.parameters()) total += p.numel();
  return total;
}

// ---------------------------------------------------------------------------

LocalMlpImpl::LocalMlpImpl(Size2 block_, int64_t hidden_ratio_) : block(block_), hidden_ratio(hidden_ratio_) {
  if (block.first <= 0 || block.second <= 0 || hidden_ratio <= 0) {
    throw ContractError("LocalMlp: block and hidden ratio must be positive");
  }
  const int64_t p = block.first * block.second;
  fc1 = register_module("fc1", nn::Linear(p, p * hidden_ratio));
  fc2 = register_module("fc2", nn::Linear(p * hidden_ratio, p));
}

torch::Tensor LocalMlpImpl::forward(const torch::Tensor& x) {
  require_nchw(x, "LocalMlp");
  const int64_t h = x.size(2), w = x.size(3);
  auto padded = pad_to(x, block);
  auto parts = partition(padded, block);  // N C patches positions
  auto mixed = fc2(F::gelu(fc1(parts)));
  auto y = padded + merge(mixed, block, padded.size(2), padded.size(3));
  return crop(y, h, w);
}

void LocalMlpImpl::zero_init_output() {
  torch::NoGradGuard ng;
  fc2->weight.zero_();
  fc2->bias.zero_();
}

nlohmann::json LocalMlpImpl::config_json() const {
  return {{"type", "local_mlp"},
          {"block", {block.first, block.second}},
          {"hidden_ratio", hidden_ratio},
          {"parameters", parameter_count(*this)}};
}

GlobalMlpImpl::GlobalMlpImpl(Size2 grid_, int64_t hidden_ratio_) : grid(grid_), hidden_ratio(hidden_ratio_) {
  if (grid.first <= 0 || grid.second <= 0 || hidden_ratio <= 0) {
    throw ContractError("GlobalMlp: grid and hidden ratio must be positive");
  }
  const int64_t g = grid.first * grid.second;
  fc1 = register_module("fc1", nn::Linear(g, g * hidden_ratio));
  fc2 = register_module("fc2", nn::Linear(g * hidden_ratio, g));
}

torch::Tensor GlobalMlpImpl::forward(const torch::Tensor& x) {
  require_nchw(x, "GlobalMlp");
  const int64_t h = x.size(2), w = x.size(3);
  auto padded = pad_to(x, grid);
  const Size2 cell{padded.size(2) / grid.first, padded.size(3) / grid.second};
  // N C cells positions -> N C positions cells so the cell axis is mixed
  auto parts = partition(padded, cell).transpose(2, 3);
  auto mixed = fc2(F::gelu(fc1(parts))).transpose(2, 3);
  auto y = padded + merge(mixed, cell, padded.size(2), padded.size(3));
  return crop(y, h, w);
}

void GlobalMlpImpl::zero_init_output() {
  torch::NoGradGuard ng;
  fc2->weight.zero_();
  fc2->bias.zero_();
}

nlohmann::json GlobalMlpImpl::config_json() const {
  return {{"type", "global_mlp"},
          {"grid", {grid.first, grid.second}},
          {"hidden_ratio", hidden_ratio},
          {"parameters", parameter_count(*this)}};
}

// ---------------------------------------------------------------------------

torch::Tensor fourier_forward(const torch::Tensor& x) {
  auto spec = torch::fft::rfft2(x, c10::nullopt, {-2, -1}, "ortho");
  return torch::cat({torch::real(spec), torch::imag(spec)}, 1);
}

torch::Tensor fourier_inverse(const torch::Tensor& stacked, int64_t height, int64_t width) {
  auto halves = stacked.chunk(2, 1);
  auto spec = torch::complex(halves[0].contiguous(), halves[1].contiguous());
  return torch::fft::irfft2(spec, std::vector<int64_t>{height, width}, {-2, -1}, "ortho");
}

SpectralTransformImpl::SpectralTransformImpl(int64_t channels_) : channels(channels_) {
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(2 * channels, 2 * channels, 1)));
  norm = register_module("norm", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * channels).affine(true)));
}

torch::Tensor SpectralTransformImpl::forward(const torch::Tensor& x) {
  require_nchw(x, "SpectralTransform");
  if (x.size(2) < 2 || x.size(3) < 2) throw ContractError("SpectralTransform: spatial dims must be >= 2");
  auto freq = fourier_forward(x);
  freq = F::gelu(norm(conv(freq)));
  return fourier_inverse(freq, x.size(2), x.size(3));
}

nlohmann::json SpectralTransformImpl::config_json() const {
  return {{"type", "spectral_transform"}, {"channels", channels}, {"parameters", parameter_count(*this)}};
}

// ---------------------------------------------------------------------------

ScseImpl::ScseImpl(int64_t channels_, int64_t reduction_) : channels(channels_), reduction(reduction_) {
  const int64_t mid = std::max<int64_t>(1, channels / reduction);
  squeeze = register_module("squeeze", nn::Linear(channels, mid));
  excite = register_module("excite", nn::Linear(mid, channels));
  spatial = register_module("spatial", nn::Conv2d(nn::Conv2dOptions(channels, 1, 1)));
}

torch::Tensor ScseImpl::channel_gate(const torch::Tensor& x) {
  auto pooled = x.mean({2, 3});
  auto gate = torch::sigmoid(excite(F::gelu(squeeze(pooled))));
  return gate.view({x.size(0), x.size(1), 1, 1});
}

torch::Tensor ScseImpl::spatial_gate(const torch::Tensor& x) { return torch::sigmoid(spatial(x)); }

torch::Tensor ScseImpl::forward(const torch::Tensor& x) {
  require_nchw(x, "Scse");
  return x * channel_gate(x) + x * spatial_gate(x);
}

nlohmann::json ScseImpl::config_json() const {
  return {{"type", "scse"}, {"channels", channels}, {"reduction", reduction},
          {"parameters", parameter_count(*this)}};
}

// ---------------------------------------------------------------------------

nlohmann::json GlciConfig::to_json() const {
  return {{"channels", channels},
          {"local_block", {local_block.first, local_block.second}},
          {"global_grid", {global_grid.first, global_grid.second}},
          {"hidden_ratio", hidden_ratio},
          {"use_scse", use_scse},
          {"use_spectral", use_spectral}};
}

GlciImpl::GlciImpl(GlciConfig cfg_) : cfg(std::move(cfg_)) {
  if (cfg.channels <= 0 || cfg.channels % 2 != 0) {
    throw ContractError("Glci: channel count must be positive and even, got " + std::to_string(cfg.channels));
  }
  const int64_t half = cfg.channels / 2;
  local = register_module("local", LocalMlp(cfg.local_block, cfg.hidden_ratio));
  global = register_module("global", GlobalMlp(cfg.global_grid, cfg.hidden_ratio));
  if (cfg.use_spectral) {
    local_to_global = nn::AnyModule(SpectralTransform(half));
  } else {
    local_to_global = nn::AnyModule(conv(half, half, 3));
  }
  if (cfg.use_scse) {
    global_to_local = nn::AnyModule(Scse(half));
  } else {
    global_to_local = nn::AnyModule(conv(half, half, 3));
  }
  register_module("local_to_global", local_to_global.ptr());
  register_module("global_to_local", global_to_local.ptr());
  fuse = register_module("fuse", nn::Conv2d(nn::Conv2dOptions(cfg.channels, cfg.channels, 1)));
}

torch::Tensor GlciImpl::forward(const torch::Tensor& x) {
  require_nchw(x, "Glci");
  if (x.size(1) != cfg.channels) throw ContractError("Glci: channel count differs from config");
  auto halves = x.chunk(2, 1);
  auto l = local(halves[0]);
  auto g = global(halves[1]);
  auto l_out = l + global_to_local.forward(g);
  auto g_out = g + local_to_global.forward(l);
  return x + fuse(torch::cat({l_out, g_out}, 1));
}

nlohmann::json GlciImpl::config_json() const {
  auto j = cfg.to_json();
  j["type"] = "glci";
  j["parameters"] = parameter_count(*this);
  return j;
}

// ---------------------------------------------------------------------------

FfcBlockImpl::FfcBlockImpl(int64_t channels_) : channels(channels_) {
  if (channels <= 0 || channels % 2 != 0) throw ContractError("FfcBlock: channel count must be even");
  const int64_t half = channels / 2;
  l2l = register_module("l2l", conv(half, half, 3));
  g2l = register_module("g2l", conv(half, half, 3));
  l2g = register_module("l2g", conv(half, half, 3));
  g2g = register_module("g2g", SpectralTransform(half));
  norm = register_module("norm", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true)));
}

torch::Tensor FfcBlockImpl::forward(const torch::Tensor& x) {
  auto halves = x.chunk(2, 1);
  auto l = l2l(halves[0]) + g2l(halves[1]);
  auto g = l2g(halves[0]) + g2g(halves[1]);
  return x + F::gelu(norm(torch::cat({l, g}, 1)));
}

ResBlockImpl::ResBlockImpl(int64_t channels, bool smooth_) : smooth(smooth_) {
  conv1 = register_module("conv1", conv(channels, channels, 3));
  conv2 = register_module("conv2", conv(channels, channels, 3));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1(x);
  h = smooth ? F::gelu(h) : torch::relu(h);
  return x + conv2(h);
}

// ---------------------------------------------------------------------------

NonLocalBlockImpl::NonLocalBlockImpl(int64_t channels_, int64_t inter_channels_)
    : channels(channels_), inter_channels(inter_channels_ > 0 ? inter_channels_ : std::max<int64_t>(1, channels_ / 2)) {
  theta = register_module("theta", nn::Conv2d(nn::Conv2dOptions(channels, inter_channels, 1)));
  phi = register_module("phi", nn::Conv2d(nn::Conv2dOptions(channels, inter_channels, 1)));
  g = register_module("g", nn::Conv2d(nn::Conv2dOptions(channels, inter_channels, 1)));
  out = register_module("out", nn::Conv2d(nn::Conv2dOptions(inter_channels, channels, 1)));
}

torch::Tensor NonLocalBlockImpl::attention(const torch::Tensor& x) {
  require_nchw(x, "NonLocalBlock");
  const int64_t n = x.size(0);
  auto q = theta(x).view({n, inter_channels, -1}).transpose(1, 2);  // N HW Ci
  auto k = phi(x).view({n, inter_channels, -1});                    // N Ci HW
  return torch::softmax(torch::bmm(q, k), -1);
}

torch::Tensor NonLocalBlockImpl::forward(const torch::Tensor& x) {
  const int64_t n = x.size(0), h = x.size(2), w = x.size(3);
  auto attn = attention(x);
  auto v = g(x).view({n, inter_channels, -1}).transpose(1, 2);  // N HW Ci
  auto y = torch::bmm(attn, v).transpose(1, 2).reshape({n, inter_channels, h, w});
  return x + out(y);
}

nlohmann::json NonLocalBlockImpl::config_json() const {
  return {{"type", "non_local"}, {"channels", channels}, {"inter_channels", inter_channels},
          {"parameters", parameter_count(*this)}};
}

// ---------------------------------------------------------------------------

std::string to_string(BottleneckKind k) {
  switch (k) {
    case BottleneckKind::Glci: return "glci";
    case BottleneckKind::Ffc: return "ffc";
    case BottleneckKind::Conv: return "conv";
  }
  return "glci";
}

BottleneckKind bottleneck_from_string(const std::string& s) {
  if (s == "glci") return BottleneckKind::Glci;
  if (s == "ffc") return BottleneckKind::Ffc;
  if (s == "conv") return BottleneckKind::Conv;
  throw ContractError("unknown bottleneck block '" + s + "' (expected glci, ffc or conv)");
}

nn::AnyModule make_bottleneck(BottleneckKind kind, const GlciConfig& cfg) {
  switch (kind) {
    case BottleneckKind::Glci: return nn::AnyModule(Glci(cfg));
    case BottleneckKind::Ffc: return nn::AnyModule(FfcBlock(cfg.channels));
    case BottleneckKind::Conv: return nn::AnyModule(ResBlock(cfg.channels, true));
  }
  return nn::AnyModule(Glci(cfg));
}

}  // namespace rirci::blocks
