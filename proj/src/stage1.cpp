#include "rirci/stage1.hpp"

namespace rirci::stage1 {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor resize_mask(const torch::Tensor& mask, int64_t h, int64_t w) {
  if (mask.size(2) == h && mask.size(3) == w) return mask;
  return F::adaptive_avg_pool2d(mask, F::AdaptiveAvgPool2dFuncOptions({h, w}));
}

}  // namespace

nlohmann::json Stage1Config::to_json() const {
  return {{"widths", widths}, {"refine_steps", refine_steps}, {"predict_image", predict_image}};
}

Stage1Config Stage1Config::from_json(const nlohmann::json& j) {
  Stage1Config c;
  c.widths = j.at("widths").get<std::array<int64_t, 5>>();
  c.refine_steps = j.at("refine_steps").get<int64_t>();
  c.predict_image = j.at("predict_image").get<bool>();
  return c;
}

Stage1Output Stage1Output::detached() const {
  Stage1Output d;
  d.mask_logits = mask_logits.detach();
  d.mask = mask.detach();
  d.watermark_component = watermark_component.detach();
  d.background_component = background_component.detach();
  for (const auto& m : intermediate_masks) d.intermediate_masks.push_back(m.detach());
  return d;
}

torch::Tensor compose_background(const torch::Tensor& image, const torch::Tensor& mask,
                                 const torch::Tensor& watermark_component) {
  return image - mask * watermark_component;
}

EncoderStageImpl::EncoderStageImpl(int64_t in, int64_t out, bool downsample) {
  conv = register_module("conv", conv3(in, out, downsample ? 2 : 1));
  res = register_module("res", blocks::ResBlock(out));
}

torch::Tensor EncoderStageImpl::forward(const torch::Tensor& x) { return res(torch::relu(conv(x))); }

UpStageImpl::UpStageImpl(int64_t in, int64_t skip, int64_t out) {
  up = register_module("up", conv3(in, out));
  fuse = register_module("fuse", conv3(out + skip, out));
}

torch::Tensor UpStageImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  auto u = F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                 .mode(torch::kNearest));
  u = torch::relu(up(u));
  return torch::relu(fuse(torch::cat({u, skip}, 1)));
}

MaskRefinerImpl::MaskRefinerImpl(int64_t feature_channels) {
  conv1 = register_module("conv1", conv3(feature_channels + 1, feature_channels));
  conv2 = register_module("conv2", conv3(feature_channels, 1));
}

torch::Tensor MaskRefinerImpl::forward(const torch::Tensor& features, const torch::Tensor& logits) {
  auto h = torch::relu(conv1(torch::cat({features, torch::sigmoid(logits)}, 1)));
  return logits + conv2(h);
}

Stage1NetImpl::Stage1NetImpl(Stage1Config cfg_) : cfg(cfg_) {
  const auto& w = cfg.widths;
  for (auto c : w) {
    if (c <= 0) throw ContractError("Stage1Net: widths must be positive");
  }
  if (cfg.refine_steps < 0) throw ContractError("Stage1Net: refine_steps must be >= 0");

  encoder = register_module("encoder", nn::ModuleList());
  encoder->push_back(EncoderStage(3, w[0], false));
  for (size_t k = 1; k < w.size(); ++k) encoder->push_back(EncoderStage(w[k - 1], w[k], true));

  shared_bottom = register_module("shared_bottom", blocks::ResBlock(w[4]));
  shared_up = register_module("shared_up", UpStage(w[4], w[3], w[3]));
  shared_res = register_module("shared_res", blocks::ResBlock(w[3]));

  mask_up = register_module("mask_up", nn::ModuleList());
  component_up = register_module("component_up", nn::ModuleList());
  for (int k = 2; k >= 0; --k) {
    mask_up->push_back(UpStage(w[k + 1], w[k], w[k]));
    component_up->push_back(UpStage(w[k + 1], w[k], w[k]));
  }
  mask_head = register_module("mask_head", nn::Conv2d(nn::Conv2dOptions(w[0], 1, 1)));
  refiners = register_module("refiners", nn::ModuleList());
  for (int64_t s = 0; s < cfg.refine_steps; ++s) refiners->push_back(MaskRefiner(w[0]));
  component_head = register_module("component_head", nn::Conv2d(nn::Conv2dOptions(w[0], 3, 1)));
}

std::vector<torch::Tensor> Stage1NetImpl::encode(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) throw ContractError("Stage1Net: expected N x 3 x H x W input");
  if (image.size(2) % 16 != 0 || image.size(3) % 16 != 0) {
    throw ContractError("Stage1Net: input sides must be multiples of 16 (pad first)");
  }
  std::vector<torch::Tensor> levels;
  auto x = image;
  for (const auto& stage : *encoder) {
    x = stage->as<EncoderStage>()->forward(x);
    levels.push_back(x);
  }
  return levels;
}

Stage1Output Stage1NetImpl::forward(const torch::Tensor& image) {
  const auto levels = encode(image);
  auto shared = shared_res(shared_up(shared_bottom(levels[4]), levels[3]));

  Stage1Output out;
  auto m = shared;
  for (size_t i = 0; i < mask_up->size(); ++i) {
    m = mask_up[i]->as<UpStage>()->forward(m, levels[2 - i]);
  }
  auto logits = mask_head(m);
  for (const auto& r : *refiners) {
    out.intermediate_masks.push_back(torch::sigmoid(logits));
    logits = r->as<MaskRefiner>()->forward(m, logits);
  }
  out.mask_logits = logits;
  out.mask = torch::sigmoid(logits);

  // the component branch is gated by the current mask at every decoder level
  auto c = shared;
  for (size_t i = 0; i < component_up->size(); ++i) {
    c = component_up[i]->as<UpStage>()->forward(c, levels[2 - i]);
    c = c * resize_mask(out.mask, c.size(2), c.size(3));
  }
  auto component = torch::sigmoid(component_head(c));
  if (cfg.predict_image) {
    out.background_component = component;
    out.watermark_component = image - component;
  } else {
    out.watermark_component = component;
    out.background_component = compose_background(image, out.mask, component);
  }
  return out;
}

}  // namespace rirci::stage1
