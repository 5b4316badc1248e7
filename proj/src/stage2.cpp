#include "rirci/stage2.hpp"

namespace rirci::stage2 {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor upsample_to(const torch::Tensor& x, int64_t h, int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kNearest));
}

void require_pair(const torch::Tensor& image, const torch::Tensor& mask, const char* what) {
  if (image.dim() != 4 || mask.dim() != 4 || image.size(1) != 3 || mask.size(1) != 1 ||
      image.size(0) != mask.size(0) || image.size(2) != mask.size(2) || image.size(3) != mask.size(3)) {
    throw ContractError(std::string(what) + ": expected N x 3 x H x W image and N x 1 x H x W mask");
  }
}

}  // namespace

std::string to_string(Paths p) {
  switch (p) {
    case Paths::Both: return "both";
    case Paths::RestoreOnly: return "restore";
    case Paths::ImagineOnly: return "imagine";
  }
  return "both";
}

Paths paths_from_string(const std::string& s) {
  if (s == "both") return Paths::Both;
  if (s == "restore") return Paths::RestoreOnly;
  if (s == "imagine") return Paths::ImagineOnly;
  throw ContractError("unknown path selection '" + s + "' (expected both, restore or imagine)");
}

blocks::GlciConfig Stage2Config::glci() const {
  blocks::GlciConfig g;
  g.channels = base_channels * 8;
  g.local_block = local_block;
  g.global_grid = global_grid;
  g.hidden_ratio = hidden_ratio;
  g.use_scse = use_scse;
  g.use_spectral = use_spectral;
  return g;
}

nlohmann::json Stage2Config::to_json() const {
  return {{"base_channels", base_channels},
          {"blocks", blocks},
          {"local_block", {local_block.first, local_block.second}},
          {"global_grid", {global_grid.first, global_grid.second}},
          {"hidden_ratio", hidden_ratio},
          {"bottleneck", blocks::to_string(bottleneck)},
          {"use_scse", use_scse},
          {"use_spectral", use_spectral},
          {"fusion_channels", fusion_channels},
          {"paths", to_string(paths)}};
}

Stage2Config Stage2Config::from_json(const nlohmann::json& j) {
  Stage2Config c;
  c.base_channels = j.at("base_channels").get<int64_t>();
  c.blocks = j.at("blocks").get<int64_t>();
  c.local_block = {j.at("local_block").at(0).get<int64_t>(), j.at("local_block").at(1).get<int64_t>()};
  c.global_grid = {j.at("global_grid").at(0).get<int64_t>(), j.at("global_grid").at(1).get<int64_t>()};
  c.hidden_ratio = j.at("hidden_ratio").get<int64_t>();
  c.bottleneck = blocks::bottleneck_from_string(j.at("bottleneck").get<std::string>());
  c.use_scse = j.at("use_scse").get<bool>();
  c.use_spectral = j.at("use_spectral").get<bool>();
  c.fusion_channels = j.at("fusion_channels").get<int64_t>();
  c.paths = paths_from_string(j.at("paths").get<std::string>());
  return c;
}

Stage2Output Stage2Output::clamped() const {
  Stage2Output c;
  if (restored.defined()) c.restored = restored.clamp(0.0, 1.0);
  if (imagined.defined()) c.imagined = imagined.clamp(0.0, 1.0);
  if (fused.defined()) c.fused = fused.clamp(0.0, 1.0);
  return c;
}

RestorationPathImpl::RestorationPathImpl(const Stage2Config& cfg) {
  const int64_t c = cfg.base_channels;
  if (c <= 0 || cfg.blocks < 0) throw ContractError("RestorationPath: invalid widths");
  stem = register_module("stem", conv3(4, c));
  down = register_module("down", nn::ModuleList());
  up = register_module("up", nn::ModuleList());
  for (int64_t k = 0; k < 3; ++k) down->push_back(conv3(c << k, c << (k + 1), 2));
  for (int64_t k = 3; k > 0; --k) up->push_back(conv3(c << k, c << (k - 1)));
  body = register_module("body", nn::Sequential());
  const auto glci = cfg.glci();
  for (int64_t b = 0; b < cfg.blocks; ++b) body->push_back(blocks::make_bottleneck(cfg.bottleneck, glci));
  head = register_module("head", conv3(c, 3));
}

torch::Tensor RestorationPathImpl::forward(const torch::Tensor& image, const torch::Tensor& mask) {
  auto x = torch::relu(stem(torch::cat({image, mask}, 1)));
  std::vector<std::pair<int64_t, int64_t>> sizes;
  for (const auto& d : *down) {
    sizes.emplace_back(x.size(2), x.size(3));
    x = torch::relu(d->as<nn::Conv2d>()->forward(x));
  }
  x = body->forward(x);
  for (size_t k = 0; k < up->size(); ++k) {
    const auto [h, w] = sizes[sizes.size() - 1 - k];
    x = torch::relu(up[k]->as<nn::Conv2d>()->forward(upsample_to(x, h, w)));
  }
  return image + head(x);
}

FusionHeadImpl::FusionHeadImpl(int64_t channels) {
  const int64_t c = channels;
  if (c <= 0) throw ContractError("FusionHead: channels must be positive");
  embed = register_module("embed", conv3(7, c));
  down1 = register_module("down1", conv3(c, 2 * c, 2));
  down2 = register_module("down2", conv3(2 * c, 4 * c, 2));
  attend = register_module("attend", blocks::NonLocalBlock(4 * c));
  up2 = register_module("up2", conv3(4 * c, 2 * c));
  up1 = register_module("up1", conv3(2 * c, c));
  head = register_module("head", conv3(c, 4));
}

torch::Tensor FusionHeadImpl::forward(const torch::Tensor& restored, const torch::Tensor& imagined,
                                      const torch::Tensor& mask) {
  auto x0 = torch::relu(embed(torch::cat({restored, imagined, mask}, 1)));
  auto x1 = torch::relu(down1(x0));
  auto x2 = torch::relu(down2(x1));
  x2 = attend(x2);
  auto y1 = torch::relu(up2(upsample_to(x2, x1.size(2), x1.size(3))));
  auto y0 = torch::relu(up1(upsample_to(y1, x0.size(2), x0.size(3))));
  auto out = head(y0);
  auto weight = torch::sigmoid(out.narrow(1, 0, 1));
  auto correction = out.narrow(1, 1, 3);
  return weight * restored + (1.0 - weight) * imagined + correction;
}

Stage2NetImpl::Stage2NetImpl(Stage2Config cfg_) : cfg(std::move(cfg_)) {
  if (cfg.paths != Paths::ImagineOnly) restore = register_module("restore", RestorationPath(cfg));
  if (cfg.paths != Paths::RestoreOnly) imagine = register_module("imagine", RestorationPath(cfg));
  fusion = register_module("fusion", FusionHead(cfg.fusion_channels));
}

torch::Tensor Stage2NetImpl::restore_path(const torch::Tensor& mask, const torch::Tensor& background_component) {
  if (!restore) throw ContractError("restore_path: disabled in this configuration");
  require_pair(background_component, mask, "restore_path");
  return restore(background_component, mask);
}

torch::Tensor Stage2NetImpl::imagine_path(const torch::Tensor& image, const torch::Tensor& mask) {
  if (!imagine) throw ContractError("imagine_path: disabled in this configuration");
  require_pair(image, mask, "imagine_path");
  return imagine((1.0 - mask) * image, mask);
}

torch::Tensor Stage2NetImpl::fuse(const torch::Tensor& restored, const torch::Tensor& imagined,
                                  const torch::Tensor& mask) {
  require_pair(restored, mask, "fuse");
  require_pair(imagined, mask, "fuse");
  return fusion(restored, imagined, mask);
}

Stage2Output Stage2NetImpl::forward(const torch::Tensor& image, const stage1::Stage1Output& s1) {
  Stage2Output out;
  if (restore) out.restored = restore_path(s1.mask, s1.background_component);
  if (imagine) out.imagined = imagine_path(image, s1.mask);
  // a disabled path is stood in for by the active one
  const auto& r = out.restored.defined() ? out.restored : out.imagined;
  const auto& i = out.imagined.defined() ? out.imagined : out.restored;
  out.fused = fuse(r, i, s1.mask);
  return out;
}

}  // namespace rirci::stage2
