#include "rirci/losses.hpp"

#include <cmath>

namespace rirci::losses {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

constexpr std::array<int64_t, 7> kVggWidths{64, 64, 128, 128, 256, 256, 256};
constexpr std::array<int, 7> kVggIndices{0, 2, 5, 7, 10, 12, 14};

void require_same(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
  if (!x.defined() || !y.defined() || x.sizes() != y.sizes()) {
    throw ContractError(std::string(what) + ": shape mismatch");
  }
}

torch::Tensor max_pool(const torch::Tensor& x) {
  // ceil mode keeps 1x1 maps alive; identical to floor mode for even sizes
  return F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2).ceil_mode(true));
}

}  // namespace

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || gamma < 0) throw ContractError("loss weights must be >= 0");
  if (!(alpha_threshold > 0.0 && alpha_threshold < 1.0)) throw ContractError("alpha threshold must lie in (0,1)");
}

PerceptualExtractorImpl::PerceptualExtractorImpl(Provenance provenance_, uint64_t seed_, int64_t width_divisor_)
    : provenance(provenance_), seed(seed_), width_divisor(width_divisor_) {
  if (width_divisor <= 0) throw ContractError("PerceptualExtractor: width divisor must be positive");
  // seeded generator so the random provenance is reproducible regardless of global RNG state
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int64_t in = 3;
  for (size_t i = 0; i < kVggWidths.size(); ++i) {
    const int64_t out = std::max<int64_t>(1, kVggWidths[i] / width_divisor);
    auto conv = nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1));
    {
      torch::NoGradGuard ng;
      const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));  // He-uniform
      conv->weight.uniform_(-bound, bound, gen);
      conv->bias.zero_();
    }
    convs.push_back(register_module("features__" + std::to_string(kVggIndices[i]), conv));
    in = out;
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::shared_ptr<PerceptualExtractorImpl> PerceptualExtractorImpl::pretrained(const std::filesystem::path& archive) {
  auto ex = std::make_shared<PerceptualExtractorImpl>(Provenance::Pretrained, 0, 1);
  if (!std::filesystem::exists(archive)) throw IoError("no such extractor archive: " + archive.string());
  torch::serialize::InputArchive ar;
  ar.load_from(archive.string());
  torch::NoGradGuard ng;
  for (size_t i = 0; i < ex->convs.size(); ++i) {
    const auto base = "features__" + std::to_string(kVggIndices[i]);
    torch::Tensor w, b;
    if (!ar.try_read(base + "__weight", w) || !ar.try_read(base + "__bias", b)) {
      throw FormatError("extractor archive lacks " + base);
    }
    if (w.sizes() != ex->convs[i]->weight.sizes()) throw FormatError("extractor archive: wrong shape for " + base);
    ex->convs[i]->weight.copy_(w);
    ex->convs[i]->bias.copy_(b);
  }
  return ex;
}

void PerceptualExtractorImpl::save(const std::filesystem::path& archive) const {
  torch::serialize::OutputArchive ar;
  for (size_t i = 0; i < convs.size(); ++i) {
    const auto base = "features__" + std::to_string(kVggIndices[i]);
    ar.write(base + "__weight", convs[i]->weight.detach());
    ar.write(base + "__bias", convs[i]->bias.detach());
  }
  ar.save_to(archive.string());
}

std::array<torch::Tensor, 3> PerceptualExtractorImpl::forward(const torch::Tensor& image) {
  auto opts = image.options();
  auto m = torch::tensor({mean[0], mean[1], mean[2]}, opts).view({1, 3, 1, 1});
  auto s = torch::tensor({stdev[0], stdev[1], stdev[2]}, opts).view({1, 3, 1, 1});
  auto x = (image - m) / s;
  std::array<torch::Tensor, 3> feats;
  x = torch::relu(convs[0](x));
  x = torch::relu(convs[1](x));
  feats[0] = x;
  x = max_pool(x);
  x = torch::relu(convs[2](x));
  x = torch::relu(convs[3](x));
  feats[1] = x;
  x = max_pool(x);
  x = torch::relu(convs[4](x));
  x = torch::relu(convs[5](x));
  x = torch::relu(convs[6](x));
  feats[2] = x;
  return feats;
}

nlohmann::json PerceptualExtractorImpl::provenance_json() const {
  return {{"provenance", provenance == Provenance::Pretrained ? "pretrained" : "fixed-seed-random"},
          {"seed", seed},
          {"width_divisor", width_divisor},
          {"mean", mean},
          {"std", stdev},
          {"stages", {"relu1_2", "relu2_2", "relu3_3"}}};
}

torch::Tensor l1(const torch::Tensor& x, const torch::Tensor& y) {
  require_same(x, y, "l1");
  return (x - y).abs().mean();
}

torch::Tensor masked_l1(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& m) {
  require_same(x, y, "masked_l1");
  bool fits = m.dim() <= x.dim();
  for (int64_t k = 1; fits && k <= m.dim(); ++k) {
    const auto ms = m.size(-k);
    fits = ms == 1 || ms == x.size(-k);
  }
  if (!fits) throw ContractError("masked_l1: mask does not broadcast to the image");
  return (m * (x - y)).abs().mean();
}

torch::Tensor perceptual(const torch::Tensor& x, const torch::Tensor& y, PerceptualExtractor& extractor) {
  if (!extractor) throw ContractError("perceptual: extractor not initialized");
  require_same(x, y, "perceptual");
  const auto fx = extractor(x);
  const auto fy = extractor(y);
  auto total = (fx[0] - fy[0]).abs().mean();
  for (size_t k = 1; k < fx.size(); ++k) total = total + (fx[k] - fy[k]).abs().mean();
  return total;
}

torch::Tensor mask_bce(const torch::Tensor& pred, const torch::Tensor& target, double eps) {
  require_same(pred, target, "mask_bce");
  auto p = pred.clamp(eps, 1.0 - eps);
  return -(target * torch::log(p) + (1.0 - target) * torch::log(1.0 - p)).mean();
}

nlohmann::json LossBreakdown::to_json() const {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  return {{"L_b", v(L_b)}, {"L_r", v(L_r)}, {"L_i", v(L_i)}, {"L_f", v(L_f)}, {"L_m", v(L_m)}, {"L", v(total)}};
}

namespace {

torch::Tensor background_term(const Targets& t, const stage1::Stage1Output& s1, const LossWeights& w,
                              PerceptualExtractor& extractor, bool predicts_image) {
  const auto& target = predicts_image ? t.I : t.C_b;
  return w.lambda1 * masked_l1(s1.background_component, target, t.M) +
         w.lambda2 * perceptual(s1.background_component, target, extractor);
}

torch::Tensor image_term(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& weight_mask,
                         const LossWeights& w, PerceptualExtractor& extractor) {
  return w.lambda1 * (masked_l1(pred, target, weight_mask) + w.gamma * l1(pred, target)) +
         w.lambda2 * perceptual(pred, target, extractor);
}

}  // namespace

LossBreakdown stage1_loss(const Targets& t, const stage1::Stage1Output& s1, const LossWeights& w,
                          PerceptualExtractor& extractor, bool stage1_predicts_image) {
  w.validate();
  if (!t.A.defined() || !t.M.defined()) throw ContractError("loss: ground-truth opacity is required");
  LossBreakdown b;
  b.L_b = background_term(t, s1, w, extractor, stage1_predicts_image);
  b.L_m = mask_bce(s1.mask, t.M);
  auto zero = torch::zeros({}, b.L_b.options());
  b.L_r = zero;
  b.L_i = zero;
  b.L_f = zero;
  b.total = b.L_b + w.lambda3 * b.L_m;
  return b;
}

LossBreakdown total_loss(const Targets& t, const stage1::Stage1Output& s1, const stage2::Stage2Output& s2,
                         const LossWeights& w, PerceptualExtractor& extractor, bool stage1_predicts_image) {
  w.validate();
  if (!t.A.defined() || !t.M.defined()) throw ContractError("loss: ground-truth opacity is required");
  LossBreakdown b;
  b.L_b = background_term(t, s1, w, extractor, stage1_predicts_image);
  b.L_m = mask_bce(s1.mask, t.M);
  auto zero = torch::zeros({}, b.L_b.options());

  // strict thresholds: pixels with A == alpha only see the gamma-weighted l1
  const auto opaque = t.M * (t.A > w.alpha_threshold).to(t.A.dtype());
  const auto transparent = t.M * (t.A < w.alpha_threshold).to(t.A.dtype());
  b.L_r = s2.restored.defined() ? image_term(s2.restored, t.I, opaque, w, extractor) : zero;
  b.L_i = s2.imagined.defined() ? image_term(s2.imagined, t.I, transparent, w, extractor) : zero;
  b.L_f = image_term(s2.fused, t.I, t.M, w, extractor);
  b.total = b.L_b + b.L_r + b.L_i + b.L_f + w.lambda3 * b.L_m;
  return b;
}

}  // namespace rirci::losses
