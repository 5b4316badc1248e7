#include "support.hpp"

#include "attention_oracle.hpp"

#include "rirci/model.hpp"

#include <doctest.h>

using namespace rirci;

namespace {

bool finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

bool any_grad(torch::nn::Module& m) {
  for (const auto& p : m.parameters()) {
    if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) return true;
  }
  return false;
}

stage1::Stage1Config small_stage1() {
  stage1::Stage1Config c;
  c.widths = {4, 8, 8, 16, 16};
  c.refine_steps = 2;
  return c;
}

stage2::Stage2Config small_stage2(stage2::Paths paths = stage2::Paths::Both) {
  auto c = ModelConfig::tiny().stage2;
  c.paths = paths;
  return c;
}

stage1::Stage1Output fake_stage1(const torch::Tensor& image, double mask_value) {
  stage1::Stage1Output s;
  const auto n = image.size(0), h = image.size(2), w = image.size(3);
  s.mask = torch::full({n, 1, h, w}, mask_value);
  s.mask_logits = torch::logit(s.mask.clamp(1e-6, 1 - 1e-6));
  s.watermark_component = torch::zeros_like(image);
  s.background_component = image.clone();
  return s;
}

}  // namespace

TEST_SUITE("stage1") {
  TEST_CASE("encoder halves five times and follows the configured widths") {
    stage1::Stage1Net net(stage1::Stage1Config{});
    torch::NoGradGuard ng;
    const auto levels = net->encode(torch::rand({1, 3, 256, 256}));
    REQUIRE(levels.size() == 5);
    const std::array<int64_t, 5> widths{32, 64, 128, 256, 512};
    for (size_t k = 0; k < 5; ++k) {
      CHECK(levels[k].size(1) == widths[k]);
      CHECK(levels[k].size(2) == 256 >> k);
      CHECK(levels[k].size(3) == 256 >> k);
    }
    CHECK(levels[4].size(2) == 16);

    const auto custom = small_stage1();
    stage1::Stage1Net small(custom);
    const auto lv = small->encode(torch::rand({2, 3, 32, 48}));
    for (size_t k = 0; k < 5; ++k) CHECK(lv[k].size(1) == custom.widths[k]);
    CHECK_THROWS_AS(small->encode(torch::rand({1, 3, 30, 32})), ContractError);
  }

  TEST_CASE("forward is stateless across inputs") {
    torch::manual_seed(4);
    stage1::Stage1Net net(small_stage1());
    torch::NoGradGuard ng;
    const auto a = torch::rand({1, 3, 32, 32}), b = torch::rand({1, 3, 32, 32});
    const auto first = net->forward(a).mask.clone();
    net->forward(b);
    CHECK(torch::equal(net->forward(a).mask, first));
    const auto both = net->forward(torch::cat({a, b}));
    CHECK(support::max_abs(both.mask[0], first[0]) <= 1e-5);
  }

  TEST_CASE("background component identity and mask range") {
    support::for_all(4, 9, [](std::mt19937_64& rng, int i) {
      torch::manual_seed(static_cast<uint64_t>(i));
      stage1::Stage1Net net(small_stage1());
      const auto h = 16 * support::integer(rng, 1, 3), w = 16 * support::integer(rng, 1, 3);
      const auto J = torch::rand({2, 3, h, w});
      torch::NoGradGuard ng;
      const auto o = net->forward(J);
      CHECK(o.mask.sizes() == torch::IntArrayRef({2, 1, h, w}));
      CHECK(o.watermark_component.sizes() == J.sizes());
      CHECK(o.background_component.sizes() == J.sizes());
      CHECK(torch::equal(o.mask, torch::sigmoid(o.mask_logits)));
      CHECK(torch::equal(o.background_component, J - o.mask * o.watermark_component));
      CHECK((o.mask > 0).all().item<bool>());
      CHECK((o.mask < 1).all().item<bool>());
      CHECK(finite(o.watermark_component));
      CHECK(o.intermediate_masks.size() == 2);
    });
  }

  TEST_CASE("compose_background at the mask extremes") {
    const auto J = torch::rand({1, 3, 4, 4}), Cw = torch::rand({1, 3, 4, 4});
    CHECK(torch::equal(stage1::compose_background(J, torch::zeros({1, 1, 4, 4}), Cw), J));
    CHECK(torch::equal(stage1::compose_background(J, torch::ones({1, 1, 4, 4}), Cw), J - Cw));
  }

  TEST_CASE("a loss on the background component reaches both branches") {
    torch::manual_seed(5);
    stage1::Stage1Net net(small_stage1());
    const auto o = net->forward(torch::rand({2, 3, 32, 32}));
    o.background_component.square().mean().backward();
    CHECK(any_grad(*net->mask_head));
    CHECK(any_grad(*net->component_head));
    CHECK(any_grad(*net->refiners));
    CHECK(any_grad(*net->encoder));
  }

  TEST_CASE("predict-image variant returns the branch output as the background") {
    auto cfg = small_stage1();
    cfg.predict_image = true;
    stage1::Stage1Net net(cfg);
    torch::NoGradGuard ng;
    const auto J = torch::rand({1, 3, 16, 16});
    const auto o = net->forward(J);
    CHECK(support::max_abs(o.background_component + o.watermark_component, J) <= 1e-6);
    CHECK((o.background_component >= 0).all().item<bool>());
    CHECK((o.background_component <= 1).all().item<bool>());
  }

  TEST_CASE("stage1 config round trips through json") {
    auto cfg = small_stage1();
    cfg.predict_image = true;
    const auto back = stage1::Stage1Config::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
  }
}

TEST_SUITE("stage2") {
  TEST_CASE("both-path default populates every output with the input shape") {
    torch::manual_seed(6);
    stage2::Stage2Net net(small_stage2());
    const auto J = torch::rand({2, 3, 32, 48});
    torch::NoGradGuard ng;
    const auto o = net->forward(J, fake_stage1(J, 0.3));
    for (const auto* t : {&o.restored, &o.imagined, &o.fused}) {
      REQUIRE(t->defined());
      CHECK(t->sizes() == J.sizes());
      CHECK(finite(*t));
    }
    const auto c = o.clamped();
    CHECK(c.fused.min().item<float>() >= 0.0f);
    CHECK(c.fused.max().item<float>() <= 1.0f);
  }

  TEST_CASE("zero mask and a clean background give finite restoration") {
    stage2::Stage2Net net(small_stage2());
    const auto I = torch::rand({1, 3, 32, 32});
    torch::NoGradGuard ng;
    const auto r = net->restore_path(torch::zeros({1, 1, 32, 32}), I);
    CHECK(r.sizes() == I.sizes());
    CHECK(finite(r));
  }

  TEST_CASE("imagination never sees masked pixels") {
    torch::manual_seed(7);
    stage2::Stage2Net net(small_stage2());
    torch::NoGradGuard ng;
    const auto J = torch::rand({1, 3, 32, 32});
    // mask 0 -> identical to feeding J directly into the path
    const auto zero = torch::zeros({1, 1, 32, 32});
    CHECK(torch::equal(net->imagine_path(J, zero), net->imagine->forward(J, zero)));
    // mask 1 -> the input image is all zeros
    const auto one = torch::ones({1, 1, 32, 32});
    const auto full = net->imagine_path(J, one);
    CHECK(finite(full));
    CHECK(torch::equal(full, net->imagine->forward(torch::zeros_like(J), one)));

    support::for_all(5, 10, [&](std::mt19937_64&, int i) {
      torch::manual_seed(static_cast<uint64_t>(100 + i));
      auto m = (torch::rand({1, 1, 32, 32}) > 0.6).to(torch::kFloat);
      m = torch::where(m > 0, m, torch::rand({1, 1, 32, 32}) * 0.9);
      const auto other = torch::where(m == 1, torch::rand({1, 3, 32, 32}), J);
      CHECK(torch::equal(net->imagine_path(J, m), net->imagine_path(other, m)));
    });
  }

  TEST_CASE("restore-only variant leaves the imagined output absent") {
    stage2::Stage2Net net(small_stage2(stage2::Paths::RestoreOnly));
    CHECK(net->imagine.is_empty());
    const auto J = torch::rand({1, 3, 16, 16});
    torch::NoGradGuard ng;
    const auto o = net->forward(J, fake_stage1(J, 0.5));
    CHECK(o.restored.defined());
    CHECK_FALSE(o.imagined.defined());
    CHECK(o.fused.sizes() == J.sizes());
    CHECK_FALSE(o.clamped().imagined.defined());
    CHECK_THROWS_AS(net->imagine_path(J, torch::zeros({1, 1, 16, 16})), ContractError);

    stage2::Stage2Net other(small_stage2(stage2::Paths::ImagineOnly));
    const auto oi = other->forward(J, fake_stage1(J, 0.5));
    CHECK_FALSE(oi.restored.defined());
    CHECK(oi.imagined.defined());
  }

  TEST_CASE("ffc variant swaps the bottleneck blocks") {
    auto cfg = small_stage2();
    cfg.bottleneck = blocks::BottleneckKind::Ffc;
    stage2::Stage2Net net(cfg);
    int ffc = 0, glci = 0;
    for (const auto& m : net->modules()) {
      ffc += m->as<blocks::FfcBlockImpl>() != nullptr;
      glci += m->as<blocks::GlciImpl>() != nullptr;
    }
    CHECK(ffc == 2 * cfg.blocks);
    CHECK(glci == 0);
    const auto J = torch::rand({1, 3, 16, 16});
    torch::NoGradGuard ng;
    CHECK(finite(net->forward(J, fake_stage1(J, 0.2)).fused));
  }

  TEST_CASE("fusion attention matches the brute-force oracle") {
    torch::manual_seed(8);
    stage2::FusionHead head(4);
    head->to(torch::kDouble);
    auto& nl = head->attend;
    const auto feat = torch::randn({1, nl->channels, 4, 4}, torch::kDouble);
    torch::NoGradGuard ng;
    const auto expect = oracle::non_local(oracle::Grid::from(feat), oracle::Pointwise::from(nl->theta->weight, nl->theta->bias),
                                          oracle::Pointwise::from(nl->phi->weight, nl->phi->bias),
                                          oracle::Pointwise::from(nl->g->weight, nl->g->bias),
                                          oracle::Pointwise::from(nl->out->weight, nl->out->bias));
    const auto got = oracle::Grid::from(nl->forward(feat));
    double worst = 0.0;
    for (size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::fabs(got.v[k] - expect.v[k]));
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("a loss on the fused image reaches both paths and stage 1") {
    torch::manual_seed(9);
    auto cfg = ModelConfig::tiny();
    RirciModel model(cfg);
    const auto out = model->forward(torch::rand({1, 3, 32, 32}));
    out.stage2.fused.square().mean().backward();
    CHECK(any_grad(*model->stage2->restore));
    CHECK(any_grad(*model->stage2->imagine));
    CHECK(any_grad(*model->stage2->fusion));
    CHECK(any_grad(*model->stage1));
  }

  TEST_CASE("detaching stage 1 blocks the gradient path into it") {
    auto cfg = ModelConfig::tiny();
    cfg.detach_stage1 = true;
    RirciModel model(cfg);
    const auto out = model->forward(torch::rand({1, 3, 16, 16}));
    out.stage2.fused.mean().backward();
    CHECK_FALSE(any_grad(*model->stage1));
    CHECK(any_grad(*model->stage2));
  }

  TEST_CASE("padded forward crops back to odd input sizes") {
    RirciModel model(ModelConfig::tiny());
    torch::NoGradGuard ng;
    const auto J = torch::rand({1, 3, 37, 21});
    const auto o = model->forward_padded(J);
    CHECK(o.stage2.fused.sizes() == J.sizes());
    CHECK(o.stage1.mask.sizes() == torch::IntArrayRef({1, 1, 37, 21}));
    CHECK(o.stage2.restored.sizes() == J.sizes());
  }

  TEST_CASE("stage2 config round trips and the fingerprint tracks architecture only") {
    auto cfg = ModelConfig::tiny();
    const auto back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.fingerprint() == cfg.fingerprint());
    auto detached = cfg;
    detached.detach_stage1 = true;
    CHECK(detached.fingerprint() == cfg.fingerprint());
    auto ffc = cfg;
    ffc.stage2.bottleneck = blocks::BottleneckKind::Ffc;
    CHECK(ffc.fingerprint() != cfg.fingerprint());
    CHECK(stage2::paths_from_string(stage2::to_string(stage2::Paths::ImagineOnly)) == stage2::Paths::ImagineOnly);
  }
}
