#include "support.hpp"

#include "loss_oracle.hpp"

#include "rirci/losses.hpp"

#include <doctest.h>

#include <cmath>

using namespace rirci;
using namespace rirci::losses;

namespace {

PerceptualExtractor extractor() { return PerceptualExtractor(Provenance::FixedSeedRandom, 3, 8); }

struct Fixture {
  Targets t;
  stage1::Stage1Output s1;
  stage2::Stage2Output s2;
};

/// Ground truth with predictions that are random perturbations of it.
Fixture fixture(int64_t h, int64_t w, uint64_t seed, bool perfect = false) {
  torch::manual_seed(seed);
  Fixture f;
  f.t.I = torch::rand({2, 3, h, w});
  f.t.A = torch::rand({2, 1, h, w}) * (torch::rand({2, 1, h, w}) > 0.4);
  f.t.M = (f.t.A > 0).to(torch::kFloat);
  f.t.C_b = (1 - f.t.A) * f.t.I;
  auto noisy = [&](const torch::Tensor& x) { return perfect ? x.clone() : (x + 0.2 * torch::randn_like(x)); };
  f.s1.mask = perfect ? f.t.M.clamp(1e-7, 1 - 1e-7) : torch::rand({2, 1, h, w});
  f.s1.mask_logits = torch::logit(f.s1.mask);
  f.s1.background_component = noisy(f.t.C_b);
  f.s1.watermark_component = torch::zeros_like(f.t.I);
  f.s2.restored = noisy(f.t.I);
  f.s2.imagined = noisy(f.t.I);
  f.s2.fused = noisy(f.t.I);
  return f;
}

double v(const torch::Tensor& t) { return t.item<double>(); }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("l1 basics") {
    const auto x = torch::rand({2, 3, 5, 4});
    CHECK(v(l1(x, x)) == 0.0);
    CHECK(v(l1(x + 0.5, x)) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(v(l1(x, x - 0.5)) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK_THROWS_AS(l1(x, torch::rand({2, 3, 5, 5})), ContractError);
  }

  TEST_CASE("masked l1 at the mask extremes and against the scalar oracle") {
    const auto x = torch::rand({2, 3, 5, 4}, torch::kDouble), y = torch::rand({2, 3, 5, 4}, torch::kDouble);
    CHECK(v(masked_l1(x, y, torch::zeros({2, 1, 5, 4}, torch::kDouble))) == 0.0);
    CHECK(v(masked_l1(x, y, torch::ones({2, 1, 5, 4}, torch::kDouble))) == doctest::Approx(v(l1(x, y))).epsilon(1e-12));
    support::for_all(10, 11, [](std::mt19937_64& rng, int i) {
      torch::manual_seed(static_cast<uint64_t>(i));
      const auto h = support::integer(rng, 1, 6), w = support::integer(rng, 1, 6);
      const auto a = torch::rand({1, 3, h, w}, torch::kDouble), b = torch::rand({1, 3, h, w}, torch::kDouble);
      const auto m = torch::rand({1, 1, h, w}, torch::kDouble);
      CHECK(v(masked_l1(a, b, m)) ==
            doctest::Approx(oracle::masked_l1(oracle::Grid::from(a), oracle::Grid::from(b), oracle::Grid::from(m))).epsilon(1e-12));
      CHECK(v(l1(a, b)) == doctest::Approx(oracle::l1(oracle::Grid::from(a), oracle::Grid::from(b))).epsilon(1e-12));
    });
    CHECK_THROWS_AS(masked_l1(x, y, torch::ones({2, 1, 3, 4}, torch::kDouble)), ContractError);
  }

  TEST_CASE("perceptual is zero on equal inputs and nonnegative otherwise") {
    auto ex = extractor();
    const auto x = torch::rand({1, 3, 16, 16});
    CHECK(v(perceptual(x, x, ex)) == 0.0);
    support::for_all(8, 12, [&](std::mt19937_64& rng, int i) {
      torch::manual_seed(static_cast<uint64_t>(i));
      const auto h = support::integer(rng, 4, 20), w = support::integer(rng, 4, 20);
      CHECK(v(perceptual(torch::rand({1, 3, h, w}), torch::rand({1, 3, h, w}), ex)) >= 0.0);
    });
    // first layer clamps everything to zero, so all features coincide
    PerceptualExtractor dead(Provenance::FixedSeedRandom, 1, 8);
    {
      torch::NoGradGuard ng;
      dead->convs[0]->weight.zero_();
      dead->convs[0]->bias.fill_(-1.0f);
    }
    CHECK(v(perceptual(torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 8, 8}), dead)) == 0.0);
    PerceptualExtractor none{nullptr};
    CHECK_THROWS_AS(perceptual(x, x, none), ContractError);
  }

  TEST_CASE("extractor is frozen and reproducible from its seed") {
    auto a = extractor(), b = extractor();
    for (const auto& p : a->parameters()) CHECK_FALSE(p.requires_grad());
    const auto x = torch::rand({1, 3, 12, 12});
    const auto fa = a->forward(x), fb = b->forward(x);
    for (size_t k = 0; k < 3; ++k) CHECK(torch::equal(fa[k], fb[k]));
    CHECK(fa[1].size(2) == 6);
    CHECK(fa[2].size(2) == 3);
  }

  TEST_CASE("extractor archives round trip") {
    support::TempDir dir("vgg");
    PerceptualExtractor full(Provenance::FixedSeedRandom, 5, 1);
    full->save(dir.path / "vgg.pt");
    auto back = PerceptualExtractor(PerceptualExtractorImpl::pretrained(dir.path / "vgg.pt"));
    CHECK(back->provenance == Provenance::Pretrained);
    const auto x = torch::rand({1, 3, 8, 8});
    CHECK(torch::equal(back->forward(x)[2], full->forward(x)[2]));
    CHECK_THROWS_AS(PerceptualExtractorImpl::pretrained(dir.path / "missing.pt"), IoError);
  }

  TEST_CASE("mask bce limits") {
    const auto target = (torch::rand({2, 1, 6, 6}) > 0.5).to(torch::kFloat);
    CHECK(v(mask_bce(torch::full({2, 1, 6, 6}, 0.5f), target)) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(v(mask_bce(torch::full({2, 1, 6, 6}, 0.5f), torch::zeros({2, 1, 6, 6}))) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(v(mask_bce(target.to(torch::kDouble).clamp(1e-7, 1 - 1e-7), target.to(torch::kDouble))) <= 1e-6);
    CHECK(std::isfinite(v(mask_bce(1 - target, target))));
    const auto p = torch::rand({1, 1, 5, 5}, torch::kDouble), t = (torch::rand({1, 1, 5, 5}) > 0.5).to(torch::kDouble);
    CHECK(v(mask_bce(p, t)) == doctest::Approx(oracle::bce(oracle::Grid::from(p), oracle::Grid::from(t))).epsilon(1e-12));
  }

  TEST_CASE("perfect predictions reach the global minimum") {
    auto ex = extractor();
    auto f = fixture(16, 16, 1, true);
    const auto b = total_loss(f.t, f.s1, f.s2, LossWeights{}, ex);
    CHECK(v(b.total) <= 1e-5);
  }

  TEST_CASE("fully opaque watermark: restoration weights equal M, imagination masked term vanishes") {
    auto ex = extractor();
    auto f = fixture(8, 8, 2);
    f.t.A = torch::ones_like(f.t.A);
    f.t.M = torch::ones_like(f.t.M);
    f.t.C_b = torch::zeros_like(f.t.I);
    const LossWeights w;
    const auto b = total_loss(f.t, f.s1, f.s2, w, ex);
    const auto& I = f.t.I;
    const double expect_r = w.lambda1 * (v(masked_l1(f.s2.restored, I, f.t.M)) + w.gamma * v(l1(f.s2.restored, I))) +
                            w.lambda2 * v(perceptual(f.s2.restored, I, ex));
    const double expect_i = w.lambda1 * w.gamma * v(l1(f.s2.imagined, I)) + w.lambda2 * v(perceptual(f.s2.imagined, I, ex));
    CHECK(v(b.L_r) == doctest::Approx(expect_r).epsilon(1e-6));
    CHECK(v(b.L_i) == doctest::Approx(expect_i).epsilon(1e-6));
  }

  TEST_CASE("pixels at exactly the threshold only see the full-image term") {
    auto ex = extractor();
    auto f = fixture(8, 8, 3);
    const LossWeights w;
    f.t.A = torch::full_like(f.t.A, static_cast<float>(w.alpha_threshold));
    f.t.M = torch::ones_like(f.t.M);
    const auto b = total_loss(f.t, f.s1, f.s2, w, ex);
    const double expect_r = w.lambda1 * w.gamma * v(l1(f.s2.restored, f.t.I)) + w.lambda2 * v(perceptual(f.s2.restored, f.t.I, ex));
    CHECK(v(b.L_r) == doctest::Approx(expect_r).epsilon(1e-6));
  }

  TEST_CASE("restoration and imagination weights partition the watermark") {
    auto ex = extractor();
    support::for_all(10, 13, [&](std::mt19937_64& rng, int i) {
      auto f = fixture(6, 6, static_cast<uint64_t>(200 + i));
      f.s2.imagined = f.s2.restored;
      LossWeights w;
      w.lambda2 = 0.0;
      w.gamma = 0.0;
      w.alpha_threshold = support::uniform(rng, 0.05, 0.95);
      const auto b = total_loss(f.t, f.s1, f.s2, w, ex);
      const double whole = w.lambda1 * v(masked_l1(f.s2.restored, f.t.I, f.t.M));
      CHECK(v(b.L_r) + v(b.L_i) == doctest::Approx(whole).epsilon(1e-6));
    });
  }

  TEST_CASE("every term is finite and nonnegative") {
    auto ex = extractor();
    support::for_all(6, 14, [&](std::mt19937_64& rng, int i) {
      const auto h = support::integer(rng, 4, 12), w = support::integer(rng, 4, 12);
      auto f = fixture(h, w, static_cast<uint64_t>(50 + i));
      const auto b = total_loss(f.t, f.s1, f.s2, LossWeights{}, ex);
      for (const auto* t : {&b.L_b, &b.L_r, &b.L_i, &b.L_f, &b.L_m, &b.total}) {
        CHECK(std::isfinite(v(*t)));
        CHECK(v(*t) >= 0.0);
      }
      const auto j = b.to_json();
      for (const char* k : {"L_b", "L_r", "L_i", "L_f", "L_m", "L"}) CHECK(j.contains(k));
    });
  }

  TEST_CASE("total is linear in each weight") {
    auto ex = extractor();
    const auto f = fixture(8, 8, 4);
    for (double LossWeights::*field : {&LossWeights::lambda1, &LossWeights::lambda2, &LossWeights::lambda3, &LossWeights::gamma}) {
      auto total_at = [&](double s) {
        LossWeights w;
        w.*field = s;
        return v(total_loss(f.t, f.s1, f.s2, w, ex).total);
      };
      const double a = total_at(0.0), b = total_at(1.0), c = total_at(2.5);
      CHECK(c - a == doctest::Approx(2.5 * (b - a)).epsilon(1e-5));
    }
  }

  TEST_CASE("disabled paths contribute zero and missing opacity is rejected") {
    auto ex = extractor();
    auto f = fixture(8, 8, 5);
    f.s2.imagined = torch::Tensor();
    const auto b = total_loss(f.t, f.s1, f.s2, LossWeights{}, ex);
    CHECK(v(b.L_i) == 0.0);
    CHECK(v(b.L_r) > 0.0);
    f.t.A = torch::Tensor();
    CHECK_THROWS_AS(total_loss(f.t, f.s1, f.s2, LossWeights{}, ex), ContractError);
    LossWeights bad;
    bad.alpha_threshold = 1.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = LossWeights{};
    bad.lambda2 = -1;
    CHECK_THROWS_AS(bad.validate(), ContractError);
  }

  TEST_CASE("stage-1 objective is L_b plus the weighted mask term") {
    auto ex = extractor();
    const auto f = fixture(8, 8, 6);
    const LossWeights w;
    const auto full = total_loss(f.t, f.s1, f.s2, w, ex);
    const auto s1 = stage1_loss(f.t, f.s1, w, ex);
    CHECK(v(s1.total) == doctest::Approx(v(full.L_b) + w.lambda3 * v(full.L_m)).epsilon(1e-6));
  }
}
