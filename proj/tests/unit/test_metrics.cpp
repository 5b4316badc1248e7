#include "support.hpp"

#include "metric_oracle.hpp"

#include "rirci/metrics.hpp"

#include <doctest.h>

#include <cmath>

using namespace rirci;
using namespace rirci::metrics;

namespace {

ImageTensor levels(const torch::Tensor& v255) { return ImageTensor(v255 / 255.0f); }

ImageTensor random_levels(int64_t h, int64_t w) {
  return levels(torch::randint(0, 256, {h, w, 3}).to(torch::kFloat));
}

oracle::Levels to_oracle(const ImageTensor& img) {
  oracle::Levels l;
  l.h = img.height();
  l.w = img.width();
  l.c = 3;
  const auto d = torch::round(img.data().to(torch::kDouble) * 255.0).contiguous();
  l.v.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  return l;
}

/// Applies the same pixel permutation to an H x W x C tensor.
torch::Tensor permute_pixels(const torch::Tensor& t, const torch::Tensor& perm) {
  const auto h = t.size(0), w = t.size(1);
  return t.reshape({h * w, t.size(2)}).index_select(0, perm).reshape({h, w, t.size(2)});
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr: cap on equality and the one-level example") {
    const auto x = random_levels(12, 12);
    CHECK(psnr(x, x) == 100.0);
    auto base = torch::randint(0, 255, {12, 12, 3}).to(torch::kFloat);
    CHECK(psnr(levels(base), levels(base + 1)) == doctest::Approx(10 * std::log10(65025.0)).epsilon(1e-9));
    CHECK(psnr(levels(base), levels(base + 1)) == doctest::Approx(48.13).epsilon(1e-4));
    CHECK_THROWS_AS(psnr(x, random_levels(12, 11)), ContractError);
  }

  TEST_CASE("ssim: identity, constants and an inverted checker") {
    const auto x = random_levels(16, 16);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    const auto c = ImageTensor::full(16, 16, 0.3f);
    CHECK(ssim(c, c) == doctest::Approx(1.0).epsilon(1e-12));
    auto checker = ((torch::arange(16).view({16, 1}) + torch::arange(16).view({1, 16})) % 2).to(torch::kFloat);
    const auto cx = ImageTensor(checker.unsqueeze(-1).expand({16, 16, 3}).contiguous());
    const auto inv = ImageTensor(1 - cx.data());
    CHECK(ssim(cx, inv) < 0.1);
    CHECK(ssim(cx, inv) < 0.0);
    CHECK_THROWS_AS(ssim(ImageTensor::zeros(10, 20), ImageTensor::zeros(10, 20)), ContractError);
  }

  TEST_CASE("rmse and rmse_w normalizers") {
    const auto x = random_levels(8, 8);
    const auto full = BinaryMask(torch::ones({8, 8, 1}));
    CHECK(rmse(x, x) == 0.0);
    CHECK(*rmse_w(x, x, full) == 0.0);

    auto base = torch::full({8, 8, 3}, 100.0f);
    auto bumped = base.clone();
    bumped.slice(0, 0, 4).slice(1, 0, 4) += 10.0f;  // 25% of pixels
    auto m = torch::zeros({8, 8, 1});
    m.slice(0, 0, 4).slice(1, 0, 4).fill_(1.0f);
    CHECK(*rmse_w(levels(base), levels(bumped), BinaryMask(m)) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(rmse(levels(base), levels(bumped)) == doctest::Approx(5.0).epsilon(1e-9));
    CHECK_FALSE(rmse_w(x, x, BinaryMask(torch::zeros({8, 8, 1}))).has_value());
  }

  TEST_CASE("f1 and iou examples") {
    auto t = torch::zeros({4, 4, 1});
    t.slice(0, 0, 2).fill_(1.0f);
    const BinaryMask target(t);
    const auto perfect = mask_f1_iou(t, target);
    CHECK(perfect.f1 == 1.0);
    CHECK(perfect.iou == 1.0);
    auto half = torch::zeros({4, 4, 1});
    half.slice(0, 0, 1).fill_(0.9f);
    const auto h = mask_f1_iou(half, target);
    CHECK(h.iou == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(h.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    const auto empty = mask_f1_iou(torch::zeros({4, 4, 1}), BinaryMask(torch::zeros({4, 4, 1})));
    CHECK(empty.f1 == 1.0);
    CHECK(empty.iou == 1.0);
    CHECK_THROWS_AS(mask_f1_iou(half, target, 1.0), ContractError);
  }

  TEST_CASE("metrics agree with the scalar oracles on random pairs") {
    support::for_all(15, 21, [](std::mt19937_64& rng, int i) {
      torch::manual_seed(static_cast<uint64_t>(i));
      const auto h = support::integer(rng, 11, 24), w = support::integer(rng, 11, 24);
      const auto x = random_levels(h, w);
      const auto y = ImageTensor::clamped(x.data() + 0.05f * torch::randn({h, w, 3}));
      const auto ox = to_oracle(x), oy = to_oracle(y);
      CHECK(psnr(x, y) == doctest::Approx(oracle::psnr(ox, oy)).epsilon(1e-9));
      CHECK(rmse(x, y) == doctest::Approx(oracle::rmse(ox, oy)).epsilon(1e-9));
      CHECK(ssim(x, y) == doctest::Approx(oracle::ssim(ox, oy)).epsilon(1e-9));

      const auto mt = (torch::rand({h, w, 1}) > 0.5).to(torch::kFloat);
      const auto soft = torch::rand({h, w, 1});
      std::vector<int> mask(static_cast<size_t>(h * w));
      std::vector<double> sv(static_cast<size_t>(h * w));
      for (int64_t k = 0; k < h * w; ++k) {
        mask[static_cast<size_t>(k)] = mt.view({-1})[k].item<float>() > 0 ? 1 : 0;
        sv[static_cast<size_t>(k)] = soft.view({-1})[k].item<double>();
      }
      const auto rw = rmse_w(x, y, BinaryMask(mt));
      const auto orw = oracle::rmse_w(ox, oy, mask);
      REQUIRE(rw.has_value() == orw.has_value());
      if (rw) CHECK(*rw == doctest::Approx(*orw).epsilon(1e-9));
      const double thr = support::uniform(rng, 0.1, 0.9);
      const auto s = mask_f1_iou(soft, BinaryMask(mt), thr);
      const auto cm = oracle::confusion(sv, mask, thr);
      CHECK(s.f1 == doctest::Approx(oracle::f1(cm)).epsilon(1e-12));
      CHECK(s.iou == doctest::Approx(oracle::iou(cm)).epsilon(1e-12));
    });
  }

  TEST_CASE("f1 dominates iou and psnr is consistent with rmse") {
    support::for_all(30, 22, [](std::mt19937_64& rng, int i) {
      torch::manual_seed(static_cast<uint64_t>(i));
      const auto h = support::integer(rng, 1, 12), w = support::integer(rng, 1, 12);
      const auto s = mask_f1_iou(torch::rand({h, w, 1}), BinaryMask((torch::rand({h, w, 1}) > 0.5).to(torch::kFloat)));
      CHECK(s.f1 >= s.iou);
      CHECK(s.f1 == doctest::Approx(2 * s.iou / (1 + s.iou)).epsilon(1e-12));
      const auto x = random_levels(h, w), y = random_levels(h, w);
      const double r = rmse(x, y);
      if (r > 0) CHECK(psnr(x, y) == doctest::Approx(10 * std::log10(255.0 * 255.0 / (r * r))).epsilon(1e-9));
    });
  }

  TEST_CASE("pixelwise metrics are invariant under a shared permutation") {
    support::for_all(10, 23, [](std::mt19937_64& rng, int i) {
      torch::manual_seed(static_cast<uint64_t>(i));
      const auto h = support::integer(rng, 2, 10), w = support::integer(rng, 2, 10);
      const auto x = random_levels(h, w), y = random_levels(h, w);
      const auto m = (torch::rand({h, w, 1}) > 0.4).to(torch::kFloat);
      const auto soft = torch::rand({h, w, 1});
      const auto perm = torch::randperm(h * w);
      const auto px = ImageTensor(permute_pixels(x.data(), perm)), py = ImageTensor(permute_pixels(y.data(), perm));
      const auto pm = permute_pixels(m, perm), ps = permute_pixels(soft, perm);
      CHECK(psnr(px, py) == doctest::Approx(psnr(x, y)).epsilon(1e-12));
      CHECK(rmse(px, py) == doctest::Approx(rmse(x, y)).epsilon(1e-12));
      const auto a = rmse_w(x, y, BinaryMask(m)), b = rmse_w(px, py, BinaryMask(pm));
      REQUIRE(a.has_value() == b.has_value());
      if (a) CHECK(*a == doctest::Approx(*b).epsilon(1e-12));
      const auto fa = mask_f1_iou(soft, BinaryMask(m)), fb = mask_f1_iou(ps, BinaryMask(pm));
      CHECK(fa.f1 == fb.f1);
      CHECK(fa.iou == fb.iou);
    });
  }

  TEST_CASE("aggregation, buckets and csv") {
    std::vector<SampleMetrics> s(3);
    s[0] = {"a", 30, 0.9, 4, 8.0, 0.8, 0.6, 0.2};
    s[1] = {"b", 40, 0.8, 2, std::nullopt, 1.0, 1.0, 0.5};
    s[2] = {"c", 50, 0.7, 0, 2.0, 0.6, 0.4, 0.9};
    const auto r = aggregate(s);
    CHECK(r.sample_count == 3);
    CHECK(r.psnr == doctest::Approx(40));
    CHECK(r.ssim == doctest::Approx(0.8));
    CHECK(*r.rmse_w == doctest::Approx(5.0));
    CHECK(r.f1 == doctest::Approx(0.8));
    const auto b = bucket_psnr(s);
    REQUIRE(b.size() == 3);
    CHECK(b[0].count == 1);
    CHECK(b[1].psnr == doctest::Approx(40));
    CHECK(b[2].low == 0.7);
    const auto csv = to_csv(s);
    CHECK(csv.rfind("id,psnr,ssim,rmse,rmse_w,f1,iou\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.find("b,40,0.8,2,,1,1") != std::string::npos);
    const auto j = r.to_json();
    CHECK(j["sample_count"] == 3);
    std::vector<SampleMetrics> none{{"z", 1, 1, 1, std::nullopt, 1, 1, std::nullopt}};
    CHECK(aggregate(none).to_json()["rmse_w"].is_null());
  }
}
