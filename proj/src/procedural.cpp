#include "rirci/procedural.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstring>
#include <numbers>

namespace rirci::procedural {

namespace fs = std::filesystem;
using synthesis::SampleRng;

namespace {

torch::Tensor random_color(SampleRng& rng) {
  return torch::tensor({static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                        static_cast<float>(rng.uniform())});
}

/// Soft step from 1 (inside, d < 0) to 0 (outside) over about one pixel.
torch::Tensor coverage(const torch::Tensor& signed_distance) {
  return (0.5 - signed_distance).clamp(0.0, 1.0);
}

std::pair<torch::Tensor, torch::Tensor> grid(int64_t h, int64_t w) {
  auto ys = torch::arange(h, torch::kFloat).add(0.5).view({h, 1}).expand({h, w});
  auto xs = torch::arange(w, torch::kFloat).add(0.5).view({1, w}).expand({h, w});
  return {ys, xs};
}

}  // namespace

ImageTensor background(SampleRng& rng, int64_t size) {
  auto [ys, xs] = grid(size, size);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  auto t = ((xs * std::cos(angle) + ys * std::sin(angle)) / static_cast<double>(size)).add(1.0).mul(0.5);
  t = t.clamp(0.0, 1.0).unsqueeze(-1);
  auto c0 = random_color(rng);
  auto c1 = random_color(rng);
  auto img = c0 * (1.0 - t) + c1 * t;

  const double freq = rng.uniform(2.0, 6.0) * 2.0 * std::numbers::pi / static_cast<double>(size);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double amp = rng.uniform(0.02, 0.08);
  img = img + amp * torch::sin(xs * freq + ys * (0.5 * freq) + phase).unsqueeze(-1);

  const int64_t shapes = rng.integer(3, 7);
  for (int64_t k = 0; k < shapes; ++k) {
    auto color = random_color(rng);
    const double cy = rng.uniform(0.0, static_cast<double>(size));
    const double cx = rng.uniform(0.0, static_cast<double>(size));
    const double r = rng.uniform(0.05, 0.25) * static_cast<double>(size);
    torch::Tensor d;
    if (rng.coin()) {
      d = torch::sqrt((ys - cy).square() + (xs - cx).square()) - r;
    } else {
      const double ry = r * rng.uniform(0.3, 1.0);
      d = torch::maximum((ys - cy).abs() - ry, (xs - cx).abs() - r);
    }
    auto cov = coverage(d / 1.5).unsqueeze(-1) * rng.uniform(0.5, 1.0);
    img = img * (1.0 - cov) + color * cov;
  }
  return ImageTensor::clamped(img);
}

synthesis::WatermarkAsset logo(SampleRng& rng, int64_t height, int64_t width,
                               const std::string& id) {
  auto [ys, xs] = grid(height, width);
  auto alpha = torch::zeros({height, width});
  auto rgb = torch::zeros({height, width, 3}) + random_color(rng);
  const double hh = static_cast<double>(height);
  const double ww = static_cast<double>(width);

  // one centered ring or disc so the asset is never empty
  {
    const double r = 0.35 * std::min(hh, ww);
    auto d = torch::sqrt((ys - hh / 2).square() + (xs - ww / 2).square()) - r;
    if (rng.coin()) d = d.abs() - r * rng.uniform(0.15, 0.35);
    alpha = torch::maximum(alpha, coverage(d));
  }
  const int64_t parts = rng.integer(2, 5);
  for (int64_t k = 0; k < parts; ++k) {
    const double cy = rng.uniform(0.2 * hh, 0.8 * hh);
    const double cx = rng.uniform(0.1 * ww, 0.9 * ww);
    const double ry = rng.uniform(0.05, 0.2) * hh;
    const double rx = rng.uniform(0.05, 0.35) * ww;
    auto d = torch::maximum((ys - cy).abs() - ry, (xs - cx).abs() - rx);
    auto cov = coverage(d);
    alpha = torch::maximum(alpha, cov);
    if (rng.coin(0.4)) {
      auto color = random_color(rng);
      auto c3 = cov.unsqueeze(-1);
      rgb = rgb * (1.0 - c3) + color * c3;
    }
  }
  synthesis::WatermarkAsset a{ImageTensor::clamped(rgb), AlphaMap(alpha.clamp(0.0, 1.0).unsqueeze(-1)),
                              id};
  a.validate();
  return a;
}

void save_asset(const synthesis::WatermarkAsset& asset, const fs::path& path) {
  auto rgba = torch::cat({asset.rgb.data(), asset.alpha.data()}, 2);
  auto q = (rgba.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(q.size(0)), static_cast<int>(q.size(1)), CV_8UC4);
  std::memcpy(m.data, q.data_ptr<uint8_t>(), static_cast<size_t>(q.numel()));
  cv::Mat bgra;
  cv::cvtColor(m, bgra, cv::COLOR_RGBA2BGRA);
  if (!cv::imwrite(path.string(), bgra)) throw IoError("cannot write " + path.string());
}

SourceDirs write_sources(const fs::path& root, int n_backgrounds, int n_watermarks, uint64_t seed,
                         int64_t background_size) {
  SourceDirs dirs{root / "backgrounds", root / "watermarks"};
  fs::create_directories(dirs.backgrounds);
  fs::create_directories(dirs.watermarks);
  char name[32];
  for (int i = 0; i < n_backgrounds; ++i) {
    SampleRng rng(seed, static_cast<uint64_t>(i));
    std::snprintf(name, sizeof(name), "bg_%04d.png", i);
    save_image(background(rng, background_size), dirs.backgrounds / name);
  }
  for (int i = 0; i < n_watermarks; ++i) {
    SampleRng rng(seed ^ 0x5bd1e995ULL, static_cast<uint64_t>(i));
    const int64_t h = rng.integer(48, 96);
    const int64_t w = rng.integer(64, 160);
    std::snprintf(name, sizeof(name), "wm_%04d", i);
    save_asset(logo(rng, h, w, name), dirs.watermarks / (std::string(name) + ".png"));
  }
  return dirs;
}

}  // namespace rirci::procedural
