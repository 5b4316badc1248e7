#include "rirci/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace rirci::metrics {

namespace {

constexpr double kPeak = 255.0;
constexpr double kPsnrCap = 100.0;

/// Row-major H x W x C doubles on the 0-255 scale, rounded to integers.
struct Plane {
  int64_t h = 0, w = 0, c = 0;
  std::vector<double> v;
  double at(int64_t r, int64_t col, int64_t ch) const { return v[static_cast<size_t>((r * w + col) * c + ch)]; }
};

Plane to_levels(const torch::Tensor& hwc) {
  auto q = (hwc.detach().to(torch::kDouble).clamp(0.0, 1.0) * kPeak).round().contiguous();
  Plane p{q.size(0), q.size(1), q.size(2), {}};
  p.v.assign(q.data_ptr<double>(), q.data_ptr<double>() + q.numel());
  return p;
}

void require_same(const ImageTensor& x, const ImageTensor& y, const char* what) {
  if (x.empty() || y.empty() || x.data().sizes() != y.data().sizes()) {
    throw ContractError(std::string(what) + ": shape mismatch");
  }
}

double mse(const Plane& a, const Plane& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return s / static_cast<double>(a.v.size());
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<size_t>(size));
  double total = 0.0;
  const double mid = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<size_t>(i)] = std::exp(-((i - mid) * (i - mid)) / (2.0 * sigma * sigma));
    total += g[static_cast<size_t>(i)];
  }
  for (auto& x : g) x /= total;
  return g;
}

/// Valid separable filtering of one channel of f(a, b) with the 1-D kernel k.
template <typename Fn>
std::vector<double> filter_valid(const Plane& a, const Plane& b, int64_t ch, const std::vector<double>& k, Fn f) {
  const auto n = static_cast<int64_t>(k.size());
  const int64_t oh = a.h - n + 1, ow = a.w - n + 1;
  std::vector<double> rows(static_cast<size_t>(a.h * ow));
  for (int64_t r = 0; r < a.h; ++r) {
    for (int64_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int64_t t = 0; t < n; ++t) s += k[static_cast<size_t>(t)] * f(a.at(r, c + t, ch), b.at(r, c + t, ch));
      rows[static_cast<size_t>(r * ow + c)] = s;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t r = 0; r < oh; ++r) {
    for (int64_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int64_t t = 0; t < n; ++t) s += k[static_cast<size_t>(t)] * rows[static_cast<size_t>((r + t) * ow + c)];
      out[static_cast<size_t>(r * ow + c)] = s;
    }
  }
  return out;
}

}  // namespace

double psnr(const ImageTensor& x, const ImageTensor& y) {
  require_same(x, y, "psnr");
  const double e = mse(to_levels(x.data()), to_levels(y.data()));
  if (e < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(kPeak * kPeak / e);
}

double rmse(const ImageTensor& x, const ImageTensor& y) {
  require_same(x, y, "rmse");
  return std::sqrt(mse(to_levels(x.data()), to_levels(y.data())));
}

std::optional<double> rmse_w(const ImageTensor& x, const ImageTensor& y, const BinaryMask& mask) {
  require_same(x, y, "rmse_w");
  if (mask.height() != x.height() || mask.width() != x.width()) throw ContractError("rmse_w: mask shape mismatch");
  const auto a = to_levels(x.data());
  const auto b = to_levels(y.data());
  const auto m = mask.data().contiguous();
  const float* mp = m.data_ptr<float>();
  double s = 0.0;
  int64_t n = 0;
  for (int64_t r = 0; r < a.h; ++r) {
    for (int64_t c = 0; c < a.w; ++c) {
      if (mp[r * a.w + c] != 1.0f) continue;
      for (int64_t ch = 0; ch < a.c; ++ch) {
        const double d = a.at(r, c, ch) - b.at(r, c, ch);
        s += d * d;
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(s / static_cast<double>(n));
}

double ssim(const ImageTensor& x, const ImageTensor& y) {
  require_same(x, y, "ssim");
  constexpr int kWindow = 11;
  if (x.height() < kWindow || x.width() < kWindow) throw ContractError("ssim: image smaller than the 11x11 window");
  const auto a = to_levels(x.data());
  const auto b = to_levels(y.data());
  const auto k = gaussian_window(kWindow, 1.5);
  const double c1 = (0.01 * kPeak) * (0.01 * kPeak);
  const double c2 = (0.03 * kPeak) * (0.03 * kPeak);

  double total = 0.0;
  int64_t count = 0;
  for (int64_t ch = 0; ch < a.c; ++ch) {
    const auto mu_x = filter_valid(a, b, ch, k, [](double p, double) { return p; });
    const auto mu_y = filter_valid(a, b, ch, k, [](double, double q) { return q; });
    const auto xx = filter_valid(a, b, ch, k, [](double p, double) { return p * p; });
    const auto yy = filter_valid(a, b, ch, k, [](double, double q) { return q * q; });
    const auto xy = filter_valid(a, b, ch, k, [](double p, double q) { return p * q; });
    for (size_t i = 0; i < mu_x.size(); ++i) {
      const double mx = mu_x[i], my = mu_y[i];
      const double vx = xx[i] - mx * mx;
      const double vy = yy[i] - my * my;
      const double cxy = xy[i] - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

MaskScores mask_f1_iou(const torch::Tensor& pred, const BinaryMask& target, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("mask_f1_iou: threshold must lie in (0,1)");
  if (pred.dim() != 3 || pred.size(0) != target.height() || pred.size(1) != target.width() || pred.size(2) != 1) {
    throw ContractError("mask_f1_iou: prediction must be H x W x 1 matching the target");
  }
  const auto p = (pred.detach().to(torch::kFloat) > threshold).contiguous();
  const auto t = target.data().contiguous();
  const bool* pp = p.data_ptr<bool>();
  const float* tp = t.data_ptr<float>();
  int64_t tp_count = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    const bool pi = pp[i];
    const bool ti = tp[i] == 1.0f;
    tp_count += (pi && ti) ? 1 : 0;
    fp += (pi && !ti) ? 1 : 0;
    fn += (!pi && ti) ? 1 : 0;
  }
  if (tp_count + fp + fn == 0) return {1.0, 1.0};
  const auto tpd = static_cast<double>(tp_count);
  return {2 * tpd / (2 * tpd + static_cast<double>(fp + fn)), tpd / (tpd + static_cast<double>(fp + fn))};
}

SampleMetrics evaluate_sample(const std::string& id, const ImageTensor& prediction, const ImageTensor& truth,
                              const torch::Tensor& predicted_mask, const BinaryMask& true_mask, double threshold) {
  SampleMetrics s;
  s.id = id;
  s.psnr = psnr(prediction, truth);
  s.ssim = ssim(prediction, truth);
  s.rmse = rmse(prediction, truth);
  s.rmse_w = rmse_w(prediction, truth, true_mask);
  const auto scores = mask_f1_iou(predicted_mask, true_mask, threshold);
  s.f1 = scores.f1;
  s.iou = scores.iou;
  return s;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"psnr", psnr}, {"ssim", ssim},   {"rmse", rmse},
                      {"f1", f1},     {"iou", iou},     {"sample_count", sample_count}};
  j["rmse_w"] = rmse_w ? nlohmann::json(*rmse_w) : nlohmann::json(nullptr);
  if (!buckets.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& b : buckets) {
      arr.push_back({{"range", {b.low, b.high}}, {"count", b.count},
                     {"psnr", b.count > 0 ? nlohmann::json(b.psnr) : nlohmann::json(nullptr)}});
    }
    j["opacity_buckets"] = std::move(arr);
  }
  return j;
}

MetricsReport aggregate(const std::vector<SampleMetrics>& samples) {
  MetricsReport r;
  r.sample_count = static_cast<int64_t>(samples.size());
  if (samples.empty()) return r;
  double wsum = 0.0;
  int64_t wcount = 0;
  for (const auto& s : samples) {
    r.psnr += s.psnr;
    r.ssim += s.ssim;
    r.rmse += s.rmse;
    r.f1 += s.f1;
    r.iou += s.iou;
    if (s.rmse_w) {
      wsum += *s.rmse_w;
      ++wcount;
    }
  }
  const auto n = static_cast<double>(samples.size());
  r.psnr /= n;
  r.ssim /= n;
  r.rmse /= n;
  r.f1 /= n;
  r.iou /= n;
  if (wcount > 0) r.rmse_w = wsum / static_cast<double>(wcount);
  return r;
}

std::vector<OpacityBucket> bucket_psnr(const std::vector<SampleMetrics>& samples,
                                       const std::vector<std::pair<double, double>>& edges) {
  std::vector<OpacityBucket> out;
  for (const auto& [lo, hi] : edges) {
    OpacityBucket b{lo, hi, 0, 0.0};
    for (const auto& s : samples) {
      if (s.opacity && *s.opacity >= lo && *s.opacity < hi) {
        b.psnr += s.psnr;
        ++b.count;
      }
    }
    if (b.count > 0) b.psnr /= static_cast<double>(b.count);
    out.push_back(b);
  }
  return out;
}

std::string to_csv(const std::vector<SampleMetrics>& samples) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "id,psnr,ssim,rmse,rmse_w,f1,iou\n";
  for (const auto& s : samples) {
    os << s.id << ',' << s.psnr << ',' << s.ssim << ',' << s.rmse << ',';
    if (s.rmse_w) os << *s.rmse_w;
    os << ',' << s.f1 << ',' << s.iou << '\n';
  }
  return os.str();
}

}  // namespace rirci::metrics
