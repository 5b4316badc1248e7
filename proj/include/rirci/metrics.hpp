#pragma once

#include "rirci/image.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace rirci::metrics {

// All image metrics run on the 0-255 scale after rounding both inputs to 8-bit
// levels, mirroring evaluation of saved PNG files.

/// Peak signal-to-noise ratio in dB; 100 when MSE < 1e-10.
double psnr(const ImageTensor& x, const ImageTensor& y);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// L = 255, valid windows only, averaged over channels and positions.
double ssim(const ImageTensor& x, const ImageTensor& y);

double rmse(const ImageTensor& x, const ImageTensor& y);

/// RMSE restricted to pixels with mask == 1 (normalized by masked pixels x
/// channels). Empty when the mask has no pixels.
std::optional<double> rmse_w(const ImageTensor& x, const ImageTensor& y, const BinaryMask& mask);

struct MaskScores {
  double f1 = 0.0;
  double iou = 0.0;
};

/// Binarizes `pred` (H x W x 1, soft) at `threshold` and scores it against
/// `target`. Both scores are 1 when prediction and target are empty.
MaskScores mask_f1_iou(const torch::Tensor& pred, const BinaryMask& target, double threshold = 0.5);

struct SampleMetrics {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
  std::optional<double> rmse_w;
  double f1 = 0.0;
  double iou = 0.0;
  /// Watermark opacity of the sample, when known (for bucketed reports).
  std::optional<double> opacity;
};

SampleMetrics evaluate_sample(const std::string& id, const ImageTensor& prediction, const ImageTensor& truth,
                              const torch::Tensor& predicted_mask, const BinaryMask& true_mask,
                              double threshold = 0.5);

struct OpacityBucket {
  double low = 0.0;
  double high = 0.0;
  int64_t count = 0;
  double psnr = 0.0;
};

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
  /// Mean over samples whose mask is non-empty; absent if none are.
  std::optional<double> rmse_w;
  double f1 = 0.0;
  double iou = 0.0;
  int64_t sample_count = 0;
  std::vector<OpacityBucket> buckets;

  nlohmann::json to_json() const;
};

/// Arithmetic means in sample order.
MetricsReport aggregate(const std::vector<SampleMetrics>& samples);

/// PSNR per opacity range, [0.1,0.4) [0.4,0.7) [0.7,1) by default.
std::vector<OpacityBucket> bucket_psnr(const std::vector<SampleMetrics>& samples,
                                       const std::vector<std::pair<double, double>>& edges = {
                                           {0.1, 0.4}, {0.4, 0.7}, {0.7, 1.0}});

/// CSV with header id,psnr,ssim,rmse,rmse_w,f1,iou (empty rmse_w when undefined).
std::string to_csv(const std::vector<SampleMetrics>& samples);

}  // namespace rirci::metrics
