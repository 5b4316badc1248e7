#include "rirci/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstring>

namespace rirci {

namespace {

void require_hwc(const torch::Tensor& t, int64_t channels, const char* what) {
  if (!t.defined() || t.dim() != 3 || t.size(2) != channels || t.size(0) <= 0 || t.size(1) <= 0) {
    throw ContractError(std::string(what) + ": expected H x W x " + std::to_string(channels) +
                        " tensor");
  }
}

void require_unit_range(const torch::Tensor& t, const char* what) {
  if (t.numel() == 0) return;
  const double lo = t.min().item<double>();
  const double hi = t.max().item<double>();
  // float compositing can overshoot the unit interval by an ulp
  constexpr double kSlack = 1e-6;
  if (!(lo >= -kSlack && hi <= 1.0 + kSlack)) {
    throw ContractError(std::string(what) + ": values outside [0,1] (min " + std::to_string(lo) +
                        ", max " + std::to_string(hi) + ")");
  }
}

torch::Tensor as_float_hwc(torch::Tensor t) {
  return t.detach().to(torch::kCPU, torch::kFloat).contiguous();
}

// float64 is kept as is, everything else becomes float32
torch::Tensor as_real_hwc(torch::Tensor t) {
  const auto dtype = t.defined() && t.scalar_type() == torch::kDouble ? torch::kDouble : torch::kFloat;
  return t.detach().to(torch::kCPU, dtype).contiguous();
}

torch::Tensor mat_to_tensor(const cv::Mat& m, double scale) {
  cv::Mat f;
  m.convertTo(f, CV_32F, scale);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, f.channels()}, torch::kFloat);
  return t.clone();
}

}  // namespace

ImageTensor::ImageTensor(torch::Tensor hwc) : data_(as_real_hwc(std::move(hwc))) {
  require_hwc(data_, 3, "ImageTensor");
  require_unit_range(data_, "ImageTensor");
}

ImageTensor ImageTensor::clamped(const torch::Tensor& hwc) {
  return ImageTensor(as_real_hwc(hwc).clamp(0.0, 1.0));
}

ImageTensor ImageTensor::zeros(int64_t height, int64_t width) {
  return ImageTensor(torch::zeros({height, width, 3}));
}

ImageTensor ImageTensor::full(int64_t height, int64_t width, float value) {
  return ImageTensor(torch::full({height, width, 3}, value));
}

ImageTensor ImageTensor::from_nchw(const torch::Tensor& nchw, bool clamp) {
  if (nchw.dim() != 4 || nchw.size(1) != 3) {
    throw ContractError("ImageTensor::from_nchw: expected N x 3 x H x W");
  }
  auto hwc = nchw[0].detach().permute({1, 2, 0});
  return clamp ? clamped(hwc) : ImageTensor(hwc);
}

torch::Tensor ImageTensor::to_nchw() const {
  return data_.to(torch::kFloat).permute({2, 0, 1}).unsqueeze(0).contiguous();
}

AlphaMap::AlphaMap(torch::Tensor hw1) : data_(as_float_hwc(std::move(hw1))) {
  require_hwc(data_, 1, "AlphaMap");
  require_unit_range(data_, "AlphaMap");
}

AlphaMap AlphaMap::zeros(int64_t height, int64_t width) {
  return AlphaMap(torch::zeros({height, width, 1}));
}

AlphaMap AlphaMap::full(int64_t height, int64_t width, float value) {
  return AlphaMap(torch::full({height, width, 1}, value));
}

torch::Tensor AlphaMap::to_nchw() const {
  return data_.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

BinaryMask::BinaryMask(torch::Tensor hw1) : data_(as_float_hwc(std::move(hw1))) {
  require_hwc(data_, 1, "BinaryMask");
  const bool binary = torch::logical_or(data_ == 0, data_ == 1).all().item<bool>();
  if (!binary) throw ContractError("BinaryMask: values must be exactly 0 or 1");
}

BinaryMask BinaryMask::from_alpha(const AlphaMap& alpha) {
  return BinaryMask((alpha.data() > 0).to(torch::kFloat));
}

BinaryMask BinaryMask::threshold(const torch::Tensor& soft_hw1, double threshold) {
  return BinaryMask((soft_hw1 > threshold).to(torch::kFloat));
}

int64_t BinaryMask::count() const { return data_.sum().item<int64_t>(); }

torch::Tensor BinaryMask::to_nchw() const {
  return data_.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

LoadedImage load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("load_image: no such file " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("load_image: cannot decode " + path.string());
  if (raw.depth() != CV_8U) {
    throw FormatError("load_image: only 8-bit images are supported, got depth " +
                      std::to_string(raw.depth()) + " in " + path.string());
  }

  LoadedImage out;
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1:
      cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4: {
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      cv::Mat a;
      cv::extractChannel(raw, a, 3);
      out.alpha = AlphaMap(mat_to_tensor(a, 1.0 / 255.0).clamp(0.0, 1.0));
      break;
    }
    default:
      throw FormatError("load_image: unsupported channel count in " + path.string());
  }
  out.rgb = ImageTensor(mat_to_tensor(rgb, 1.0 / 255.0).clamp(0.0, 1.0));
  return out;
}

namespace {

cv::Mat to_mat8(const torch::Tensor& hwc) {
  auto q = (hwc.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
  const int rows = static_cast<int>(q.size(0));
  const int cols = static_cast<int>(q.size(1));
  const int ch = static_cast<int>(q.size(2));
  cv::Mat m(rows, cols, CV_8UC(ch));
  std::memcpy(m.data, q.data_ptr<uint8_t>(), static_cast<size_t>(q.numel()));
  return m;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  cv::Mat rgb = to_mat8(img.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  write_or_throw(path, bgr);
}

void save_alpha(const AlphaMap& alpha, const std::filesystem::path& path) {
  auto q = (alpha.data() * 65535.0).round().to(torch::kInt32).contiguous();
  cv::Mat m(static_cast<int>(alpha.height()), static_cast<int>(alpha.width()), CV_16UC1);
  auto acc = q.accessor<int32_t, 3>();
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) m.at<uint16_t>(r, c) = static_cast<uint16_t>(acc[r][c][0]);
  }
  write_or_throw(path, m);
}

AlphaMap load_alpha(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("load_alpha: no such file " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("load_alpha: cannot decode " + path.string());
  if (raw.channels() != 1) throw FormatError("load_alpha: expected grayscale " + path.string());
  double scale = 0.0;
  if (raw.depth() == CV_16U) {
    scale = 1.0 / 65535.0;
  } else if (raw.depth() == CV_8U) {
    scale = 1.0 / 255.0;
  } else {
    throw FormatError("load_alpha: unsupported bit depth in " + path.string());
  }
  return AlphaMap(mat_to_tensor(raw, scale).clamp(0.0, 1.0));
}

void save_gray(const torch::Tensor& hw1, const std::filesystem::path& path) {
  require_hwc(hw1, 1, "save_gray");
  write_or_throw(path, to_mat8(as_float_hwc(hw1)));
}

torch::Tensor quantize8(const torch::Tensor& t) { return (t * 255.0).round() / 255.0; }

torch::Tensor quantize16(const torch::Tensor& t) { return (t * 65535.0).round() / 65535.0; }

void check_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw ContractError(std::string(what) + ": non-finite values");
  }
}

torch::Tensor pad_to_multiple(const torch::Tensor& nchw, int64_t multiple) {
  const int64_t h = nchw.size(2);
  const int64_t w = nchw.size(3);
  const int64_t ph = (multiple - h % multiple) % multiple;
  const int64_t pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return nchw;
  namespace F = torch::nn::functional;
  // reflect padding needs pad < size; fall back to replicate on tiny inputs
  const bool can_reflect = ph < h && pw < w;
  auto opts = F::PadFuncOptions({0, pw, 0, ph});
  if (can_reflect) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return F::pad(nchw, opts);
}

}  // namespace rirci
