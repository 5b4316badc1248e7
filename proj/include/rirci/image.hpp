#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace rirci {

/// Raised when a file cannot be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a decodable file has a layout we do not accept (bit depth, channels).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when arguments violate a documented precondition (shapes, ranges).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// H x W x 3 image with every element in [0,1]. Stored as float32, or as
/// float64 when constructed from float64 data.
///
/// Images live in HWC layout at rest; networks consume NCHW. Use to_nchw() /
/// ImageTensor::from_nchw() to cross between the two, never reshape by hand.
class ImageTensor {
 public:
  ImageTensor() = default;

  /// Validates shape and range. Throws ContractError.
  explicit ImageTensor(torch::Tensor hwc);

  /// Clamps to [0,1] instead of validating the range.
  static ImageTensor clamped(const torch::Tensor& hwc);
  static ImageTensor zeros(int64_t height, int64_t width);
  static ImageTensor full(int64_t height, int64_t width, float value);
  /// Takes the first item of an N x 3 x H x W tensor.
  static ImageTensor from_nchw(const torch::Tensor& nchw, bool clamp = true);

  const torch::Tensor& data() const { return data_; }
  int64_t height() const { return data_.size(0); }
  int64_t width() const { return data_.size(1); }
  bool empty() const { return !data_.defined(); }

  /// 1 x 3 x H x W float32 copy.
  torch::Tensor to_nchw() const;

 private:
  torch::Tensor data_;
};

/// H x W x 1 opacity channel in [0,1].
class AlphaMap {
 public:
  AlphaMap() = default;
  explicit AlphaMap(torch::Tensor hw1);

  static AlphaMap zeros(int64_t height, int64_t width);
  static AlphaMap full(int64_t height, int64_t width, float value);

  const torch::Tensor& data() const { return data_; }
  int64_t height() const { return data_.size(0); }
  int64_t width() const { return data_.size(1); }
  bool empty() const { return !data_.defined(); }
  torch::Tensor to_nchw() const;

 private:
  torch::Tensor data_;
};

/// H x W x 1 mask holding exactly 0 or 1 (stored as float).
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(torch::Tensor hw1);

  /// M = (A > 0).
  static BinaryMask from_alpha(const AlphaMap& alpha);
  /// Binarizes a soft mask at `threshold` (strictly greater).
  static BinaryMask threshold(const torch::Tensor& soft_hw1, double threshold);

  const torch::Tensor& data() const { return data_; }
  int64_t height() const { return data_.size(0); }
  int64_t width() const { return data_.size(1); }
  int64_t count() const;
  torch::Tensor to_nchw() const;

 private:
  torch::Tensor data_;
};

struct LoadedImage {
  ImageTensor rgb;
  /// Present only when the file carried an alpha channel.
  std::optional<AlphaMap> alpha;
};

/// Reads an 8-bit RGB/RGBA/gray PNG or JPEG and scales to [0,1] by 1/255.
LoadedImage load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped then rounded.
void save_image(const ImageTensor& img, const std::filesystem::path& path);

/// 16-bit grayscale PNG for opacity maps.
void save_alpha(const AlphaMap& alpha, const std::filesystem::path& path);
AlphaMap load_alpha(const std::filesystem::path& path);

/// Saves a single-channel map in [0,1] (e.g. a soft mask) as an 8-bit gray PNG.
void save_gray(const torch::Tensor& hw1, const std::filesystem::path& path);

/// Rounds to the nearest representable 8-bit level (x -> round(255x)/255).
torch::Tensor quantize8(const torch::Tensor& t);
/// Same for 16-bit levels.
torch::Tensor quantize16(const torch::Tensor& t);

/// Throws ContractError if `t` contains NaN or Inf.
void check_finite(const torch::Tensor& t, const char* what);

/// Reflection-pads an N x C x H x W tensor on the bottom/right so both spatial
/// dims become multiples of `multiple`.
torch::Tensor pad_to_multiple(const torch::Tensor& nchw, int64_t multiple);

}  // namespace rirci
