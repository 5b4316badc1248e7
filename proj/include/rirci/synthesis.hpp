#pragma once

#include "rirci/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rirci::synthesis {

/// Thrown when a transform leaves no watermark pixel on the canvas.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown for empty or inverted sampling intervals.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Deterministic stream of uniform draws. Each sample owns its own stream
/// derived from (global seed, sample index), so parallel and serial
/// generation agree bit for bit.
class SampleRng {
 public:
  SampleRng(uint64_t seed, uint64_t index);
  explicit SampleRng(uint64_t stream_seed);

  uint64_t next_u64();
  /// Uniform in [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  int64_t integer(int64_t lo, int64_t hi);
  bool coin(double p = 0.5);

  uint64_t stream_seed() const { return stream_seed_; }

 private:
  uint64_t stream_seed_;
  uint64_t state_;
};

struct WatermarkAsset {
  ImageTensor rgb;
  AlphaMap alpha;
  std::string id;

  /// Checks alpha/rgb agreement and that alpha is not identically zero.
  void validate() const;
};

struct CompositeSpec {
  bool flip_h = false;
  /// Resampling factor applied to the asset (1 = native size).
  double scale = 1.0;
  /// Counter-clockwise, in degrees.
  double rotation = 0.0;
  /// Top-left corner of the transformed footprint's bounding box on the canvas.
  int64_t row = 0;
  int64_t col = 0;
  double opacity = 1.0;
  uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const CompositeSpec& s);
void from_json(const nlohmann::json& j, CompositeSpec& s);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

struct DatasetConfig {
  int64_t canvas = 256;
  /// HWVOC-style (0.5, 1); PW-style uses (0.1, 1).
  Interval opacity{0.5, 1.0};
  /// Watermark width as a fraction of the canvas width (assets are normalized
  /// to canvas width before scaling).
  Interval scale{0.5, 1.0};
  Interval rotation{-45.0, 45.0};
  double flip_probability = 0.5;
  int64_t count = 10;
  uint64_t seed = 0;
  std::string split = "train";

  static DatasetConfig hwvoc();
  static DatasetConfig pw();
  void validate() const;
};

/// Size (height, width) of the bounding box of an h x w asset after `scale`
/// and `rotation` degrees.
std::pair<int64_t, int64_t> footprint_size(int64_t asset_h, int64_t asset_w, double scale,
                                           double rotation);

/// Draws flip, scale, rotation, placement and opacity for one sample. The
/// asset size is needed to keep at least part of the footprint on the canvas.
CompositeSpec sample_transform(SampleRng& rng, const DatasetConfig& config, int64_t asset_h,
                               int64_t asset_w);

struct TransformedWatermark {
  ImageTensor rgb;  // W'
  AlphaMap alpha;   // A
};

/// Flips, scales, rotates and places the asset on an H x W canvas with
/// bilinear resampling. A is the resampled asset alpha times spec.opacity and
/// is zero outside the footprint.
TransformedWatermark transform_watermark(const WatermarkAsset& asset, const CompositeSpec& spec,
                                         int64_t canvas_h, int64_t canvas_w);

/// Supervised training tuple for one watermarked image.
struct Sample {
  ImageTensor J;
  ImageTensor I;
  ImageTensor W;   // transformed watermark colors
  AlphaMap A;
  ImageTensor C_w;
  ImageTensor C_b;
  BinaryMask M;
  CompositeSpec spec;
  std::string id;
};

/// J = A*W + (1-A)*I, C_w = A*W, C_b = (1-A)*I, M = (A > 0). J, C_w and C_b
/// are computed and stored in float64.
Sample composite(const ImageTensor& background, const ImageTensor& watermark,
                 const AlphaMap& alpha);

struct ManifestEntry {
  std::string id;
  std::string background_path;
  std::string watermark_id;
  CompositeSpec spec;
  std::string split;
  // Paths relative to the manifest's directory.
  std::string image_path;       // J
  std::string background_out;   // I
  std::string watermark_path;   // W'
  std::string alpha_path;       // A (16-bit)
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  std::filesystem::path root;
  uint64_t rng_seed = 0;
  Interval opacity_range;
  DatasetConfig config;
  std::vector<ManifestEntry> entries;

  std::map<std::string, int64_t> counts() const;
  std::vector<const ManifestEntry*> split(const std::string& tag) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& root);

  void save(const std::filesystem::path& file) const;
  /// Loads and checks that every referenced file exists.
  static DatasetManifest load(const std::filesystem::path& file);
};

/// Reads J/I/W'/A for an entry and recomposes the sample from I, W', A so the
/// decomposition identity holds exactly in memory.
Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Center-crops to square and resizes to canvas x canvas.
ImageTensor fit_background(const ImageTensor& img, int64_t canvas);

std::vector<WatermarkAsset> load_watermarks(const std::filesystem::path& dir);
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Writes `config.count` samples into `out` plus `out/manifest.json`.
DatasetManifest generate_dataset(const std::filesystem::path& backgrounds,
                                 const std::filesystem::path& watermarks,
                                 const DatasetConfig& config, const std::filesystem::path& out);

}  // namespace rirci::synthesis
