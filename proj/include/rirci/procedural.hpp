#pragma once

#include "rirci/synthesis.hpp"

#include <filesystem>

namespace rirci::procedural {

// Hermetic stand-ins for natural backgrounds and logo assets, so datasets can be
// synthesized without external downloads.

/// Smooth color gradient with a handful of soft-edged shapes and a low-frequency
/// stripe texture.
ImageTensor background(synthesis::SampleRng& rng, int64_t size);

/// Logo-like RGBA asset: rings, discs and bars with anti-aliased coverage.
synthesis::WatermarkAsset logo(synthesis::SampleRng& rng, int64_t height, int64_t width,
                               const std::string& id);

struct SourceDirs {
  std::filesystem::path backgrounds;
  std::filesystem::path watermarks;
};

/// Writes `n_backgrounds` PNG backgrounds and `n_watermarks` RGBA logos under
/// `root/backgrounds` and `root/watermarks`.
SourceDirs write_sources(const std::filesystem::path& root, int n_backgrounds, int n_watermarks,
                         uint64_t seed, int64_t background_size = 256);

/// Saves an RGBA asset (8-bit alpha).
void save_asset(const synthesis::WatermarkAsset& asset, const std::filesystem::path& path);

}  // namespace rirci::procedural
