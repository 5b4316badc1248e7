#include "rirci/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace rirci::synthesis {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t derive_stream(uint64_t seed, uint64_t index) {
  uint64_t s = seed;
  const uint64_t a = splitmix64(s);
  uint64_t t = a ^ (index * 0xD1B54A32D192ED03ULL);
  return splitmix64(t);
}

void check_interval(const Interval& iv, const char* name) {
  if (!std::isfinite(iv.low) || !std::isfinite(iv.high) || !(iv.low < iv.high)) {
    throw ConfigError(std::string("empty or inverted interval for ") + name);
  }
}

torch::Tensor resize_hwc(const torch::Tensor& hwc, int64_t h, int64_t w) {
  namespace F = torch::nn::functional;
  auto nchw = hwc.permute({2, 0, 1}).unsqueeze(0);
  auto out = F::interpolate(nchw, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{h, w})
                                      .mode(torch::kBilinear)
                                      .align_corners(false)
                                      .antialias(true));
  return out[0].permute({1, 2, 0}).clamp(0.0, 1.0).contiguous();
}

std::string zero_pad(int64_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

SampleRng::SampleRng(uint64_t seed, uint64_t index) : SampleRng(derive_stream(seed, index)) {}

SampleRng::SampleRng(uint64_t stream_seed) : stream_seed_(stream_seed), state_(stream_seed) {}

uint64_t SampleRng::next_u64() { return splitmix64(state_); }

double SampleRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SampleRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t SampleRng::integer(int64_t lo, int64_t hi) {
  if (hi < lo) throw ConfigError("SampleRng::integer: empty range");
  const auto span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(next_u64() % span);
}

bool SampleRng::coin(double p) { return uniform() < p; }

void WatermarkAsset::validate() const {
  if (rgb.empty() || alpha.empty()) throw ContractError("WatermarkAsset: missing rgb or alpha");
  if (rgb.height() != alpha.height() || rgb.width() != alpha.width()) {
    throw ContractError("WatermarkAsset " + id + ": alpha and rgb sizes differ");
  }
  if (alpha.data().max().item<float>() <= 0.0f) {
    throw ContractError("WatermarkAsset " + id + ": alpha is identically zero");
  }
}

void to_json(json& j, const CompositeSpec& s) {
  j = json{{"flip_h", s.flip_h}, {"scale", s.scale}, {"rotation", s.rotation},
           {"row", s.row},       {"col", s.col},     {"opacity", s.opacity},
           {"seed", s.seed}};
}

void from_json(const json& j, CompositeSpec& s) {
  j.at("flip_h").get_to(s.flip_h);
  j.at("scale").get_to(s.scale);
  j.at("rotation").get_to(s.rotation);
  j.at("row").get_to(s.row);
  j.at("col").get_to(s.col);
  j.at("opacity").get_to(s.opacity);
  j.at("seed").get_to(s.seed);
}

DatasetConfig DatasetConfig::hwvoc() {
  DatasetConfig c;
  c.opacity = {0.5, 1.0};
  return c;
}

DatasetConfig DatasetConfig::pw() {
  DatasetConfig c;
  c.opacity = {0.1, 1.0};
  return c;
}

void DatasetConfig::validate() const {
  if (canvas <= 0) throw ConfigError("canvas must be positive");
  if (count < 0) throw ConfigError("count must be non-negative");
  check_interval(opacity, "opacity");
  if (opacity.low < 0.0 || opacity.high > 1.0) throw ConfigError("opacity must lie in [0,1]");
  check_interval(scale, "scale");
  if (scale.low <= 0.0) throw ConfigError("scale must be positive");
  check_interval(rotation, "rotation");
  if (flip_probability < 0.0 || flip_probability > 1.0) {
    throw ConfigError("flip probability must lie in [0,1]");
  }
}

std::pair<int64_t, int64_t> footprint_size(int64_t asset_h, int64_t asset_w, double scale,
                                           double rotation) {
  const double theta = rotation * std::numbers::pi / 180.0;
  const double sw = scale * static_cast<double>(asset_w);
  const double sh = scale * static_cast<double>(asset_h);
  const double c = std::abs(std::cos(theta));
  const double s = std::abs(std::sin(theta));
  // the epsilon absorbs cos(90 deg) != 0 in floating point
  const auto bw = static_cast<int64_t>(std::ceil(sw * c + sh * s - 1e-6));
  const auto bh = static_cast<int64_t>(std::ceil(sw * s + sh * c - 1e-6));
  return {std::max<int64_t>(bh, 1), std::max<int64_t>(bw, 1)};
}

CompositeSpec sample_transform(SampleRng& rng, const DatasetConfig& config, int64_t asset_h,
                               int64_t asset_w) {
  config.validate();
  CompositeSpec spec;
  spec.seed = rng.stream_seed();
  spec.flip_h = rng.coin(config.flip_probability);
  spec.scale = rng.uniform(config.scale.low, config.scale.high);
  spec.rotation = rng.uniform(config.rotation.low, config.rotation.high);
  // open interval: redraw the (probability ~2^-53) endpoint
  do {
    spec.opacity = rng.uniform(config.opacity.low, config.opacity.high);
  } while (spec.opacity <= config.opacity.low || spec.opacity >= config.opacity.high);

  const auto [bh, bw] = footprint_size(asset_h, asset_w, spec.scale, spec.rotation);
  const int64_t slack_h = config.canvas - bh;
  const int64_t slack_w = config.canvas - bw;
  spec.row = rng.integer(std::min<int64_t>(0, slack_h), std::max<int64_t>(0, slack_h));
  spec.col = rng.integer(std::min<int64_t>(0, slack_w), std::max<int64_t>(0, slack_w));
  return spec;
}

TransformedWatermark transform_watermark(const WatermarkAsset& asset, const CompositeSpec& spec,
                                         int64_t canvas_h, int64_t canvas_w) {
  asset.validate();
  if (!(spec.scale > 0.0) || !(spec.opacity >= 0.0 && spec.opacity <= 1.0)) {
    throw ContractError("transform_watermark: invalid scale or opacity");
  }
  const int64_t ah = asset.rgb.height();
  const int64_t aw = asset.rgb.width();
  const auto [bh, bw] = footprint_size(ah, aw, spec.scale, spec.rotation);

  const double theta = spec.rotation * std::numbers::pi / 180.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double sw = spec.scale * static_cast<double>(aw);
  const double sh = spec.scale * static_cast<double>(ah);
  const double cx = static_cast<double>(spec.col) + 0.5 * static_cast<double>(bw);
  const double cy = static_cast<double>(spec.row) + 0.5 * static_cast<double>(bh);

  auto rgb_out = torch::zeros({canvas_h, canvas_w, 3});
  auto a_out = torch::zeros({canvas_h, canvas_w, 1});
  auto ro = rgb_out.accessor<float, 3>();
  auto ao = a_out.accessor<float, 3>();
  const auto rgb_in = asset.rgb.data().to(torch::kFloat);
  const auto src_rgb = rgb_in.accessor<float, 3>();
  const auto src_a = asset.alpha.data().accessor<float, 3>();

  auto alpha_at = [&](int64_t v, int64_t u) -> double {
    if (u < 0 || v < 0 || u >= aw || v >= ah) return 0.0;
    return src_a[v][u][0];
  };
  auto rgb_at = [&](int64_t v, int64_t u, int ch) -> double {
    u = std::clamp<int64_t>(u, 0, aw - 1);
    v = std::clamp<int64_t>(v, 0, ah - 1);
    return src_rgb[v][u][ch];
  };

  const int64_t r0 = std::max<int64_t>(0, spec.row);
  const int64_t r1 = std::min<int64_t>(canvas_h, spec.row + bh);
  const int64_t c0 = std::max<int64_t>(0, spec.col);
  const int64_t c1 = std::min<int64_t>(canvas_w, spec.col + bw);
  bool any = false;
  for (int64_t r = r0; r < r1; ++r) {
    for (int64_t c = c0; c < c1; ++c) {
      // canvas pixel centre relative to the footprint centre, rotated back
      const double px = static_cast<double>(c) + 0.5 - cx;
      const double py = static_cast<double>(r) + 0.5 - cy;
      const double qx = px * ct - py * st + 0.5 * sw;
      const double qy = px * st + py * ct + 0.5 * sh;
      double u = qx / spec.scale - 0.5;
      const double v = qy / spec.scale - 0.5;
      if (spec.flip_h) u = static_cast<double>(aw - 1) - u;
      if (u <= -1.0 || v <= -1.0 || u >= static_cast<double>(aw) || v >= static_cast<double>(ah)) {
        continue;
      }
      const auto u0 = static_cast<int64_t>(std::floor(u));
      const auto v0 = static_cast<int64_t>(std::floor(v));
      const double fu = u - static_cast<double>(u0);
      const double fv = v - static_cast<double>(v0);
      const double w00 = (1 - fu) * (1 - fv);
      const double w01 = fu * (1 - fv);
      const double w10 = (1 - fu) * fv;
      const double w11 = fu * fv;
      const double a = w00 * alpha_at(v0, u0) + w01 * alpha_at(v0, u0 + 1) +
                       w10 * alpha_at(v0 + 1, u0) + w11 * alpha_at(v0 + 1, u0 + 1);
      if (a <= 0.0) continue;
      any = true;
      ao[r][c][0] = static_cast<float>(std::clamp(a, 0.0, 1.0) * spec.opacity);
      for (int ch = 0; ch < 3; ++ch) {
        const double val = w00 * rgb_at(v0, u0, ch) + w01 * rgb_at(v0, u0 + 1, ch) +
                           w10 * rgb_at(v0 + 1, u0, ch) + w11 * rgb_at(v0 + 1, u0 + 1, ch);
        ro[r][c][ch] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  if (!any || (spec.opacity <= 0.0)) {
    throw PlacementError("transform_watermark: watermark " + asset.id +
                         " has no visible pixel on the canvas");
  }
  return {ImageTensor(rgb_out), AlphaMap(a_out)};
}

Sample composite(const ImageTensor& background, const ImageTensor& watermark,
                 const AlphaMap& alpha) {
  if (background.height() != watermark.height() || background.width() != watermark.width() ||
      background.height() != alpha.height() || background.width() != alpha.width()) {
    throw ContractError("composite: background, watermark and alpha shapes differ");
  }
  const auto a = alpha.data().to(torch::kDouble);
  auto c_w = a * watermark.data().to(torch::kDouble);
  auto c_b = (1.0 - a) * background.data().to(torch::kDouble);
  Sample s;
  s.J = ImageTensor(c_w + c_b);
  s.I = background;
  s.W = watermark;
  s.A = alpha;
  s.C_w = ImageTensor(c_w);
  s.C_b = ImageTensor(c_b);
  s.M = BinaryMask::from_alpha(alpha);
  return s;
}

std::map<std::string, int64_t> DatasetManifest::counts() const {
  std::map<std::string, int64_t> out;
  for (const auto& e : entries) ++out[e.split];
  return out;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& tag) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == tag) out.push_back(&e);
  }
  return out;
}

json DatasetManifest::to_json() const {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = rng_seed;
  j["opacity_range"] = {opacity_range.low, opacity_range.high};
  j["config"] = {{"canvas", config.canvas},
                 {"scale_range", {config.scale.low, config.scale.high}},
                 {"rotation_range", {config.rotation.low, config.rotation.high}},
                 {"flip_probability", config.flip_probability},
                 {"count", config.count},
                 {"split", config.split}};
  j["counts"] = counts();
  json list = json::array();
  for (const auto& e : entries) {
    list.push_back({{"id", e.id},
                    {"background_path", e.background_path},
                    {"watermark_id", e.watermark_id},
                    {"spec", e.spec},
                    {"split", e.split},
                    {"files",
                     {{"J", e.image_path},
                      {"I", e.background_out},
                      {"W", e.watermark_path},
                      {"A", e.alpha_path}}}});
  }
  j["entries"] = std::move(list);
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j, const fs::path& root) {
  if (j.at("schema_version").get<int>() != kSchemaVersion) {
    throw FormatError("manifest: unsupported schema version");
  }
  DatasetManifest m;
  m.root = root;
  m.rng_seed = j.at("seed").get<uint64_t>();
  m.opacity_range = {j.at("opacity_range").at(0).get<double>(),
                     j.at("opacity_range").at(1).get<double>()};
  const auto& c = j.at("config");
  m.config.canvas = c.at("canvas").get<int64_t>();
  m.config.opacity = m.opacity_range;
  m.config.scale = {c.at("scale_range").at(0).get<double>(), c.at("scale_range").at(1).get<double>()};
  m.config.rotation = {c.at("rotation_range").at(0).get<double>(),
                       c.at("rotation_range").at(1).get<double>()};
  m.config.flip_probability = c.at("flip_probability").get<double>();
  m.config.count = c.at("count").get<int64_t>();
  m.config.split = c.at("split").get<std::string>();
  m.config.seed = m.rng_seed;
  for (const auto& e : j.at("entries")) {
    ManifestEntry me;
    me.id = e.at("id").get<std::string>();
    me.background_path = e.at("background_path").get<std::string>();
    me.watermark_id = e.at("watermark_id").get<std::string>();
    me.spec = e.at("spec").get<CompositeSpec>();
    me.split = e.at("split").get<std::string>();
    const auto& f = e.at("files");
    me.image_path = f.at("J").get<std::string>();
    me.background_out = f.at("I").get<std::string>();
    me.watermark_path = f.at("W").get<std::string>();
    me.alpha_path = f.at("A").get<std::string>();
    m.entries.push_back(std::move(me));
  }
  const auto declared = j.at("counts").get<std::map<std::string, int64_t>>();
  if (declared != m.counts()) throw FormatError("manifest: entry counts disagree with declared counts");
  return m;
}

void DatasetManifest::save(const fs::path& file) const {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write manifest " + file.string());
  os << to_json().dump(2) << '\n';
  if (!os) throw IoError("failed writing manifest " + file.string());
}

DatasetManifest DatasetManifest::load(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read manifest " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest " + file.string() + ": " + e.what());
  }
  auto m = from_json(j, file.parent_path());
  for (const auto& e : m.entries) {
    for (const auto* rel : {&e.image_path, &e.background_out, &e.watermark_path, &e.alpha_path}) {
      if (!fs::exists(m.root / *rel)) {
        throw IoError("manifest entry " + e.id + " references missing file " + *rel);
      }
    }
  }
  return m;
}

Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  auto I = load_image(manifest.root / entry.background_out).rgb;
  auto W = load_image(manifest.root / entry.watermark_path).rgb;
  auto A = load_alpha(manifest.root / entry.alpha_path);
  Sample s = composite(I, W, A);
  s.spec = entry.spec;
  s.id = entry.id;
  return s;
}

ImageTensor fit_background(const ImageTensor& img, int64_t canvas) {
  const int64_t h = img.height();
  const int64_t w = img.width();
  const int64_t side = std::min(h, w);
  auto crop = img.data()
                  .narrow(0, (h - side) / 2, side)
                  .narrow(1, (w - side) / 2, side);
  if (side == canvas) return ImageTensor(crop.contiguous());
  return ImageTensor(resize_hwc(crop, canvas, canvas));
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<WatermarkAsset> load_watermarks(const fs::path& dir) {
  std::vector<WatermarkAsset> out;
  for (const auto& p : list_images(dir)) {
    auto loaded = load_image(p);
    if (!loaded.alpha) throw FormatError("watermark asset without alpha channel: " + p.string());
    WatermarkAsset a{loaded.rgb, *loaded.alpha, p.stem().string()};
    a.validate();
    out.push_back(std::move(a));
  }
  return out;
}

namespace {

/// Rescales the asset so its longer side equals the canvas; CompositeSpec.scale
/// then reads as a fraction of the canvas.
WatermarkAsset normalize_asset(const WatermarkAsset& a, int64_t canvas) {
  const double f = static_cast<double>(canvas) /
                   static_cast<double>(std::max(a.rgb.height(), a.rgb.width()));
  const auto h = std::max<int64_t>(1, std::lround(f * static_cast<double>(a.rgb.height())));
  const auto w = std::max<int64_t>(1, std::lround(f * static_cast<double>(a.rgb.width())));
  if (h == a.rgb.height() && w == a.rgb.width()) return a;
  return {ImageTensor(resize_hwc(a.rgb.data(), h, w)), AlphaMap(resize_hwc(a.alpha.data(), h, w)),
          a.id};
}

}  // namespace

DatasetManifest generate_dataset(const fs::path& backgrounds, const fs::path& watermarks,
                                 const DatasetConfig& config, const fs::path& out) {
  config.validate();
  const auto bg_files = list_images(backgrounds);
  if (bg_files.empty()) throw IoError("no background images in " + backgrounds.string());
  auto assets = load_watermarks(watermarks);
  if (assets.empty()) throw IoError("no watermark assets in " + watermarks.string());
  for (auto& a : assets) a = normalize_asset(a, config.canvas);

  for (const char* sub : {"images", "backgrounds", "watermarks", "alpha"}) {
    std::error_code ec;
    fs::create_directories(out / sub, ec);
    if (ec) throw IoError("cannot create " + (out / sub).string() + ": " + ec.message());
  }

  DatasetManifest manifest;
  manifest.root = out;
  manifest.rng_seed = config.seed;
  manifest.opacity_range = config.opacity;
  manifest.config = config;

  std::map<size_t, ImageTensor> bg_cache;
  for (int64_t i = 0; i < config.count; ++i) {
    SampleRng rng(config.seed, static_cast<uint64_t>(i));
    const auto bg_index = static_cast<size_t>(rng.integer(0, static_cast<int64_t>(bg_files.size()) - 1));
    const auto wm_index = static_cast<size_t>(rng.integer(0, static_cast<int64_t>(assets.size()) - 1));
    const auto& asset = assets[wm_index];

    auto it = bg_cache.find(bg_index);
    if (it == bg_cache.end()) {
      auto fitted = fit_background(load_image(bg_files[bg_index]).rgb, config.canvas);
      it = bg_cache.emplace(bg_index, ImageTensor(quantize8(fitted.data()))).first;
    }
    const ImageTensor& I = it->second;

    CompositeSpec spec;
    std::optional<TransformedWatermark> tw;
    for (int attempt = 0; attempt < 64 && !tw; ++attempt) {
      spec = sample_transform(rng, config, asset.rgb.height(), asset.rgb.width());
      try {
        tw = transform_watermark(asset, spec, config.canvas, config.canvas);
      } catch (const PlacementError&) {
      }
    }
    if (!tw) throw PlacementError("could not place watermark " + asset.id + " for sample " + std::to_string(i));

    // quantize to the stored precision first so the files reproduce the sample exactly
    ImageTensor W(quantize8(tw->rgb.data()));
    AlphaMap A(quantize16(tw->alpha.data()));
    Sample s = composite(I, W, A);

    ManifestEntry e;
    e.id = zero_pad(i);
    e.background_path = fs::relative(bg_files[bg_index], backgrounds).string();
    e.watermark_id = asset.id;
    e.spec = spec;
    e.split = config.split;
    e.image_path = "images/" + e.id + ".png";
    e.background_out = "backgrounds/" + e.id + ".png";
    e.watermark_path = "watermarks/" + e.id + ".png";
    e.alpha_path = "alpha/" + e.id + ".png";
    save_image(s.J, out / e.image_path);
    save_image(s.I, out / e.background_out);
    save_image(s.W, out / e.watermark_path);
    save_alpha(s.A, out / e.alpha_path);
    manifest.entries.push_back(std::move(e));
  }
  manifest.save(out / "manifest.json");
  return manifest;
}

}  // namespace rirci::synthesis
