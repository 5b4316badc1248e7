#include "rirci/model.hpp"

#include <sstream>

namespace rirci {

namespace F = torch::nn::functional;

namespace {

std::string archive_key(const std::string& prefix, std::string name) {
  // archive keys may not contain '.', which separates sub-archives
  for (size_t pos = 0; (pos = name.find('.', pos)) != std::string::npos; pos += 2) name.replace(pos, 1, "__");
  return prefix + "__" + name;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v) || !v.isString()) throw FormatError("checkpoint: missing field " + key);
  return v.toStringRef();
}

double read_double(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v)) throw FormatError("checkpoint: missing field " + key);
  return v.toDouble();
}

int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v)) throw FormatError("checkpoint: missing field " + key);
  return v.toInt();
}

torch::serialize::InputArchive open_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such checkpoint: " + path.string());
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw FormatError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return ar;
}

}  // namespace

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.stage1.widths = {8, 16, 32, 64, 96};
  c.stage2.base_channels = 8;
  c.stage2.blocks = 2;
  c.stage2.local_block = {4, 4};
  c.stage2.global_grid = {2, 2};
  c.stage2.fusion_channels = 8;
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"stage1", stage1.to_json()}, {"stage2", stage2.to_json()}, {"detach_stage1", detach_stage1}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.stage1 = stage1::Stage1Config::from_json(j.at("stage1"));
  c.stage2 = stage2::Stage2Config::from_json(j.at("stage2"));
  c.detach_stage1 = j.at("detach_stage1").get<bool>();
  return c;
}

std::string ModelConfig::fingerprint() const {
  // detach_stage1 is a training choice, not part of the architecture
  nlohmann::json arch = {{"stage1", stage1.to_json()}, {"stage2", stage2.to_json()}};
  std::ostringstream os;
  os << std::hex << fnv1a(arch.dump());
  return os.str();
}

RirciModelImpl::RirciModelImpl(ModelConfig cfg_) : cfg(std::move(cfg_)) {
  stage1 = register_module("stage1", stage1::Stage1Net(cfg.stage1));
  stage2 = register_module("stage2", stage2::Stage2Net(cfg.stage2));
}

ModelOutput RirciModelImpl::forward(const torch::Tensor& image) {
  ModelOutput out;
  out.stage1 = stage1(image);
  out.stage2 = stage2(image, cfg.detach_stage1 ? out.stage1.detached() : out.stage1);
  return out;
}

ModelOutput RirciModelImpl::forward_padded(const torch::Tensor& image) {
  const int64_t h = image.size(2), w = image.size(3);
  auto out = forward(pad_to_multiple(image, 16));
  auto crop = [h, w](torch::Tensor& t) {
    if (t.defined()) t = t.narrow(2, 0, h).narrow(3, 0, w);
  };
  crop(out.stage1.mask_logits);
  crop(out.stage1.mask);
  crop(out.stage1.watermark_component);
  crop(out.stage1.background_component);
  for (auto& m : out.stage1.intermediate_masks) crop(m);
  crop(out.stage2.restored);
  crop(out.stage2.imagined);
  crop(out.stage2.fused);
  return out;
}

void save_checkpoint(RirciModel& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  torch::serialize::OutputArchive ar;
  for (const auto& p : model->named_parameters()) ar.write(archive_key("param", p.key()), p.value());
  for (const auto& b : model->named_buffers()) ar.write(archive_key("buffer", b.key()), b.value(), true);
  ar.write("config", c10::IValue(model->cfg.to_json().dump()));
  ar.write("fingerprint", c10::IValue(model->cfg.fingerprint()));
  ar.write("meta_step", c10::IValue(meta.step));
  ar.write("meta_epoch", c10::IValue(meta.epoch));
  ar.write("meta_best_val_psnr", c10::IValue(meta.best_val_psnr));
  ar.write("meta_extra", c10::IValue(meta.extra));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  try {
    ar.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  auto ar = open_archive(path);
  return ModelConfig::from_json(nlohmann::json::parse(read_string(ar, "config")));
}

std::string json_diff(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix) {
  std::ostringstream os;
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      const auto key = prefix.empty() ? k : prefix + "." + k;
      if (!b.contains(k)) {
        os << key << ": " << v.dump() << " -> (absent)\n";
      } else {
        os << json_diff(v, b.at(k), key);
      }
    }
    for (const auto& [k, v] : b.items()) {
      if (!a.contains(k)) os << (prefix.empty() ? k : prefix + "." + k) << ": (absent) -> " << v.dump() << '\n';
    }
  } else if (a != b) {
    os << prefix << ": " << a.dump() << " -> " << b.dump() << '\n';
  }
  return os.str();
}

CheckpointMeta load_checkpoint(RirciModel& model, const std::filesystem::path& path) {
  auto ar = open_archive(path);
  const auto fp = read_string(ar, "fingerprint");
  if (fp != model->cfg.fingerprint()) {
    const auto stored = nlohmann::json::parse(read_string(ar, "config"));
    auto diff = json_diff(stored, model->cfg.to_json());
    throw FingerprintMismatch("checkpoint " + path.string() + " was written for a different model (fingerprint " +
                                  fp + ", expected " + model->cfg.fingerprint() + ")",
                              diff);
  }
  torch::NoGradGuard ng;
  for (auto& p : model->named_parameters()) {
    torch::Tensor t;
    if (!ar.try_read(archive_key("param", p.key()), t)) throw FormatError("checkpoint: missing parameter " + p.key());
    p.value().copy_(t);
  }
  for (auto& b : model->named_buffers()) {
    torch::Tensor t;
    if (!ar.try_read(archive_key("buffer", b.key()), t, true)) throw FormatError("checkpoint: missing buffer " + b.key());
    b.value().copy_(t);
  }
  CheckpointMeta meta;
  meta.step = read_int(ar, "meta_step");
  meta.epoch = read_int(ar, "meta_epoch");
  meta.best_val_psnr = read_double(ar, "meta_best_val_psnr");
  meta.extra = read_string(ar, "meta_extra");
  return meta;
}

int64_t import_weights(torch::nn::Module& model, const std::filesystem::path& archive,
                       const std::map<std::string, std::string>& name_map) {
  auto ar = open_archive(archive);
  auto params = model.named_parameters();
  torch::NoGradGuard ng;
  int64_t copied = 0;
  for (const auto& [external, internal] : name_map) {
    auto* target = params.find(internal);
    if (target == nullptr) throw ContractError("import_weights: model has no parameter " + internal);
    torch::Tensor t;
    if (!ar.try_read(external, t)) continue;
    if (t.sizes() != target->sizes()) {
      throw ContractError("import_weights: shape mismatch for " + external + " -> " + internal);
    }
    target->copy_(t);
    ++copied;
  }
  return copied;
}

}  // namespace rirci
