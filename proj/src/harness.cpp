#include "rirci/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace rirci::harness {

namespace fs = std::filesystem;

namespace {

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ContractError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  size_t used = 0;
  uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ContractError("config: " + key + " expects an unsigned integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw ContractError("config: " + key + " expects a real number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractError("config: " + key + " expects a boolean, got '" + v + "'");
}

std::vector<const synthesis::ManifestEntry*> shuffled(std::vector<const synthesis::ManifestEntry*> v, uint64_t seed,
                                                      uint64_t stream) {
  synthesis::SampleRng rng(seed ^ 0x7261696e6f726465ULL, stream);
  for (size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng.integer(0, static_cast<int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
  return v;
}

torch::Tensor hw1(const torch::Tensor& nchw, int64_t i) { return nchw[i].permute({1, 2, 0}).contiguous(); }

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::PredictImage: return "predict-image";
    case Variant::Ffc: return "ffc";
    case Variant::RestoreOnly: return "restore-only";
    case Variant::ImagineOnly: return "imagine-only";
    case Variant::NoScse: return "no-scse";
    case Variant::NoSpectral: return "no-spectral";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::Full, Variant::PredictImage, Variant::Ffc, Variant::RestoreOnly, Variant::ImagineOnly,
                 Variant::NoScse, Variant::NoSpectral}) {
    if (to_string(v) == s) return v;
  }
  throw ContractError("unknown variant '" + s +
                      "' (full, predict-image, ffc, restore-only, imagine-only, no-scse, no-spectral)");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k{
      "epochs",          "batch_size",   "learning_rate",    "adam_beta1",      "adam_beta2",
      "seed",            "lambda1",      "lambda2",          "lambda3",         "gamma",
      "alpha",           "variant",      "model_size",       "perceptual",      "perceptual_seed",
      "perceptual_width_divisor",        "manifest",         "output_dir",      "checkpoint_every",
      "val_fraction",    "max_steps",    "two_phase",        "phase1_epochs",   "detach_stage1",
      "threads",         "cache",        "validate_every"};
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& v) {
  if (key == "epochs") epochs = parse_int(key, v);
  else if (key == "batch_size") batch_size = parse_int(key, v);
  else if (key == "learning_rate") learning_rate = parse_real(key, v);
  else if (key == "adam_beta1") adam_beta1 = parse_real(key, v);
  else if (key == "adam_beta2") adam_beta2 = parse_real(key, v);
  else if (key == "seed") seed = parse_uint(key, v);
  else if (key == "lambda1") loss_weights.lambda1 = parse_real(key, v);
  else if (key == "lambda2") loss_weights.lambda2 = parse_real(key, v);
  else if (key == "lambda3") loss_weights.lambda3 = parse_real(key, v);
  else if (key == "gamma") loss_weights.gamma = parse_real(key, v);
  else if (key == "alpha") loss_weights.alpha_threshold = parse_real(key, v);
  else if (key == "variant") variant = variant_from_string(v);
  else if (key == "model_size") model_size = v;
  else if (key == "perceptual") perceptual = v;
  else if (key == "perceptual_seed") perceptual_seed = parse_uint(key, v);
  else if (key == "perceptual_width_divisor") perceptual_width_divisor = parse_int(key, v);
  else if (key == "manifest") manifest = v;
  else if (key == "output_dir") output_dir = v;
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, v);
  else if (key == "val_fraction") val_fraction = parse_real(key, v);
  else if (key == "max_steps") max_steps = parse_int(key, v);
  else if (key == "two_phase") two_phase = parse_bool(key, v);
  else if (key == "phase1_epochs") phase1_epochs = parse_int(key, v);
  else if (key == "detach_stage1") detach_stage1 = parse_bool(key, v);
  else if (key == "threads") threads = parse_int(key, v);
  else if (key == "cache") cache = parse_bool(key, v);
  else if (key == "validate_every") validate_every = parse_int(key, v);
  else throw ContractError("config: unknown key '" + key + "'");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"seed", seed},
          {"lambda1", loss_weights.lambda1},
          {"lambda2", loss_weights.lambda2},
          {"lambda3", loss_weights.lambda3},
          {"gamma", loss_weights.gamma},
          {"alpha", loss_weights.alpha_threshold},
          {"variant", to_string(variant)},
          {"model_size", model_size},
          {"perceptual", perceptual},
          {"perceptual_seed", perceptual_seed},
          {"perceptual_width_divisor", perceptual_width_divisor},
          {"manifest", manifest},
          {"output_dir", output_dir},
          {"checkpoint_every", checkpoint_every},
          {"val_fraction", val_fraction},
          {"max_steps", max_steps},
          {"two_phase", two_phase},
          {"phase1_epochs", phase1_epochs},
          {"detach_stage1", detach_stage1},
          {"threads", threads},
          {"cache", cache},
          {"validate_every", validate_every}};
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ContractError("config: epochs must be positive");
  if (batch_size <= 0) throw ContractError("config: batch_size must be positive");
  if (!(learning_rate > 0)) throw ContractError("config: learning_rate must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ContractError("config: Adam betas must lie in [0,1)");
  }
  loss_weights.validate();
  if (model_size != "full" && model_size != "tiny") throw ContractError("config: model_size is 'full' or 'tiny'");
  if (perceptual_width_divisor <= 0) throw ContractError("config: perceptual_width_divisor must be positive");
  if (perceptual != "random" && perceptual_width_divisor != 1) {
    throw ContractError("config: pretrained perceptual weights need perceptual_width_divisor = 1");
  }
  if (checkpoint_every < 0 || max_steps < 0 || phase1_epochs < 0 || validate_every < 0) {
    throw ContractError("config: cadences and budgets must be >= 0");
  }
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ContractError("config: val_fraction must lie in [0,1)");
  if (threads <= 0) throw ContractError("config: threads must be positive");
  if (two_phase && variant == Variant::PredictImage) {
    throw ContractError("config: two_phase is not defined for the predict-image variant");
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m = model_size == "tiny" ? ModelConfig::tiny() : ModelConfig{};
  m.detach_stage1 = detach_stage1;
  switch (variant) {
    case Variant::Full: break;
    case Variant::PredictImage: m.stage1.predict_image = true; break;
    case Variant::Ffc: m.stage2.bottleneck = blocks::BottleneckKind::Ffc; break;
    case Variant::RestoreOnly: m.stage2.paths = stage2::Paths::RestoreOnly; break;
    case Variant::ImagineOnly: m.stage2.paths = stage2::Paths::ImagineOnly; break;
    case Variant::NoScse: m.stage2.use_scse = false; break;
    case Variant::NoSpectral: m.stage2.use_spectral = false; break;
  }
  return m;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such config file: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  std::map<std::string, std::string> out;
  for (const auto& [key, node] : tree) {
    if (!node.empty()) throw FormatError("config " + path.string() + ": sections are not supported ([" + key + "])");
    out[key] = node.data();
  }
  return out;
}

TrainConfig resolve_config(const std::optional<fs::path>& file, const std::map<std::string, std::string>& overrides) {
  TrainConfig cfg;
  if (file) {
    for (const auto& [k, v] : read_config_file(*file)) cfg.set(k, v);
  }
  if (const char* env = std::getenv("RIRCI_SEED"); env != nullptr && *env != '\0') cfg.set("seed", env);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

SampleStore::SampleStore(const synthesis::DatasetManifest& manifest, bool cache) : manifest_(manifest), cache_(cache) {}

Batch SampleStore::batch(const std::vector<const synthesis::ManifestEntry*>& entries) {
  if (entries.empty()) throw ContractError("SampleStore: empty batch");
  std::vector<torch::Tensor> J, I, A, M, Cb;
  Batch out;
  for (const auto* e : entries) {
    auto it = memo_.find(e->id);
    Batch one;
    if (it != memo_.end()) {
      one = it->second;
    } else {
      const auto s = synthesis::load_sample(manifest_, *e);
      one.J = s.J.to_nchw();
      one.I = s.I.to_nchw();
      one.A = s.A.to_nchw();
      one.M = s.M.to_nchw();
      one.C_b = s.C_b.to_nchw();
      if (cache_) memo_.emplace(e->id, one);
    }
    J.push_back(one.J);
    I.push_back(one.I);
    A.push_back(one.A);
    M.push_back(one.M);
    Cb.push_back(one.C_b);
    out.ids.push_back(e->id);
    out.opacity.push_back(e->spec.opacity);
  }
  out.J = torch::cat(J);
  out.I = torch::cat(I);
  out.A = torch::cat(A);
  out.M = torch::cat(M);
  out.C_b = torch::cat(Cb);
  return out;
}

nlohmann::json StepRecord::to_json() const {
  return {{"step", step}, {"epoch", epoch}, {"phase", phase}, {"L_b", L_b}, {"L_r", L_r},
          {"L_i", L_i},   {"L_f", L_f},     {"L_m", L_m},     {"L", total}};
}

nlohmann::json RunRecord::to_json() const {
  auto steps_json = nlohmann::json::array();
  for (const auto& s : steps) steps_json.push_back(s.to_json());
  auto val_json = nlohmann::json::array();
  for (const auto& v : validation) {
    val_json.push_back({{"step", v.step}, {"epoch", v.epoch}, {"metrics", v.report.to_json()}});
  }
  return {{"config", config},
          {"steps", steps_json},
          {"validation", val_json},
          {"wall_clock_seconds", wall_clock_seconds},
          {"source_fingerprint", source_fingerprint}};
}

Split carve_validation(const synthesis::DatasetManifest& manifest, double fraction, uint64_t seed) {
  auto pool = shuffled(manifest.split("train"), seed, 0xffffffffULL);
  Split s;
  auto n_val = static_cast<size_t>(std::ceil(fraction * static_cast<double>(pool.size())));
  if (n_val >= pool.size() && !pool.empty()) n_val = pool.size() - 1;
  s.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  // keep manifest order inside each part so batch order depends only on the seed
  auto by_id = [](const auto* a, const auto* b) { return a->id < b->id; };
  std::sort(s.val.begin(), s.val.end(), by_id);
  std::sort(s.train.begin(), s.train.end(), by_id);
  return s;
}

std::vector<metrics::SampleMetrics> score(RirciModel& model, SampleStore& store,
                                          const std::vector<const synthesis::ManifestEntry*>& entries,
                                          int64_t batch_size, bool oracle) {
  if (!oracle && !model) throw ContractError("score: model is required outside oracle mode");
  std::vector<metrics::SampleMetrics> out;
  torch::NoGradGuard ng;
  const bool was_training = model && model->is_training();
  if (model) model->eval();
  for (size_t start = 0; start < entries.size(); start += static_cast<size_t>(batch_size)) {
    const auto end = std::min(entries.size(), start + static_cast<size_t>(batch_size));
    const std::vector<const synthesis::ManifestEntry*> chunk(entries.begin() + static_cast<std::ptrdiff_t>(start),
                                                             entries.begin() + static_cast<std::ptrdiff_t>(end));
    const auto b = store.batch(chunk);
    torch::Tensor pred = b.I, mask = b.M;
    if (!oracle) {
      const auto o = model->forward_padded(b.J);
      pred = o.stage2.fused;
      mask = o.stage1.mask;
    }
    for (int64_t i = 0; i < b.J.size(0); ++i) {
      const auto prediction = ImageTensor::from_nchw(pred.narrow(0, i, 1), true);
      const auto truth = ImageTensor::from_nchw(b.I.narrow(0, i, 1), true);
      auto m = metrics::evaluate_sample(b.ids[static_cast<size_t>(i)], prediction, truth, hw1(mask, i),
                                        BinaryMask(hw1(b.M, i)));
      m.opacity = b.opacity[static_cast<size_t>(i)];
      out.push_back(std::move(m));
    }
  }
  if (was_training) model->train();
  return out;
}

Trainer::Trainer(TrainConfig cfg, synthesis::DatasetManifest manifest)
    : cfg_(std::move(cfg)), manifest_(std::move(manifest)), store_(manifest_, cfg_.cache) {
  cfg_.validate();
  torch::set_num_threads(static_cast<int>(cfg_.threads));
  torch::manual_seed(cfg_.seed);
  split_ = carve_validation(manifest_, cfg_.val_fraction, cfg_.seed);
  if (split_.train.empty()) throw ContractError("train: the manifest has no training entries");
  model_ = RirciModel(cfg_.model_config());
  if (cfg_.perceptual == "random") {
    extractor_ = losses::PerceptualExtractor(losses::Provenance::FixedSeedRandom, cfg_.perceptual_seed,
                                             cfg_.perceptual_width_divisor);
  } else {
    extractor_ = losses::PerceptualExtractor(losses::PerceptualExtractorImpl::pretrained(cfg_.perceptual));
  }
  extractor_->eval();
  optim_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(),
      torch::optim::AdamOptions(cfg_.learning_rate).betas({cfg_.adam_beta1, cfg_.adam_beta2}));
  phase_ = cfg_.two_phase ? 1 : 0;
  order_ = shuffled(split_.train, cfg_.seed, 0);
}

std::vector<const synthesis::ManifestEntry*> Trainer::next_batch_entries(bool advance) {
  auto order = order_;
  size_t cursor = cursor_;
  if (cursor >= order.size()) {
    order = shuffled(split_.train, cfg_.seed, static_cast<uint64_t>(epoch_ + 1));
    cursor = 0;
    if (advance) {
      ++epoch_;
      order_ = order;
    }
  }
  const auto end = std::min(order.size(), cursor + static_cast<size_t>(cfg_.batch_size));
  std::vector<const synthesis::ManifestEntry*> out(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                                   order.begin() + static_cast<std::ptrdiff_t>(end));
  if (advance) cursor_ = end;
  return out;
}

void Trainer::enter_phase2() {
  for (auto& p : model_->stage1->parameters()) p.set_requires_grad(false);
  optim_ = std::make_unique<torch::optim::Adam>(
      model_->stage2->parameters(),
      torch::optim::AdamOptions(cfg_.learning_rate).betas({cfg_.adam_beta1, cfg_.adam_beta2}));
  phase_ = 2;
}

StepRecord Trainer::compute(const std::vector<const synthesis::ManifestEntry*>& entries, bool update) {
  const auto b = store_.batch(entries);
  model_->train();
  std::optional<torch::NoGradGuard> ng;
  if (!update) ng.emplace();

  losses::Targets t{b.I, b.A, b.M, b.C_b};
  const bool predicts_image = model_->cfg.stage1.predict_image;
  losses::LossBreakdown loss;
  if (phase_ == 1) {
    loss = losses::stage1_loss(t, model_->stage1(b.J), cfg_.loss_weights, extractor_, predicts_image);
  } else if (phase_ == 2) {
    stage1::Stage1Output s1;
    {
      torch::NoGradGuard frozen;
      s1 = model_->stage1(b.J).detached();
    }
    const auto s2 = model_->stage2(b.J, s1);
    loss = losses::total_loss(t, s1, s2, cfg_.loss_weights, extractor_, predicts_image);
  } else {
    const auto o = model_->forward(b.J);
    loss = losses::total_loss(t, o.stage1, o.stage2, cfg_.loss_weights, extractor_, predicts_image);
  }

  StepRecord r;
  r.step = step_;
  r.epoch = epoch_;
  r.phase = phase_;
  r.L_b = loss.L_b.item<double>();
  r.L_r = loss.L_r.item<double>();
  r.L_i = loss.L_i.item<double>();
  r.L_f = loss.L_f.item<double>();
  r.L_m = loss.L_m.item<double>();
  r.total = loss.total.item<double>();
  if (!std::isfinite(r.total)) {
    const std::vector<std::string> ids = b.ids;
    fs::create_directories(cfg_.output_dir);
    std::ofstream(fs::path(cfg_.output_dir) / "nan_batch.json")
        << nlohmann::json{{"step", step_}, {"epoch", epoch_}, {"batch_ids", ids}, {"losses", r.to_json()}}.dump(2);
    std::string joined;
    for (const auto& id : ids) joined += (joined.empty() ? "" : ",") + id;
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(step_) + " (batch " + joined + ")", ids);
  }
  if (update) {
    optim_->zero_grad();
    loss.total.backward();
    optim_->step();
  }
  return r;
}

StepRecord Trainer::step() {
  if (phase_ == 1) {
    const int64_t phase1 = cfg_.phase1_epochs > 0 ? cfg_.phase1_epochs : std::max<int64_t>(1, cfg_.epochs / 2);
    // the epoch boundary is crossed inside next_batch_entries, so look one batch ahead
    if (cursor_ >= order_.size() && epoch_ + 1 >= phase1) enter_phase2();
  }
  const auto entries = next_batch_entries(true);
  auto r = compute(entries, true);
  ++step_;
  return r;
}

StepRecord Trainer::peek_loss() { return compute(next_batch_entries(false), false); }

metrics::MetricsReport Trainer::validate() {
  auto samples = score(model_, store_, split_.val, cfg_.batch_size);
  auto report = metrics::aggregate(samples);
  return report;
}

metrics::MetricsReport Trainer::score_train() {
  return metrics::aggregate(score(model_, store_, split_.train, cfg_.batch_size));
}

void Trainer::checkpoint(const fs::path& path, double best) {
  CheckpointMeta meta;
  meta.step = step_;
  meta.epoch = epoch_;
  meta.best_val_psnr = best;
  meta.extra = nlohmann::json{{"train", cfg_.to_json()}, {"extractor", extractor_->provenance_json()}}.dump();
  save_checkpoint(model_, meta, path);
}

RunRecord Trainer::run() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out(cfg_.output_dir);
  fs::create_directories(out / "checkpoints");
  std::ofstream log(out / "loss.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out / "loss.jsonl").string());

  RunRecord rec;
  rec.config = {{"train", cfg_.to_json()},
                {"model", model_->cfg.to_json()},
                {"fingerprint", model_->cfg.fingerprint()},
                {"extractor", extractor_->provenance_json()},
                {"manifest_seed", manifest_.rng_seed},
                {"train_ids", nlohmann::json::array()},
                {"val_ids", nlohmann::json::array()}};
  for (const auto* e : split_.train) rec.config["train_ids"].push_back(e->id);
  for (const auto* e : split_.val) rec.config["val_ids"].push_back(e->id);
  rec.source_fingerprint = RIRCI_SOURCE_FINGERPRINT;

  double best = -std::numeric_limits<double>::infinity();
  int64_t last_validated = -1;
  auto run_validation = [&]() {
    if (split_.val.empty() || last_validated == step_) return;
    last_validated = step_;
    ValidationRecord v{step_, epoch_, validate()};
    rec.validation.push_back(v);
    if (v.report.psnr > best) {
      best = v.report.psnr;
      checkpoint(out / "best.pt", best);
    }
  };

  while (true) {
    if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) break;
    if (cursor_ >= order_.size() && epoch_ + 1 >= cfg_.epochs) break;
    const auto r = step();
    rec.steps.push_back(r);
    log << r.to_json().dump() << '\n' << std::flush;
    if (cfg_.validate_every > 0 && step_ % cfg_.validate_every == 0) run_validation();
    if (cursor_ >= order_.size()) {
      if (cfg_.validate_every == 0) run_validation();
      if (cfg_.checkpoint_every > 0 && (epoch_ + 1) % cfg_.checkpoint_every == 0) {
        std::ostringstream name;
        name << "epoch_" << std::setw(4) << std::setfill('0') << epoch_ + 1 << ".pt";
        checkpoint(out / "checkpoints" / name.str(), best);
      }
    }
  }
  run_validation();
  checkpoint(out / "last.pt", best);
  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ofstream(out / "run.json") << rec.to_json().dump(2);
  return rec;
}

metrics::MetricsReport evaluate(const fs::path& checkpoint, const fs::path& manifest_path,
                                const EvaluateOptions& options) {
  const auto manifest = synthesis::DatasetManifest::load(manifest_path);
  const auto entries = manifest.split(options.split);
  if (entries.empty()) throw ContractError("evaluate: split '" + options.split + "' is empty");

  RirciModel model{nullptr};
  if (!options.oracle) {
    model = RirciModel(options.expected ? *options.expected : read_checkpoint_config(checkpoint));
    load_checkpoint(model, checkpoint);
  }
  SampleStore store(manifest, false);
  const auto samples = score(model, store, entries, options.batch_size, options.oracle);
  auto report = metrics::aggregate(samples);
  if (options.buckets) report.buckets = metrics::bucket_psnr(samples);
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    std::ofstream(options.out_dir / "report.json") << report.to_json().dump(2);
    std::ofstream(options.out_dir / "per_sample.csv") << metrics::to_csv(samples);
  }
  return report;
}

std::optional<fs::path> remove_watermark(const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                                         bool dump_intermediates) {
  RirciModel model(read_checkpoint_config(checkpoint));
  load_checkpoint(model, checkpoint);
  model->eval();
  torch::NoGradGuard ng;
  const auto image = load_image(input).rgb;
  const auto o = model->forward_padded(image.to_nchw());
  const auto result = ImageTensor::from_nchw(o.stage2.fused, true);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  save_image(result, output);
  if (!dump_intermediates) return std::nullopt;

  auto panel = [&](const torch::Tensor& nchw) {
    if (!nchw.defined()) return torch::zeros_like(result.data());
    auto t = nchw[0].permute({1, 2, 0});
    if (t.size(2) == 1) t = t.expand({-1, -1, 3});
    return t.clamp(0.0, 1.0);
  };
  const auto top = torch::cat({panel(o.stage1.mask), panel(o.stage1.watermark_component),
                               panel(o.stage1.background_component)}, 1);
  const auto bottom = torch::cat({panel(o.stage2.restored), panel(o.stage2.imagined), result.data()}, 1);
  const auto grid_path = output.parent_path() / (output.stem().string() + "_intermediates.png");
  save_image(ImageTensor::clamped(torch::cat({top, bottom}, 0)), grid_path);
  return grid_path;
}

}  // namespace rirci::harness
