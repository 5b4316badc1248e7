#include "rirci/harness.hpp"
#include "rirci/procedural.hpp"

#include "criteria.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace rirci;

namespace {

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

int run_synthesize(const fs::path& backgrounds, const fs::path& watermarks, const fs::path& out,
                   const std::string& preset, int64_t count, uint64_t seed, int64_t canvas, const std::string& split,
                   std::optional<double> low, std::optional<double> high) {
  auto cfg = preset == "pw" ? synthesis::DatasetConfig::pw() : synthesis::DatasetConfig::hwvoc();
  cfg.count = count;
  cfg.seed = seed;
  cfg.canvas = canvas;
  cfg.split = split;
  if (low) cfg.opacity.low = *low;
  if (high) cfg.opacity.high = *high;
  const auto m = synthesis::generate_dataset(backgrounds, watermarks, cfg, out);
  std::cout << "wrote " << m.entries.size() << " samples to " << (out / "manifest.json").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visible watermark removal: dataset synthesis, training, evaluation and inference"};
  app.require_subcommand(1);

  auto* sources = app.add_subcommand("make-sources", "Write procedural backgrounds and RGBA logo assets");
  fs::path src_out;
  int n_bg = 64, n_wm = 16;
  uint64_t src_seed = 0;
  int64_t src_size = 256;
  sources->add_option("--out", src_out, "Output directory")->required();
  sources->add_option("--backgrounds", n_bg, "Number of backgrounds");
  sources->add_option("--watermarks", n_wm, "Number of logo assets");
  sources->add_option("--seed", src_seed, "Seed");
  sources->add_option("--size", src_size, "Background side length");

  auto* synth = app.add_subcommand("synthesize", "Composite watermarks onto backgrounds and write a manifest");
  fs::path syn_bg, syn_wm, syn_out;
  std::string preset = "hwvoc", syn_split = "train";
  int64_t syn_count = 100, canvas = 256;
  uint64_t syn_seed = 0;
  std::optional<double> op_low, op_high;
  synth->add_option("--backgrounds", syn_bg, "Directory of background images")->required();
  synth->add_option("--watermarks", syn_wm, "Directory of RGBA watermark assets")->required();
  synth->add_option("--out", syn_out, "Dataset directory")->required();
  synth->add_option("--preset", preset, "Opacity preset: hwvoc (0.5,1) or pw (0.1,1)")
      ->check(CLI::IsMember({"hwvoc", "pw"}));
  synth->add_option("--count", syn_count, "Number of samples");
  synth->add_option("--seed", syn_seed, "Seed");
  synth->add_option("--canvas", canvas, "Canvas side length");
  synth->add_option("--split", syn_split, "Split tag written to every entry");
  synth->add_option("--opacity-low", op_low, "Lower opacity bound (overrides the preset)");
  synth->add_option("--opacity-high", op_high, "Upper opacity bound (overrides the preset)");

  auto* train = app.add_subcommand("train", "Train a model");
  std::optional<fs::path> train_config;
  std::map<std::string, std::string> overrides;
  std::map<std::string, std::string> flag_values;
  train->add_option("--config", train_config, "Flat key = value config file");
  for (const auto& key : harness::TrainConfig::keys()) {
    train->add_option(flag_name(key), flag_values[key], "Overrides config key " + key);
  }

  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a manifest split");
  fs::path ev_ckpt, ev_manifest, ev_out;
  harness::EvaluateOptions ev;
  std::string ev_size, ev_variant;
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint file");
  eval->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
  eval->add_option("--split", ev.split, "Split tag");
  eval->add_flag("--buckets", ev.buckets, "Add opacity-bucketed PSNR");
  eval->add_flag("--oracle", ev.oracle, "Score ground truth as the prediction");
  eval->add_option("--batch-size", ev.batch_size, "Inference batch size");
  eval->add_option("--out", ev_out, "Directory for report.json and per_sample.csv");
  eval->add_option("--model-size", ev_size, "Expected architecture size (full or tiny)");
  eval->add_option("--variant", ev_variant, "Expected architecture variant");

  auto* remove = app.add_subcommand("remove", "Remove the watermark from one image");
  fs::path rm_ckpt, rm_in, rm_out;
  bool dump = false;
  remove->add_option("--checkpoint", rm_ckpt, "Checkpoint file")->required();
  remove->add_option("--input", rm_in, "Watermarked image")->required();
  remove->add_option("--output", rm_out, "Output PNG")->required();
  remove->add_flag("--dump-intermediates", dump, "Also write the mask/component/path grid");

  auto* selftest = app.add_subcommand("selftest", "Run the oracle and property checks");
  bool full = false;
  selftest->add_flag("--full", full, "Include the training criteria (slow)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sources) {
      const auto dirs = procedural::write_sources(src_out, n_bg, n_wm, src_seed, src_size);
      std::cout << "backgrounds: " << dirs.backgrounds.string() << "\nwatermarks: " << dirs.watermarks.string() << '\n';
      return 0;
    }
    if (*synth) return run_synthesize(syn_bg, syn_wm, syn_out, preset, syn_count, syn_seed, canvas, syn_split, op_low, op_high);
    if (*train) {
      for (const auto& key : harness::TrainConfig::keys()) {
        if (train->count(flag_name(key)) > 0) overrides[key] = flag_values[key];
      }
      auto cfg = harness::resolve_config(train_config, overrides);
      if (cfg.manifest.empty()) throw ContractError("train: no manifest (set manifest in the config or --manifest)");
      harness::Trainer trainer(cfg, synthesis::DatasetManifest::load(cfg.manifest));
      const auto rec = trainer.run();
      std::cout << "steps: " << rec.steps.size() << "  final loss: " << (rec.steps.empty() ? 0.0 : rec.steps.back().total)
                << "  wall clock: " << rec.wall_clock_seconds << " s\n";
      if (!rec.validation.empty()) std::cout << "last validation: " << rec.validation.back().report.to_json().dump() << '\n';
      return 0;
    }
    if (*eval) {
      if (ev_ckpt.empty() && !ev.oracle) throw ContractError("evaluate: --checkpoint is required unless --oracle");
      if (!ev_size.empty() || !ev_variant.empty()) {
        harness::TrainConfig tc;
        if (!ev_size.empty()) tc.model_size = ev_size;
        if (!ev_variant.empty()) tc.variant = harness::variant_from_string(ev_variant);
        ev.expected = tc.model_config();
      }
      ev.out_dir = ev_out;
      std::cout << harness::evaluate(ev_ckpt, ev_manifest, ev).to_json().dump(2) << '\n';
      return 0;
    }
    if (*remove) {
      const auto grid = harness::remove_watermark(rm_ckpt, rm_in, rm_out, dump);
      std::cout << "wrote " << rm_out.string() << '\n';
      if (grid) std::cout << "wrote " << grid->string() << '\n';
      return 0;
    }
    if (*selftest) {
      const auto results = criteria::run_all(full ? criteria::Scope::All : criteria::Scope::Quick, std::cout);
      return criteria::all_passed(results) ? 0 : 1;
    }
  } catch (const FingerprintMismatch& e) {
    std::cerr << "error: " << e.what() << "\n" << e.diff();
    return 3;
  } catch (const harness::NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
