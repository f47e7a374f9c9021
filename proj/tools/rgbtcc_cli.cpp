// Command-line harness: dataset generation, training, evaluation, ablation,
// gradient checking and density rendering.

#include "rgbtcc/checkpoint.hpp"
#include "rgbtcc/config.hpp"
#include "rgbtcc/gradcheck.hpp"
#include "rgbtcc/render.hpp"
#include "rgbtcc/synthdata.hpp"
#include "rgbtcc/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace rgbtcc;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string manifest;
  std::string out;
  std::string checkpoint;
};

RunConfig resolve_config(const CommonFlags& f, RunConfig base = {}) {
  RunConfig c = f.config.empty() ? base : load_config(f.config, base);
  if (!f.variant.empty()) c.apply_variant(parse_variant(f.variant));
  if (f.seed) c.seed = *f.seed;
  c.validate();
  return c;
}

/// A dataset directory, or a manifest whose siblings hold the other splits.
fs::path split_manifest(const std::string& manifest, const std::string& split) {
  fs::path p(manifest);
  if (fs::is_directory(p)) return p / (split + ".tsv");
  return p.parent_path() / (split + ".tsv");
}

std::vector<Sample> load_split(const fs::path& manifest, const RunConfig& c) {
  return load_samples(read_manifest(manifest), c.grid_n());
}

fs::path ensure_out(const std::string& out) {
  fs::path p = out.empty() ? fs::path("out") : fs::path(out);
  fs::create_directories(p);
  return p;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool variant) {
  cmd->add_option("--config", f.config, "Config file (key = value)");
  cmd->add_option("--seed", f.seed, "Seed override");
  if (variant)
    cmd->add_option("--variant", f.variant, "baseline, mst, msd, full, no-count or no-multiscale")
        ->check(CLI::IsMember({"baseline", "mst", "msd", "full", "no-count", "no-multiscale"}));
}

int cmd_generate(const CommonFlags& f) {
  const RunConfig c = resolve_config(f);
  SceneConfig scene;
  scene.height = scene.width = c.image_size;
  scene.min_people = c.min_people;
  scene.max_people = c.max_people;
  const fs::path out = ensure_out(f.out);
  generate_dataset(out, c.seed, SplitSizes{c.train_scenes, c.val_scenes, c.test_scenes}, scene);
  std::cout << "wrote " << c.train_scenes << "/" << c.val_scenes << "/" << c.test_scenes << " scenes to " << out
            << '\n';
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& val_manifest) {
  const RunConfig c = resolve_config(f);
  const fs::path train_path = fs::is_directory(f.manifest) ? split_manifest(f.manifest, "train") : fs::path(f.manifest);
  const fs::path val_path = val_manifest.empty() ? split_manifest(f.manifest, "val") : fs::path(val_manifest);
  const auto train_set = load_split(train_path, c);
  std::vector<Sample> val;
  if (fs::exists(val_path)) val = load_split(val_path, c);
  const fs::path out = ensure_out(f.out);
  std::ofstream log(out / "train.log", std::ios::app);
  {
    std::ofstream cfg(out / "config.txt");
    cfg << format_config(c);
  }
  auto model = assemble_model(c);
  std::cout << "parameters: " << model->params().scalar_count() << ", train " << train_set.size() << ", val "
            << val.size() << '\n';
  TrainOptions opts;
  opts.log = &log;
  opts.progress = &std::cout;
  opts.checkpoint = out / "model.ckpt";
  const TrainResult r = train(*model, train_set, val, opts);
  std::cout << "steps " << r.steps << (r.early_stopped ? " (early stop)" : "") << ", best val GAME(0) "
            << r.best_val_game0 << " at step " << r.best_step << "\ncheckpoint " << *opts.checkpoint << '\n';
  return 0;
}

int cmd_eval(const CommonFlags& f) {
  const Checkpoint ck = read_checkpoint(f.checkpoint);
  auto model = load_model(ck);
  const fs::path path = fs::is_directory(f.manifest) ? split_manifest(f.manifest, "test") : fs::path(f.manifest);
  const auto samples = load_split(path, model->config());
  const MetricReport m = evaluate(*model, samples);
  const std::vector<std::string> names{"model"};
  const std::string table = format_metric_table(names, std::span<const MetricReport>(&m, 1));
  std::cout << table;
  if (!f.out.empty()) {
    const fs::path out = ensure_out(f.out);
    std::ofstream(out / "metrics.txt") << format_metric_keyvalues(m);
    std::ofstream(out / "metrics_table.txt") << table;
  }
  return 0;
}

int cmd_ablate(const CommonFlags& f) {
  const RunConfig c = resolve_config(f);
  const auto train_set = load_split(split_manifest(f.manifest, "train"), c);
  const auto val = load_split(split_manifest(f.manifest, "val"), c);
  const auto test = load_split(split_manifest(f.manifest, "test"), c);
  const auto variants = ablation_variants();
  const auto rows = ablate(c, variants, train_set, val, test, &std::cout);
  const std::string table = format_ablation_table(rows);
  std::cout << table;
  if (!f.out.empty()) std::ofstream(ensure_out(f.out) / "ablation.txt") << table;
  return 0;
}

int cmd_gradcheck(const CommonFlags& f) {
  const RunConfig c = resolve_config(f, gradcheck_config());
  GradcheckOptions opts;
  const GradcheckReport r = run_gradcheck(c, opts);
  std::cout << format_gradcheck(r, opts.rel_tol);
  return r.pass ? 0 : 1;
}

int cmd_render(const CommonFlags& f, int limit) {
  const Checkpoint ck = read_checkpoint(f.checkpoint);
  auto model = load_model(ck);
  const fs::path path = fs::is_directory(f.manifest) ? split_manifest(f.manifest, "test") : fs::path(f.manifest);
  const DatasetManifest manifest = read_manifest(path);
  const auto samples = load_samples(manifest, model->config().grid_n());
  const fs::path out = ensure_out(f.out);
  for (std::size_t i = 0; i < samples.size() && static_cast<int>(i) < limit; ++i) {
    const DensityMap d = model->predict(samples[i].rgb, samples[i].thermal);
    const fs::path target = out / (manifest.entries[i].rgb.stem().string() + "_density.pgm");
    render_density(d, target);
    std::cout << target.string() << "  count " << predicted_count(d) << "  gt " << samples[i].points.size() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-thermal crowd counting harness"};
  app.require_subcommand(1);
  CommonFlags f;
  std::string val_manifest;
  int limit = 8;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (train/val/test manifests)");
  add_common(gen, f, false);
  gen->add_option("--out", f.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, f, true);
  tr->add_option("--manifest", f.manifest, "Training manifest or dataset directory")->required();
  tr->add_option("--val-manifest", val_manifest, "Validation manifest (default: sibling val.tsv)");
  tr->add_option("--out", f.out, "Run directory for log and checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  ev->add_option("--manifest", f.manifest, "Test manifest or dataset directory")->required();
  ev->add_option("--out", f.out, "Directory for metric files");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate every ablation variant");
  add_common(ab, f, false);
  ab->add_option("--manifest", f.manifest, "Dataset directory or any of its manifests")->required();
  ab->add_option("--out", f.out, "Directory for the comparison table");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check on a small config");
  add_common(gc, f, true);

  auto* rd = app.add_subcommand("render", "Render predicted density maps");
  rd->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  rd->add_option("--manifest", f.manifest, "Manifest or dataset directory")->required();
  rd->add_option("--out", f.out, "Output directory");
  rd->add_option("--limit", limit, "Maximum number of images");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(f);
    if (*tr) return cmd_train(f, val_manifest);
    if (*ev) return cmd_eval(f);
    if (*ab) return cmd_ablate(f);
    if (*gc) return cmd_gradcheck(f);
    if (*rd) return cmd_render(f, limit);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
