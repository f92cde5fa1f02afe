#include "mst/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include "mst/attention_export.hpp"
#include "mst/checkpoint.hpp"
#include "mst/errors.hpp"
#include "mst/gradcheck_suite.hpp"
#include "mst/run_config.hpp"

namespace mst {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const std::string& config_path, const GlobalOptions& g) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  for (const auto& o : g.overrides) apply_override(config, o);
  if (g.seed) config.train.seed = *g.seed;
  return config;
}

int cmd_train(const GlobalOptions& g, const std::string& config_path, std::string data, std::string out_dir,
              const std::string& resume, std::ostream& out, std::ostream& err) {
  RunConfig config = resolve_config(config_path, g);
  if (!data.empty()) config.data = data;
  if (!out_dir.empty()) config.out = out_dir;
  if (config.data.empty()) throw ConfigError("no dataset: pass --data or set 'data' in the config");
  if (config.out.empty()) throw ConfigError("no output directory: pass --out or set 'out' in the config");

  DatasetManifest manifest = load_manifest(config.data);
  manifest.stats = config.stats;
  for (const auto& w : manifest.warnings) err << "warning: " << w << '\n';
  if (manifest.samples.empty()) throw ConfigError("manifest " + config.data.string() + " has no samples");
  if (!config.n_scenes_set) {
    config.model.n_scenes = manifest.scene_count();
  } else if (config.model.n_scenes != manifest.scene_count()) {
    throw ConfigError("n_scenes = " + std::to_string(config.model.n_scenes) + " but the manifest has " +
                      std::to_string(manifest.scene_count()) + " scenes");
  }
  config.model.validate();
  config.train.validate();

  Model<float> model(config.model, config.train.seed);
  std::vector<TrainExample> examples = load_examples(manifest, config.model.input_hw);
  Trainer trainer(model, std::move(examples), config.train);

  fs::create_directories(config.out);
  const fs::path ckpt_path = config.out / "checkpoint.msck";
  const fs::path log_path = config.out / "train_log.csv";
  if (!resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume);
    if (!(ckpt.config.model == config.model)) {
      throw CompatibilityError("checkpoint " + resume + " was written for a different model configuration");
    }
    restore_trainer(ckpt, trainer);
    err << "resumed from " << resume << " at step " << trainer.step_count() << '\n';
  }

  std::ofstream log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + log_path.string());
  if (resume.empty()) log << "step,loss,lr\n";
  trainer.run(&log, [&](const Trainer& t) {
    save_checkpoint(ckpt_path, t, config);
    err << "step " << t.step_count() << '/' << config.train.max_steps << ": checkpoint written\n";
  });
  if (trainer.step_count() == 0 || trainer.step_count() % config.train.eval_every != 0) {
    save_checkpoint(ckpt_path, trainer, config);
  }
  out << "steps=" << trainer.step_count() << '\n'
      << "checkpoint=" << ckpt_path.string() << '\n'
      << "log=" << log_path.string() << '\n';
  return kExitOk;
}

struct LoadedModel {
  Checkpoint ckpt;
  std::unique_ptr<Model<float>> model;
};

LoadedModel load_model(const std::string& path) {
  LoadedModel m{load_checkpoint(path), nullptr};
  m.model = std::make_unique<Model<float>>(m.ckpt.config.model, m.ckpt.config.train.seed);
  restore_model(m.ckpt, *m.model);
  return m;
}

std::string format_fixed(double v, int precision) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, std::string csv_path, std::ostream& out,
             std::ostream& err) {
  const LoadedModel m = load_model(checkpoint);
  const DatasetManifest manifest = load_manifest(data);
  for (const auto& w : manifest.warnings) err << "warning: " << w << '\n';
  if (manifest.scene_count() != m.model->config().n_scenes) {
    throw CompatibilityError("the checkpoint has " + std::to_string(m.model->config().n_scenes) +
                             " scene slots but the manifest lists " + std::to_string(manifest.scene_count()) +
                             " scenes");
  }
  std::vector<TrainExample> examples;
  examples.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) {
    examples.push_back(
        {load_image(s, manifest.root, m.model->config().input_hw, m.ckpt.config.stats), s.scene_id, s.pose});
  }
  if (examples.empty()) throw ConfigError("manifest " + data + " has no samples");
  const EvalResult result = evaluate(*m.model, examples);

  struct Row {
    std::string scene;
    std::size_t samples;
    double position, orientation, accuracy;
  };
  std::vector<Row> rows;
  for (const auto& [id, s] : result.summary.per_scene) {
    rows.push_back({manifest.scenes[id], s.samples, s.median_position_m, s.median_orientation_deg, s.scene_accuracy});
  }
  rows.push_back({"average", examples.size(), result.summary.median_position_m, result.summary.median_orientation_deg,
                  result.summary.scene_accuracy});

  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.scene.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %8s %14s %16s %9s\n", static_cast<int>(width), "scene", "samples",
                "median_pos_m", "median_ori_deg", "accuracy");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s %8zu %14.4f %16.3f %9.4f\n", static_cast<int>(width), r.scene.c_str(),
                  r.samples, r.position, r.orientation, r.accuracy);
    out << line;
  }

  if (csv_path.empty()) csv_path = (fs::path(checkpoint).parent_path() / "eval.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "scene,samples,median_position_m,median_orientation_deg,scene_accuracy\n";
  for (const auto& r : rows) {
    csv << r.scene << ',' << r.samples << ',' << format_fixed(r.position, 6) << ',' << format_fixed(r.orientation, 6)
        << ',' << format_fixed(r.accuracy, 6) << '\n';
  }
  if (!csv) throw IoError("write failed for " + csv_path);
  err << "wrote " << csv_path << '\n';
  return kExitOk;
}

int cmd_attention(const std::string& checkpoint, const std::string& image, const std::string& branch_name,
                  const std::string& target, std::ostream& out) {
  const LoadedModel m = load_model(checkpoint);
  const Branch branch = branch_name == "position" ? Branch::position : Branch::orientation;
  const Tensor<float> input = load_image(fs::path(image), m.model->config().input_hw, m.ckpt.config.stats);
  NoGradGuard no_grad;
  const ForwardOutput<float> fwd = m.model->forward(input, std::nullopt);
  const AttentionFiles files = export_attention(fwd, m.model->config(), branch, target);
  out << "heatmap=" << files.heatmap.string() << '\n'
      << "decoder_csv=" << files.decoder_csv.string() << '\n'
      << "selected_scene=" << fwd.selected_scene << '\n';
  return kExitOk;
}

int cmd_synth(const GlobalOptions& g, std::size_t scenes, std::size_t per_scene, std::size_t hw,
              const std::string& out_dir, std::ostream& out) {
  const DatasetManifest m = synth_dataset(g.seed.value_or(0), scenes, per_scene, hw);
  const fs::path manifest = write_dataset(m, out_dir);
  out << "manifest=" << manifest.string() << '\n' << "samples=" << m.samples.size() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scene absolute pose regression: training, evaluation and tooling", "mst"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for initialization, shuffling, dropout and synthesis");
  app.add_option("--set", g.overrides, "Config override key=value (repeatable)")->take_all();

  std::string config_path, data, out_dir, resume, checkpoint, csv, image, branch = "position", target;
  std::size_t scenes = 4, per_scene = 32, hw = 64;

  auto* train = app.add_subcommand("train", "Train a model on a manifest");
  train->add_option("--config", config_path, "key=value run configuration file")->check(CLI::ExistingFile);
  train->add_option("--data", data, "Dataset manifest");
  train->add_option("--out", out_dir, "Output directory for checkpoint and log");
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Report median pose errors and scene accuracy");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--csv", csv, "CSV report path (default: eval.csv next to the checkpoint)");

  auto* attention = app.add_subcommand("attention", "Export the final encoder attention heatmap");
  attention->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  attention->add_option("--image", image)->required()->check(CLI::ExistingFile);
  attention->add_option("--branch", branch)->check(CLI::IsMember({"position", "orientation"}));
  attention->add_option("--out", target, "Heatmap PGM path")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-scene dataset");
  synth->add_option("--scenes", scenes)->check(CLI::PositiveNumber);
  synth->add_option("--per-scene", per_scene)->check(CLI::PositiveNumber);
  synth->add_option("--hw", hw)->check(CLI::PositiveNumber);
  synth->add_option("--out", out_dir)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(g, config_path, data, out_dir, resume, out, err);
    if (*eval) return cmd_eval(checkpoint, data, csv, out, err);
    if (*attention) return cmd_attention(checkpoint, image, branch, target, out);
    if (*synth) return cmd_synth(g, scenes, per_scene, hw, out_dir, out);
    if (*gradcheck) {
      const auto reports = run_gradcheck_suite(g.seed.value_or(0), &out);
      bool ok = true;
      for (const auto& r : reports) ok = ok && r.passed;
      err << (ok ? "gradcheck: all operations pass\n" : "gradcheck: FAILED\n");
      return ok ? kExitOk : kExitFailure;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mst
