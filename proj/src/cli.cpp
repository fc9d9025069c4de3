#include "scenegen/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scenegen/config.hpp"
#include "scenegen/datasets.hpp"
#include "scenegen/error.hpp"
#include "scenegen/metrics.hpp"
#include "scenegen/sampler.hpp"
#include "scenegen/training.hpp"

namespace scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PrepareArgs {
  bool toy = false;
  int n = 100;
  int size = 64;
  std::uint64_t seed = 0;
  std::string out;
  std::string validate;
  std::string split = "train";
};

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<long> max_steps;
  std::optional<int> epochs;
  std::optional<int> micro_batch;
  std::optional<int> accumulation;
  std::optional<double> lr_min;
  std::optional<double> lr_max;
  std::optional<long> checkpoint_interval;
};

struct GenerateArgs {
  std::string checkpoint;
  std::string conditions;
  std::string sampler;
  std::optional<int> steps;
  std::optional<double> ddim_eta;
  std::string ddim_variant;
  bool no_clip = false;
  std::optional<std::uint64_t> seed;
  std::string out;
  int batch_size = 8;
  int limit = 0;
  bool raw_weights = false;
};

struct EvaluateArgs {
  std::string real;
  std::string gen;
  std::string extractor;
  std::string out;
};

struct ExtractorArgs {
  std::string data;
  std::string out;
  int steps = 1500;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

void print_histogram(const DatasetManifest& m) {
  std::map<int, long> boxes;
  for (const auto& r : m.records) {
    for (const auto& b : r.boxes) ++boxes[b.class_id];
  }
  std::printf("records: %zu\n", m.records.size());
  std::printf("%-12s %8s\n", "class", "boxes");
  for (const auto& p : m.palette) {
    if (p.vehicle) std::printf("%-12s %8ld\n", p.name.c_str(), boxes[p.id]);
  }
}

int cmd_prepare(const PrepareArgs& a) {
  if (!a.validate.empty()) {
    const DatasetManifest m = load_manifest(a.validate);
    const auto problems = validate_dataset(m);
    if (!problems.empty()) {
      std::fprintf(stderr, "dataset %s is invalid:\n", a.validate.c_str());
      for (const auto& p : problems) std::fprintf(stderr, "  %s\n", p.c_str());
      return kExitFailure;
    }
    print_histogram(m);
    std::printf("dataset %s is valid\n", a.validate.c_str());
    return kExitOk;
  }
  if (!a.toy) throw CLI::ValidationError("prepare", "either --toy or --validate is required");
  if (a.out.empty()) throw CLI::ValidationError("prepare", "--out is required with --toy");
  const DatasetManifest m = generate_toy_scenes(a.n, a.size, a.seed, a.out, parse_split(a.split));
  print_histogram(m);
  return kExitOk;
}

int cmd_train(const TrainArgs& a) {
  std::ifstream in(a.config);
  if (!in) throw IoError("cannot open config " + a.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + a.config + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (a.seed) j["seed"] = *a.seed;
  if (!a.data.empty()) j["data"]["train"] = a.data;
  if (a.max_steps) j["train"]["max_steps"] = *a.max_steps;
  if (a.epochs) j["train"]["epochs"] = *a.epochs;
  if (a.micro_batch) j["train"]["micro_batch_size"] = *a.micro_batch;
  if (a.accumulation) j["train"]["accumulation_factor"] = *a.accumulation;
  if (a.lr_min) j["train"]["lr_min"] = *a.lr_min;
  if (a.lr_max) j["train"]["lr_max"] = *a.lr_max;
  if (a.checkpoint_interval) j["train"]["checkpoint_interval"] = *a.checkpoint_interval;
  const RunConfig cfg = run_config_from_json(j);
  if (cfg.data.train.empty()) throw ConfigError("data.train is not set");
  if (!fs::exists(cfg.data.train)) throw IoError("dataset path does not exist: " + cfg.data.train);

  fs::create_directories(a.out);
  {
    std::ofstream out(fs::path(a.out) / "config.json");
    out << to_json(cfg).dump(2) << '\n';
  }
  RunOptions opts;
  opts.resume = a.resume;
  opts.on_step = [](const StepStats& s) {
    if (s.step % 50 == 0) {
      std::printf("step %6ld  epoch %4ld  loss %.5f  lr %.3g  fg_weight %.4f%s\n", s.step, s.epoch, s.loss,
                  s.lr, s.fg_weight, s.control ? "  [control]" : "");
      std::fflush(stdout);
    }
  };
  const TrainingResult r = run_training(cfg, a.out, opts);
  std::printf("final checkpoint: %s\n", r.final_checkpoint.string().c_str());
  return kExitOk;
}

json boxes_json(const std::vector<BoundingBox>& boxes) {
  json arr = json::array();
  for (const auto& b : boxes) {
    arr.push_back({{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}, {"class_id", b.class_id}});
  }
  return arr;
}

int cmd_generate(const GenerateArgs& a) {
  LoadedModel loaded = load_trained_model(a.checkpoint, !a.raw_weights);
  const RunConfig cfg = run_config_from_json(loaded.config);
  SamplerConfig sc = cfg.sampler;
  if (!a.sampler.empty()) sc.kind = parse_sampler_kind(a.sampler);
  if (a.steps) sc.num_inference_steps = *a.steps;
  if (a.ddim_eta) sc.ddim_eta = *a.ddim_eta;
  if (!a.ddim_variant.empty()) sc.variant = parse_ddim_variant(a.ddim_variant);
  if (a.seed) sc.seed = *a.seed;
  if (a.no_clip) sc.clip_denoised = false;
  const NoiseSchedule sched = cfg.schedule.build();
  sc.validate(sched.num_steps());

  const DatasetManifest m = load_manifest(a.conditions);
  const int classes = static_cast<int>(m.palette.size());
  if (classes + 1 != cfg.model.denoiser.condition_channels) {
    throw DimensionError("conditions palette has " + std::to_string(classes) + " classes, model expects " +
                         std::to_string(cfg.model.denoiser.condition_channels - 1));
  }
  std::size_t count = m.records.size();
  if (a.limit > 0) count = std::min<std::size_t>(count, static_cast<std::size_t>(a.limit));
  fs::create_directories(a.out);
  SceneModel& model = loaded.model;
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(a.batch_size)) {
    const std::size_t end = std::min(count, start + static_cast<std::size_t>(a.batch_size));
    std::vector<SceneRecord> recs;
    for (std::size_t i = start; i < end; ++i) {
      SceneRecord r = load_record(m, i);
      r.image = Tensor();
      recs.push_back(std::move(r));
    }
    std::vector<const SceneAnnotation*> scenes;
    std::vector<std::string> prompts;
    std::vector<std::uint64_t> keys;
    for (const auto& r : recs) {
      scenes.push_back(&r.annotation);
      prompts.push_back(r.prompt);
      keys.push_back(fnv1a(r.id));
    }
    const ConditionBatch cond = model.conditions(scenes, prompts);
    const auto images = generate(model.denoiser(), cond, sc, sched, keys);
    for (std::size_t k = 0; k < recs.size(); ++k) {
      const auto& r = recs[k];
      write_png(fs::path(a.out) / (r.id + ".png"), images[k]);
      const json side = {{"id", r.id},
                         {"prompt", r.prompt},
                         {"boxes", boxes_json(r.annotation.boxes)},
                         {"sampler", to_string(sc.kind)},
                         {"steps", sc.kind == SamplerKind::ddim ? sc.num_inference_steps : sched.num_steps()},
                         {"ddim_eta", sc.ddim_eta},
                         {"ddim_variant", sc.variant == DdimVariant::standard ? "standard" : "literal"},
                         {"clip_denoised", sc.clip_denoised},
                         {"seed", sc.seed},
                         {"checkpoint", a.checkpoint},
                         {"checkpoint_step", loaded.step}};
      std::ofstream out(fs::path(a.out) / (r.id + ".json"));
      out << side.dump(2) << '\n';
      if (!out) throw IoError("cannot write sidecar for " + r.id);
    }
    std::printf("generated %zu / %zu\n", end, count);
    std::fflush(stdout);
  }
  return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a) {
  FeatureExtractor fx = FeatureExtractor::load(a.extractor);
  const EvaluationReport r = evaluate_run(a.real, a.gen, fx);
  std::fputs(r.table().c_str(), stdout);
  if (!a.out.empty()) {
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    f << r.to_json().dump(2) << '\n';
    if (!f) throw IoError("cannot write " + a.out);
  }
  return kExitOk;
}

int cmd_train_extractor(const ExtractorArgs& a) {
  const DatasetManifest m = load_manifest(a.data);
  std::vector<SceneRecord> data;
  for (auto& r : load_records(m)) {
    if (!r.image.empty()) data.push_back(std::move(r));
  }
  if (data.empty()) throw ValidationError("dataset " + a.data + " has no images");
  ExtractorConfig ec;
  ec.image_size = data.front().image.w();
  ec.num_targets = static_cast<int>(extractor_targets(data.front().annotation, m.palette).size());
  FeatureExtractor fx(ec, a.seed);
  ExtractorTrainConfig tc;
  tc.steps = a.steps;
  tc.batch_size = a.batch_size;
  tc.seed = a.seed;
  const ExtractorTrainResult r = train_feature_extractor(fx, data, m.palette, tc);
  fx.save(a.out);
  std::printf("extractor loss %.5f -> %.5f, saved %s\n", r.first_loss, r.final_loss, a.out.c_str());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"scenegen: condition-driven scene generation at desk scale"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Build a toy dataset or validate an existing one");
  prepare->add_flag("--toy", prep.toy, "Render procedural toy scenes");
  prepare->add_option("--n", prep.n, "Number of scenes")->check(CLI::PositiveNumber);
  prepare->add_option("--size", prep.size, "Scene size in pixels (32, 64 or 128)");
  prepare->add_option("--seed", prep.seed, "Generator seed");
  prepare->add_option("--out", prep.out, "Output dataset directory");
  prepare->add_option("--split", prep.split, "Split assigned to generated records")
      ->check(CLI::IsMember({"train", "val", "generate-only"}));
  prepare->add_option("--validate", prep.validate, "Validate the dataset at this path and exit");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the denoiser from a run config");
  train->add_option("--config", tr.config, "Run config (JSON)")->required();
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_option("--resume", tr.resume, "Resume from this checkpoint");
  train->add_option("--data", tr.data, "Override data.train");
  train->add_option("--seed", tr.seed, "Override seed");
  train->add_option("--max-steps", tr.max_steps, "Override train.max_steps");
  train->add_option("--epochs", tr.epochs, "Override train.epochs");
  train->add_option("--micro-batch", tr.micro_batch, "Override train.micro_batch_size");
  train->add_option("--accumulation", tr.accumulation, "Override train.accumulation_factor");
  train->add_option("--lr-min", tr.lr_min, "Override train.lr_min");
  train->add_option("--lr-max", tr.lr_max, "Override train.lr_max");
  train->add_option("--checkpoint-interval", tr.checkpoint_interval, "Override train.checkpoint_interval");

  GenerateArgs gen;
  auto* generate_cmd = app.add_subcommand("generate", "Generate images for a conditions manifest");
  generate_cmd->add_option("--checkpoint", gen.checkpoint, "Training checkpoint")->required();
  generate_cmd->add_option("--conditions", gen.conditions, "Dataset or conditions-only manifest")->required();
  generate_cmd->add_option("--sampler", gen.sampler, "ddpm or ddim (default from config)")
      ->check(CLI::IsMember({"ddpm", "ddim"}));
  generate_cmd->add_option("--steps", gen.steps, "DDIM inference steps")->check(CLI::PositiveNumber);
  generate_cmd->add_option("--ddim-eta", gen.ddim_eta, "DDIM noise scale")->check(CLI::NonNegativeNumber);
  generate_cmd->add_option("--ddim-variant", gen.ddim_variant, "standard or literal DDIM update")
      ->check(CLI::IsMember({"standard", "literal"}));
  generate_cmd->add_option("--seed", gen.seed, "Sampler seed");
  generate_cmd->add_option("--out", gen.out, "Output directory")->required();
  generate_cmd->add_option("--batch-size", gen.batch_size, "Images per forward pass")->check(CLI::PositiveNumber);
  generate_cmd->add_option("--limit", gen.limit, "Generate at most this many records (0 = all)")
      ->check(CLI::NonNegativeNumber);
  generate_cmd->add_flag("--no-clip", gen.no_clip, "Do not clamp clean-image estimates to [-1, 1]");
  generate_cmd->add_flag("--raw-weights", gen.raw_weights, "Use raw instead of EMA weights");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "FID and D_pix of generated versus real images");
  evaluate->add_option("--real", ev.real, "Directory of real images")->required();
  evaluate->add_option("--gen", ev.gen, "Directory of generated images")->required();
  evaluate->add_option("--extractor", ev.extractor, "Feature extractor checkpoint")->required();
  evaluate->add_option("--out", ev.out, "Report JSON path");

  ExtractorArgs ex;
  auto* extractor = app.add_subcommand("train-extractor", "Train the feature extractor used by evaluate");
  extractor->add_option("--data", ex.data, "Dataset with images and masks")->required();
  extractor->add_option("--out", ex.out, "Extractor checkpoint path")->required();
  extractor->add_option("--steps", ex.steps, "Optimizer steps")->check(CLI::PositiveNumber);
  extractor->add_option("--batch-size", ex.batch_size, "Batch size")->check(CLI::PositiveNumber);
  extractor->add_option("--seed", ex.seed, "Seed");

  try {
    app.parse(argc, argv);
    if (prepare->parsed()) return cmd_prepare(prep);
    if (train->parsed()) return cmd_train(tr);
    if (generate_cmd->parsed()) return cmd_generate(gen);
    if (evaluate->parsed()) return cmd_evaluate(ev);
    if (extractor->parsed()) return cmd_train_extractor(ex);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace scenegen
