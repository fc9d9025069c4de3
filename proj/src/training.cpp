#include "scenegen/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "scenegen/config.hpp"
#include "scenegen/error.hpp"

namespace scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
  if (max_steps == 0 && epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (micro_batch_size < 1) throw ConfigError("train.micro_batch_size must be >= 1");
  if (accumulation_factor < 1) throw ConfigError("train.accumulation_factor must be >= 1");
  if (!(lr_min > 0.0 && lr_min < lr_max)) throw ConfigError("train: need 0 < lr_min < lr_max");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("train.warmup_fraction must lie in [0, 1)");
  }
  if (!(final_lr_divisor >= 1.0)) throw ConfigError("train.final_lr_divisor must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("train.grad_clip_norm must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1)");
  if (checkpoint_interval < 1) throw ConfigError("train.checkpoint_interval must be >= 1");
  if (!(base_fraction >= 0.0 && base_fraction <= 1.0)) {
    throw ConfigError("train.base_fraction must lie in [0, 1]");
  }
  WeightScheduleConfig ws = weight_schedule;
  ws.total_steps = 1;
  ws.validate();
}

long TrainConfig::total_steps(std::size_t dataset_size) const {
  if (max_steps > 0) return max_steps;
  const long per_step = static_cast<long>(micro_batch_size) * accumulation_factor;
  const long n = static_cast<long>(dataset_size);
  return std::max(1L, epochs * ((n + per_step - 1) / per_step));
}

long TrainConfig::base_steps(std::size_t dataset_size) const {
  return std::lround(base_fraction * static_cast<double>(total_steps(dataset_size)));
}

double onecycle_lr(long step, long total_steps, double lr_min, double lr_max,
                   double warmup_fraction, double final_divisor) {
  if (total_steps < 1) throw RangeError("onecycle_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) {
    throw RangeError("onecycle_lr: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  }
  const double pi = std::numbers::pi;
  const double s = static_cast<double>(step);
  const double warm = warmup_fraction * static_cast<double>(total_steps);
  if (s <= warm && warm > 0.0) {
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 - std::cos(pi * s / warm));
  }
  const double floor_lr = lr_min / final_divisor;
  const double p = (s - warm) / (static_cast<double>(total_steps) - warm);
  return floor_lr + (lr_max - floor_lr) * 0.5 * (1.0 + std::cos(pi * p));
}

EmaState make_ema(const nn::ParamRefs& params, double decay) {
  EmaState ema;
  ema.decay = decay;
  for (const auto* p : params) ema.shadow.push_back({p->name, p->value});
  return ema;
}

void ema_update_in_place(EmaState& ema, const nn::ParamRefs& params, double decay) {
  if (ema.shadow.size() != params.size()) {
    throw DimensionError("ema_update: " + std::to_string(ema.shadow.size()) + " shadows for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& s = ema.shadow[i];
    const auto& p = *params[i];
    if (s.tensor.shape() != p.value.shape() || s.name != p.name) {
      throw DimensionError("ema_update: shadow '" + s.name + "' " + s.tensor.shape().str() +
                           " does not match parameter '" + p.name + "' " + p.value.shape().str());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    real* s = ema.shadow[i].tensor.data();
    const real* v = params[i]->value.data();
    const std::size_t n = params[i]->value.size();
    for (std::size_t k = 0; k < n; ++k) {
      s[k] = static_cast<real>(decay * s[k] + (1.0 - decay) * v[k]);
    }
  }
  ++ema.steps;
}

EmaState ema_update(const EmaState& ema, const nn::ParamRefs& params) {
  EmaState out = ema;
  ema_update_in_place(out, params, ema.decay);
  return out;
}

void apply_ema(const EmaState& ema, const nn::ParamRefs& params) {
  for (const auto& s : ema.shadow) {
    auto it = std::find_if(params.begin(), params.end(), [&](auto* p) { return p->name == s.name; });
    if (it == params.end()) throw StateError("apply_ema: no parameter '" + s.name + "'");
    if ((*it)->value.shape() != s.tensor.shape()) {
      throw DimensionError("apply_ema: shape mismatch for '" + s.name + "'");
    }
    (*it)->value = s.tensor;
  }
}

void AdamW::step(const nn::ParamRefs& params, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (auto* p : params) {
    if (!p->trainable || p->grad.empty()) continue;
    auto& st = state_[p->name];
    if (st.m.empty()) {
      st.m = Tensor(p->value.shape());
      st.v = Tensor(p->value.shape());
    }
    real* w = p->value.data();
    const real* g = p->grad.data();
    real* m = st.m.data();
    real* v = st.v.data();
    const std::size_t n = p->value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
      const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      m[i] = static_cast<real>(mi);
      v[i] = static_cast<real>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_) + weight_decay_ * w[i];
      w[i] = static_cast<real>(w[i] - lr * update);
    }
  }
}

double grad_norm(const nn::ParamRefs& params) {
  double sum = 0.0;
  for (const auto* p : params) {
    for (real g : p->grad.vec()) sum += static_cast<double>(g) * g;
  }
  return std::sqrt(sum);
}

namespace {

// Salts separating the independent random streams of a training run.
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kAugmentStream = 0x4155;
constexpr std::uint64_t kNoiseStream = 0x4e4f;

Tensor box_channel(const Tensor& spatial) {
  const int c = spatial.c() - 1;
  Tensor out(spatial.n(), 1, spatial.h(), spatial.w());
  const std::size_t plane = spatial.shape().plane();
  for (int n = 0; n < spatial.n(); ++n) {
    const real* src = spatial.sample(n) + c * plane;
    std::copy(src, src + plane, out.sample(n));
  }
  return out;
}

}  // namespace

Trainer::Trainer(const ModelConfig& model_cfg, const NoiseSchedule& sched,
                 const TrainConfig& cfg, std::vector<SceneRecord> data)
    : model_cfg_(model_cfg), sched_(sched), cfg_(cfg), data_(std::move(data)) {
  cfg_.validate();
  if (data_.empty()) throw ValidationError("training needs at least one record");
  const int size = model_cfg_.denoiser.image_size;
  for (const auto& r : data_) {
    if (r.image.empty()) throw ValidationError("training record '" + r.id + "' has no image");
    if (r.image.h() != size || r.image.w() != size) {
      throw DimensionError("record '" + r.id + "' is " + std::to_string(r.image.w()) + "x" +
                           std::to_string(r.image.h()) + " but the model resolution is " +
                           std::to_string(size));
    }
  }
  model_ = SceneModel(model_cfg_, cfg_.seed);
  model_.denoiser().set_noise_levels(sched_);
  total_ = cfg_.total_steps(data_.size());
  base_ = cfg_.base_steps(data_.size());
  cfg_.weight_schedule.total_steps = total_;
  cfg_.weight_schedule.validate();
  if (base_ == 0) model_.attach_control_branch();
  optim_ = AdamW(cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay);
  ema_ = make_ema(model_.trainable_parameters(), cfg_.ema_decay);
}

void Trainer::enter_control_phase() {
  apply_ema(ema_, model_.parameters());
  model_.attach_control_branch();
  optim_ = AdamW(cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay);
  ema_ = make_ema(model_.trainable_parameters(), cfg_.ema_decay);
}

double Trainer::lr_at(long step) const {
  if (step < base_) {
    return onecycle_lr(step, base_, cfg_.lr_min, cfg_.lr_max, cfg_.warmup_fraction,
                       cfg_.final_lr_divisor);
  }
  return onecycle_lr(step - base_, total_ - base_, cfg_.lr_min, cfg_.lr_max,
                     cfg_.warmup_fraction, cfg_.final_lr_divisor);
}

std::size_t Trainer::record_at(long position) const {
  const long n = static_cast<long>(data_.size());
  const long epoch = position / n;
  if (epoch != perm_epoch_) {
    perm_.resize(data_.size());
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng = make_rng({cfg_.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = perm_.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(perm_[i - 1], perm_[pick(rng)]);
    }
    perm_epoch_ = epoch;
  }
  return perm_[position % n];
}

MicroBatch Trainer::make_micro_batch(long first_position, int count) const {
  MicroBatch mb;
  std::vector<Tensor> images, noises;
  for (int j = 0; j < count; ++j) {
    const long pos = first_position + j;
    const auto key = static_cast<std::uint64_t>(pos);
    SceneRecord rec = data_[record_at(pos)];
    if (cfg_.augment) {
      Rng aug = make_rng({cfg_.seed, kAugmentStream, key});
      rec = augment(rec, aug);
    }
    Rng rng = make_rng({cfg_.seed, kNoiseStream, key});
    std::uniform_int_distribution<int> pick_t(0, sched_.num_steps() - 1);
    mb.timesteps.push_back(pick_t(rng));
    noises.push_back(randn(rec.image.shape(), rng));
    images.push_back(std::move(rec.image));
    mb.prompts.push_back(rec.prompt);
    mb.scenes.push_back(std::move(rec.annotation));
  }
  mb.x0 = stack_batch(images);
  mb.eps = stack_batch(noises);
  return mb;
}

double Trainer::train_step(const MicroBatch& batch, long global_step, double grad_scale,
                           double* inbox_sum, double* inbox_count) {
  const int size = model_cfg_.denoiser.image_size;
  if (batch.x0.h() != size || batch.x0.w() != size) {
    throw DimensionError("batch resolution " + batch.x0.shape().str() +
                         " does not match model size " + std::to_string(size));
  }
  std::vector<const SceneAnnotation*> scenes;
  for (const auto& s : batch.scenes) scenes.push_back(&s);
  ConditionBatch cond = model_.conditions(scenes, batch.prompts);
  const Tensor x_t = forward_diffuse(batch.x0, batch.timesteps, batch.eps, sched_);
  Tensor pred = model_.denoiser().forward(x_t, batch.timesteps, cond);

  std::vector<std::vector<BoundingBox>> boxes;
  for (const auto& s : batch.scenes) {
    if (s.width != size || s.height != size) {
      throw DimensionError("annotation size does not match model size");
    }
    boxes.push_back(s.boxes);
  }
  const WeightMatrix full = build_weight_matrix(boxes, static_cast<double>(global_step),
                                                cfg_.weight_schedule, batch.x0.n(), size, size);
  const WeightMatrix w = downsample_weight(full, pred.h(), pred.w());
  LossWithGrad lg = weighted_diffusion_loss_with_grad(batch.eps, pred, w);
  lg.grad *= static_cast<real>(grad_scale);
  const Tensor g_text = model_.denoiser().backward(lg.grad);
  model_.backward_text(g_text);

  if (inbox_sum && inbox_count) {
    const RegionError re = region_squared_error(batch.eps, pred, box_channel(cond.spatial));
    *inbox_sum += re.sum;
    *inbox_count += re.count;
  }
  return lg.loss;
}

StepStats Trainer::step() {
  if (step_ >= total_) throw StateError("training already finished");
  if (!model_.has_control() && step_ >= base_) enter_control_phase();
  const nn::ParamRefs params = model_.trainable_parameters();
  nn::zero_grad(params);
  const int accum = cfg_.accumulation_factor;
  const int micro = cfg_.micro_batch_size;
  double loss = 0.0, in_sum = 0.0, in_count = 0.0;
  for (int k = 0; k < accum; ++k) {
    const long first = (step_ * accum + k) * static_cast<long>(micro);
    const MicroBatch mb = make_micro_batch(first, micro);
    loss += train_step(mb, step_, 1.0 / accum, &in_sum, &in_count) / accum;
  }
  if (grad_hook) grad_hook(params);
  if (!std::isfinite(loss)) {
    throw NumericalError("non-finite loss at step " + std::to_string(step_));
  }
  for (const auto* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericalError("non-finite gradient in '" + p->name + "' at step " + std::to_string(step_));
    }
  }
  if (cfg_.grad_clip_norm > 0.0) {
    const double norm = grad_norm(params);
    if (norm > cfg_.grad_clip_norm) {
      const real scale = static_cast<real>(cfg_.grad_clip_norm / norm);
      for (auto* p : params) p->grad *= scale;
    }
  }
  const double lr = lr_at(step_);
  optim_.step(params, lr);
  double decay = cfg_.ema_decay;
  if (cfg_.ema_warmup) {
    const double n = static_cast<double>(ema_.steps);
    decay = std::min(decay, (1.0 + n) / (10.0 + n));
  }
  ema_update_in_place(ema_, params, decay);

  StepStats st;
  st.step = step_;
  st.epoch = step_ * accum * micro / static_cast<long>(data_.size());
  st.loss = loss;
  st.lr = lr;
  st.fg_weight = weight_at_step(static_cast<double>(step_), cfg_.weight_schedule);
  st.inbox_mse = in_count > 0 ? in_sum / in_count : 0.0;
  st.control = model_.has_control();
  ++step_;
  return st;
}

Archive Trainer::state_archive() {
  Archive a;
  a.meta = {{"step", step_},
            {"total_steps", total_},
            {"base_steps", base_},
            {"has_control", model_.has_control()},
            {"adam_steps", optim_.steps()},
            {"ema_steps", ema_.steps},
            {"ema_decay", ema_.decay}};
  for (auto* p : model_.parameters()) a.tensors.push_back({"param/" + p->name, p->value});
  for (const auto& s : ema_.shadow) a.tensors.push_back({"ema/" + s.name, s.tensor});
  for (const auto& [name, st] : optim_.state()) {
    a.tensors.push_back({"adam_m/" + name, st.m});
    a.tensors.push_back({"adam_v/" + name, st.v});
  }
  return a;
}

namespace {

void load_parameters(const Archive& a, const nn::ParamRefs& params) {
  for (auto* p : params) {
    const Tensor& t = a.get("param/" + p->name);
    if (t.shape() != p->value.shape()) {
      throw DimensionError("checkpoint tensor '" + p->name + "' is " + t.shape().str() +
                           ", model expects " + p->value.shape().str());
    }
    p->value = t;
  }
}

}  // namespace

void Trainer::load_state(const Archive& a) {
  const long total = a.meta.at("total_steps").get<long>();
  if (total != total_ || a.meta.at("base_steps").get<long>() != base_) {
    throw StateError("checkpoint step plan does not match the trainer");
  }
  if (a.meta.at("has_control").get<bool>() && !model_.has_control()) {
    model_.attach_control_branch();
  }
  load_parameters(a, model_.parameters());
  const nn::ParamRefs trainable = model_.trainable_parameters();
  optim_ = AdamW(cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay);
  optim_.set_steps(a.meta.at("adam_steps").get<long>());
  for (const auto* p : trainable) {
    const Tensor* m = a.find("adam_m/" + p->name);
    const Tensor* v = a.find("adam_v/" + p->name);
    if (m && v) optim_.state()[p->name] = {*m, *v};
  }
  ema_ = make_ema(trainable, a.meta.at("ema_decay").get<double>());
  for (auto& s : ema_.shadow) s.tensor = a.get("ema/" + s.name);
  ema_.steps = a.meta.at("ema_steps").get<long>();
  step_ = a.meta.at("step").get<long>();
}

fs::path checkpoint_path(const fs::path& out_dir, long step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%06ld.ckpt", step);
  return out_dir / "checkpoints" / name;
}

namespace {

std::string csv_row(const StepStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%.9g,%.9g,%.17g", s.step, s.epoch, s.loss, s.lr, s.fg_weight);
  return buf;
}

// Keeps the header and the rows for steps below `step`.
void truncate_metrics(const fs::path& path, long step) {
  std::vector<std::string> keep;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (std::stol(line.substr(0, line.find(','))) < step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

std::vector<SceneRecord> training_records(const RunConfig& cfg) {
  if (cfg.data.train.empty()) throw ConfigError("data.train is not set");
  if (!fs::exists(cfg.data.train)) throw IoError("dataset path does not exist: " + cfg.data.train);
  const DatasetManifest manifest = load_manifest(cfg.data.train);
  const int classes = static_cast<int>(manifest.palette.size());
  if (classes + 1 != cfg.model.denoiser.condition_channels) {
    throw ConfigError("dataset palette has " + std::to_string(classes) + " classes but model.num_classes is " +
                      std::to_string(cfg.model.denoiser.condition_channels - 1));
  }
  std::vector<SceneRecord> out;
  for (auto& r : load_records(manifest)) {
    if (r.split == Split::train) out.push_back(std::move(r));
  }
  if (out.empty()) throw ValidationError("dataset " + cfg.data.train + " has no train records");
  return out;
}

}  // namespace

TrainingResult run_training(const RunConfig& cfg, const fs::path& out_dir, const RunOptions& opts) {
  cfg.validate();
  const json cfg_json = to_json(cfg);
  const std::string hash = config_hash(cfg_json);
  Archive resume_state;
  if (!opts.resume.empty()) {
    resume_state = load_archive(opts.resume);
    const std::string stored = resume_state.meta.value("config_hash", std::string());
    if (stored != hash) {
      std::string msg = "config hash " + hash + " does not match checkpoint " + stored + ":";
      for (const auto& d : config_diff(resume_state.meta.value("config", json::object()), cfg_json)) {
        msg += "\n  " + d;
      }
      throw ConfigError(msg);
    }
  }

  Trainer trainer(cfg.model, cfg.schedule.build(), cfg.train, training_records(cfg));
  if (opts.grad_hook) trainer.grad_hook = opts.grad_hook;
  if (!opts.resume.empty()) trainer.load_state(resume_state);

  fs::create_directories(out_dir / "checkpoints");
  const fs::path metrics = out_dir / "metrics.csv";
  if (!opts.resume.empty() && fs::exists(metrics)) {
    truncate_metrics(metrics, trainer.global_step());
  } else {
    std::ofstream out(metrics, std::ios::trunc);
    if (!out) throw IoError("cannot write " + metrics.string());
    out << "step,epoch,loss,lr,fg_weight\n";
  }
  std::ofstream log(metrics, std::ios::app);
  if (!log) throw IoError("cannot append to " + metrics.string());

  TrainingResult result;
  const long total = trainer.total_steps();
  while (trainer.global_step() < total) {
    const StepStats st = trainer.step();
    log << csv_row(st) << '\n';
    log.flush();
    result.history.push_back(st);
    if (opts.on_step) opts.on_step(st);
    const long done = trainer.global_step();
    if (done % cfg.train.checkpoint_interval == 0 || done == total) {
      Archive a = trainer.state_archive();
      a.meta["kind"] = "scenegen-train";
      a.meta["config"] = cfg_json;
      a.meta["config_hash"] = hash;
      const fs::path path = checkpoint_path(out_dir, done);
      save_archive(path, a);
      result.checkpoints.push_back(path);
      result.final_checkpoint = path;
    }
  }
  if (result.final_checkpoint.empty()) result.final_checkpoint = checkpoint_path(out_dir, total);
  return result;
}

LoadedModel load_trained_model(const fs::path& checkpoint, bool use_ema) {
  const Archive a = load_archive(checkpoint);
  if (a.meta.value("kind", std::string()) != "scenegen-train") {
    throw ValidationError(checkpoint.string() + " is not a training checkpoint");
  }
  LoadedModel out;
  out.config = a.meta.at("config");
  out.step = a.meta.at("step").get<long>();
  const RunConfig cfg = run_config_from_json(out.config);
  out.model = SceneModel(cfg.model, cfg.seed);
  out.model.denoiser().set_noise_levels(cfg.schedule.build());
  if (a.meta.at("has_control").get<bool>()) out.model.attach_control_branch();
  load_parameters(a, out.model.parameters());
  if (use_ema) {
    for (const auto& t : a.tensors) {
      if (t.name.rfind("ema/", 0) != 0) continue;
      nn::Parameter* p = out.model.find(t.name.substr(4));
      if (!p) throw ValidationError("checkpoint EMA entry without parameter: " + t.name);
      p->value = t.tensor;
    }
  }
  return out;
}

}  // namespace scenegen
