#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scenegen/checkpoint.hpp"
#include "scenegen/datasets.hpp"
#include "scenegen/foreground_weight.hpp"
#include "scenegen/model.hpp"
#include "scenegen/noise_schedule.hpp"

namespace scenegen {

struct TrainConfig {
  int epochs = 1;
  long max_steps = 0;  // when > 0, overrides the epoch count
  int micro_batch_size = 2;
  int accumulation_factor = 32;
  double lr_min = 2e-5;
  double lr_max = 2e-4;
  double warmup_fraction = 0.3;
  double final_lr_divisor = 10.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  double ema_decay = 0.999;
  // Effective decay min(decay, (1 + n) / (10 + n)) after n updates.
  bool ema_warmup = true;
  WeightScheduleConfig weight_schedule;  // total_steps is set by the trainer
  std::uint64_t seed = 0;
  long checkpoint_interval = 1000;
  // Share of the optimizer steps spent training the base network and text
  // encoder before they are frozen and the control branch takes over. With
  // 0 the branch is attached from the first step.
  double base_fraction = 0.5;
  bool augment = true;

  void validate() const;
  long total_steps(std::size_t dataset_size) const;
  long base_steps(std::size_t dataset_size) const;
};

// Cosine warmup from lr_min to lr_max over `warmup_fraction` of the steps,
// then cosine annealing down to lr_min / final_divisor at `total_steps`.
double onecycle_lr(long step, long total_steps, double lr_min, double lr_max,
                   double warmup_fraction = 0.3, double final_divisor = 10.0);

struct EmaState {
  std::vector<NamedTensor> shadow;
  double decay = 0.999;
  long steps = 0;
};

EmaState make_ema(const nn::ParamRefs& params, double decay);
// shadow <- decay * shadow + (1 - decay) * params, using ema.decay.
EmaState ema_update(const EmaState& ema, const nn::ParamRefs& params);
void ema_update_in_place(EmaState& ema, const nn::ParamRefs& params, double decay);
// Copies shadow values into the parameters with matching names.
void apply_ema(const EmaState& ema, const nn::ParamRefs& params);

// Decoupled weight decay Adam. Moments are keyed by parameter name.
class AdamW {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamW() = default;
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(const nn::ParamRefs& params, double lr);
  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  double weight_decay_ = 0.01;
  long steps_ = 0;
  std::map<std::string, Moments> state_;
};

// Global gradient norm over all parameters that carry a gradient.
double grad_norm(const nn::ParamRefs& params);

struct StepStats {
  long step = 0;  // optimizer step index (0-based) that produced the stats
  long epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double fg_weight = 0.0;
  double inbox_mse = 0.0;  // unweighted error inside boxes
  bool control = false;
};

// Everything one micro-batch needs, drawn deterministically from the sample
// positions so the same positions always give the same inputs.
struct MicroBatch {
  Tensor x0;
  Tensor eps;
  std::vector<int> timesteps;
  std::vector<SceneAnnotation> scenes;
  std::vector<std::string> prompts;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const NoiseSchedule& sched,
          const TrainConfig& cfg, std::vector<SceneRecord> data);

  // One optimizer step over accumulation_factor micro-batches.
  StepStats step();
  // Forward/backward of one micro-batch at `global_step`; accumulates
  // gradients scaled by `grad_scale` and returns the weighted loss.
  double train_step(const MicroBatch& batch, long global_step, double grad_scale,
                    double* inbox_sum = nullptr, double* inbox_count = nullptr);
  MicroBatch make_micro_batch(long first_position, int count) const;

  long global_step() const { return step_; }
  long total_steps() const { return total_; }
  long base_steps() const { return base_; }
  std::size_t dataset_size() const { return data_.size(); }
  SceneModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const EmaState& ema() const { return ema_; }
  const NoiseSchedule& schedule() const { return sched_; }

  // Called on the accumulated gradients before the finiteness check.
  std::function<void(const nn::ParamRefs&)> grad_hook;

  Archive state_archive();
  void load_state(const Archive& archive);

  // Learning rate of the current phase's one-cycle schedule at `step`.
  double lr_at(long step) const;

 private:
  void enter_control_phase();
  std::size_t record_at(long position) const;

  ModelConfig model_cfg_;
  NoiseSchedule sched_;
  TrainConfig cfg_;
  std::vector<SceneRecord> data_;
  SceneModel model_;
  AdamW optim_;
  EmaState ema_;
  long step_ = 0;
  long total_ = 0;
  long base_ = 0;
  mutable long perm_epoch_ = -1;
  mutable std::vector<std::size_t> perm_;
};

struct RunConfig;

struct TrainingResult {
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<StepStats> history;  // steps run by this call
};

struct RunOptions {
  std::filesystem::path resume;  // empty for a fresh run
  std::function<void(const StepStats&)> on_step;
  std::function<void(const nn::ParamRefs&)> grad_hook;
};

// Trains on the train split of the configured dataset. Writes
// out_dir/metrics.csv (step, epoch, loss, lr, fg_weight) and checkpoints at
// every checkpoint_interval and at the final step under out_dir/checkpoints.
TrainingResult run_training(const RunConfig& cfg, const std::filesystem::path& out_dir,
                            const RunOptions& opts = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, long step);

// A trained model restored from a checkpoint, EMA weights applied.
struct LoadedModel {
  nlohmann::json config;
  long step = 0;
  SceneModel model;
};
LoadedModel load_trained_model(const std::filesystem::path& checkpoint, bool use_ema = true);

}  // namespace scenegen
