#include "scenegen/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "scenegen/error.hpp"
#include "scenegen/rng.hpp"

namespace scenegen {

using nlohmann::json;

NoiseSchedule ScheduleConfig::build() const {
  return build_linear_schedule(num_steps, beta_start, beta_end, sigma);
}

void RunConfig::validate() const {
  try {
    build_linear_schedule(schedule.num_steps, schedule.beta_start, schedule.beta_end, schedule.sigma);
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  model.text.validate();
  model.denoiser.validate();
  train.validate();
  sampler.validate(schedule.num_steps);
}

namespace {

// Reads keys from one JSON object and reports any that were never consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }
  ~Section() = default;

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + name(it.key()) + "'");
    }
  }

 private:
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const RunConfig& c) {
  const auto& d = c.model.denoiser;
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"schedule",
       {{"num_steps", c.schedule.num_steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"sigma", to_string(c.schedule.sigma)}}},
      {"model",
       {{"image_size", d.image_size},
        {"in_channels", d.in_channels},
        {"base_channels", d.base_channels},
        {"channel_multipliers", d.channel_multipliers},
        {"time_embed_dim", d.time_embed_dim},
        {"groups", d.groups},
        {"input_skip", d.input_skip},
        {"num_classes", d.condition_channels - 1}}},
      {"text",
       {{"embed_dim", c.model.text.embed_dim},
        {"layers", c.model.text.layers},
        {"max_tokens", c.model.text.max_tokens}}},
      {"fg_weight",
       {{"min", t.weight_schedule.w_min},
        {"max", t.weight_schedule.w_max},
        {"eta", t.weight_schedule.eta}}},
      {"train",
       {{"epochs", t.epochs},
        {"max_steps", t.max_steps},
        {"micro_batch_size", t.micro_batch_size},
        {"accumulation_factor", t.accumulation_factor},
        {"lr_min", t.lr_min},
        {"lr_max", t.lr_max},
        {"warmup_fraction", t.warmup_fraction},
        {"final_lr_divisor", t.final_lr_divisor},
        {"weight_decay", t.weight_decay},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"grad_clip_norm", t.grad_clip_norm},
        {"ema_decay", t.ema_decay},
        {"ema_warmup", t.ema_warmup},
        {"checkpoint_interval", t.checkpoint_interval},
        {"base_fraction", t.base_fraction},
        {"augment", t.augment}}},
      {"sampler",
       {{"kind", to_string(c.sampler.kind)},
        {"steps", c.sampler.num_inference_steps},
        {"ddim_eta", c.sampler.ddim_eta},
        {"seed", c.sampler.seed},
        {"variant", c.sampler.variant == DdimVariant::standard ? "standard" : "literal"},
        {"clip_denoised", c.sampler.clip_denoised}}},
      {"data", {{"train", c.data.train}, {"val", c.data.val}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  if (const json* s = root.sub("schedule")) {
    Section sec(*s, "schedule");
    std::string sigma = to_string(c.schedule.sigma);
    sec.get("num_steps", c.schedule.num_steps);
    sec.get("beta_start", c.schedule.beta_start);
    sec.get("beta_end", c.schedule.beta_end);
    sec.get("sigma", sigma);
    sec.finish();
    c.schedule.sigma = parse_sigma_kind(sigma);
  }
  int num_classes = c.model.denoiser.condition_channels - 1;
  if (const json* s = root.sub("model")) {
    Section sec(*s, "model");
    auto& d = c.model.denoiser;
    sec.get("image_size", d.image_size);
    sec.get("in_channels", d.in_channels);
    sec.get("base_channels", d.base_channels);
    sec.get("channel_multipliers", d.channel_multipliers);
    sec.get("time_embed_dim", d.time_embed_dim);
    sec.get("groups", d.groups);
    sec.get("input_skip", d.input_skip);
    sec.get("num_classes", num_classes);
    sec.finish();
  }
  if (const json* s = root.sub("text")) {
    Section sec(*s, "text");
    sec.get("embed_dim", c.model.text.embed_dim);
    sec.get("layers", c.model.text.layers);
    sec.get("max_tokens", c.model.text.max_tokens);
    sec.finish();
  }
  if (const json* s = root.sub("fg_weight")) {
    Section sec(*s, "fg_weight");
    sec.get("min", c.train.weight_schedule.w_min);
    sec.get("max", c.train.weight_schedule.w_max);
    sec.get("eta", c.train.weight_schedule.eta);
    sec.finish();
  }
  if (const json* s = root.sub("train")) {
    Section sec(*s, "train");
    auto& t = c.train;
    sec.get("epochs", t.epochs);
    sec.get("max_steps", t.max_steps);
    sec.get("micro_batch_size", t.micro_batch_size);
    sec.get("accumulation_factor", t.accumulation_factor);
    sec.get("lr_min", t.lr_min);
    sec.get("lr_max", t.lr_max);
    sec.get("warmup_fraction", t.warmup_fraction);
    sec.get("final_lr_divisor", t.final_lr_divisor);
    sec.get("weight_decay", t.weight_decay);
    sec.get("beta1", t.beta1);
    sec.get("beta2", t.beta2);
    sec.get("adam_eps", t.adam_eps);
    sec.get("grad_clip_norm", t.grad_clip_norm);
    sec.get("ema_decay", t.ema_decay);
    sec.get("ema_warmup", t.ema_warmup);
    sec.get("checkpoint_interval", t.checkpoint_interval);
    sec.get("base_fraction", t.base_fraction);
    sec.get("augment", t.augment);
    sec.finish();
  }
  if (const json* s = root.sub("sampler")) {
    Section sec(*s, "sampler");
    std::string kind = to_string(c.sampler.kind);
    std::string variant = "standard";
    sec.get("kind", kind);
    sec.get("steps", c.sampler.num_inference_steps);
    sec.get("ddim_eta", c.sampler.ddim_eta);
    sec.get("seed", c.sampler.seed);
    sec.get("variant", variant);
    sec.get("clip_denoised", c.sampler.clip_denoised);
    sec.finish();
    c.sampler.kind = parse_sampler_kind(kind);
    c.sampler.variant = parse_ddim_variant(variant);
  }
  if (const json* s = root.sub("data")) {
    Section sec(*s, "data");
    sec.get("train", c.data.train);
    sec.get("val", c.data.val);
    sec.finish();
  }
  root.finish();
  c.train.seed = c.seed;
  c.model.finalize(num_classes);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const json& canonical) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical.dump())));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return config_hash(to_json(cfg)); }

std::vector<std::string> config_diff(const json& before, const json& after) {
  std::vector<std::string> out;
  for (const auto& op : json::diff(before, after)) {
    std::string path = op.at("path").get<std::string>();
    if (!path.empty() && path[0] == '/') path.erase(0, 1);
    for (auto& ch : path) {
      if (ch == '/') ch = '.';
    }
    const std::string kind = op.at("op").get<std::string>();
    if (kind == "replace") {
      const json old_v = before.at(json::json_pointer(op.at("path").get<std::string>()));
      out.push_back(path + ": " + old_v.dump() + " -> " + op.at("value").dump());
    } else if (kind == "add") {
      out.push_back(path + ": added " + op.at("value").dump());
    } else {
      out.push_back(path + ": removed");
    }
  }
  return out;
}

}  // namespace scenegen
