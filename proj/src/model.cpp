#include "scenegen/model.hpp"

#include "scenegen/error.hpp"

namespace scenegen {

void ModelConfig::finalize(int num_classes) {
  if (num_classes < 1) throw ConfigError("model needs at least one class");
  text.validate();
  denoiser.text_embed_dim = text.output_dim();
  denoiser.condition_channels = num_classes + 1;
  denoiser.validate();
}

SceneModel::SceneModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.text.validate();
  cfg_.denoiser.validate();
  if (cfg_.denoiser.text_embed_dim != cfg_.text.output_dim()) {
    throw ConfigError("denoiser text_embed_dim " + std::to_string(cfg_.denoiser.text_embed_dim) +
                      " does not match text encoder output " + std::to_string(cfg_.text.output_dim()));
  }
  Rng text_rng = make_rng({seed, 1});
  Rng net_rng = make_rng({seed, 2});
  text_ = TextEncoder(cfg_.text, text_rng);
  denoiser_ = Denoiser(cfg_.denoiser, net_rng);
}

void SceneModel::attach_control_branch() {
  nn::ParamRefs text_params;
  text_.collect(text_params);
  nn::set_trainable(text_params, false);
  denoiser_.attach_control_branch();
}

nn::ParamRefs SceneModel::parameters() {
  nn::ParamRefs out;
  text_.collect(out);
  for (auto* p : denoiser_.parameters()) out.push_back(p);
  return out;
}

nn::ParamRefs SceneModel::trainable_parameters() {
  nn::ParamRefs out;
  for (auto* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

nn::Parameter* SceneModel::find(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

ConditionBatch SceneModel::conditions(std::span<const SceneAnnotation* const> scenes,
                                      std::span<const std::string> prompts) {
  if (scenes.size() != prompts.size() || scenes.empty()) {
    throw DimensionError("conditions: need one prompt per scene");
  }
  const int size = cfg_.denoiser.image_size;
  const int n = static_cast<int>(scenes.size());
  std::vector<std::vector<int>> tokens;
  std::vector<Tensor> spatial;
  ConditionBatch batch;
  batch.dims = Tensor(n, 2);
  for (int i = 0; i < n; ++i) {
    const SceneAnnotation& ann = *scenes[i];
    if (ann.num_classes() + 1 != cfg_.denoiser.condition_channels) {
      throw DimensionError("scene has " + std::to_string(ann.num_classes()) +
                           " classes; model expects " +
                           std::to_string(cfg_.denoiser.condition_channels - 1));
    }
    tokens.push_back(text_.tokenize(prompts[i]));
    spatial.push_back(rasterize_conditions(ann, size, size));
    batch.dims[2 * i] = static_cast<real>(double(ann.height) / size);
    batch.dims[2 * i + 1] = static_cast<real>(double(ann.width) / size);
  }
  batch.spatial = stack_batch(spatial);
  batch.text = text_.forward(tokens);
  return batch;
}

void SceneModel::backward_text(const Tensor& g_text) {
  if (g_text.empty()) return;
  text_.backward(g_text);
}

}  // namespace scenegen
