#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scenegen/conditioning.hpp"
#include "scenegen/denoiser.hpp"
#include "scenegen/text_encoder.hpp"

namespace scenegen {

struct ModelConfig {
  DenoiserConfig denoiser;
  TextEncoderConfig text;

  // Sets the denoiser's text width from the encoder and its condition width
  // from the class count, then validates both parts.
  void finalize(int num_classes);
};

// Prompt encoder plus denoiser, i.e. everything that has parameters in the
// generation pipeline.
class SceneModel {
 public:
  SceneModel() = default;
  SceneModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  TextEncoder& text() { return text_; }
  Denoiser& denoiser() { return denoiser_; }
  bool has_control() const { return denoiser_.has_control(); }

  // Freezes the text encoder and the base network and attaches a fresh
  // zero-initialized control branch.
  void attach_control_branch();

  nn::ParamRefs parameters();
  nn::ParamRefs trainable_parameters();
  nn::Parameter* find(const std::string& name);

  // Conditioning for a batch of scenes at the model resolution. Runs the text
  // encoder forward (its cache is used by `backward_text`).
  ConditionBatch conditions(std::span<const SceneAnnotation* const> scenes,
                            std::span<const std::string> prompts);
  // Back-propagates into the text encoder when it is trainable.
  void backward_text(const Tensor& g_text);

 private:
  ModelConfig cfg_;
  TextEncoder text_;
  Denoiser denoiser_;
};

}  // namespace scenegen
