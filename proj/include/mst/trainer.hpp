#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mst/adam.hpp"
#include "mst/data.hpp"
#include "mst/loss.hpp"
#include "mst/model.hpp"
#include "mst/pose.hpp"

namespace mst {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
  std::uint64_t max_steps = 2000;
  std::uint64_t eval_every = 100;
  std::uint64_t seed = 0;
  double s_x_init = 0.0;
  double s_q_init = -3.0;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  /// cosine: lr is held until lr_decay_start, then annealed along a half
  /// cosine to 0 at max_steps.
  LrSchedule lr_schedule = LrSchedule::constant;
  std::uint64_t lr_decay_start = 0;

  AdamOptions adam() const { return {lr, beta1, beta2, eps}; }
  /// Learning rate of step t (counted from 1).
  double learning_rate(std::uint64_t t) const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainExample {
  Tensor<float> image;
  std::size_t scene = 0;
  Pose pose;
};

struct StepResult {
  double loss = 0.0;
  std::vector<std::size_t> selected_scenes;  // slot regressed per sample
};

/// Forward with the ground-truth scene selecting the regressed slot, mean
/// multi-scene loss over the batch, backward, one Adam step (optionally after
/// clipping), gradients cleared.
StepResult train_step(Model<float>& model, std::span<const TrainExample> batch, LossParams<float>& loss_params,
                      Adam<float>& adam, RngState& rng, double grad_clip = 0.0);

struct EvalResult {
  PoseErrorSummary summary;
  std::vector<SampleError> samples;
};

/// Eval-mode forward per sample with argmax scene selection.
EvalResult evaluate(const Model<float>& model, std::span<const TrainExample> examples);

/// Prepares every manifest image at the model's input resolution.
std::vector<TrainExample> load_examples(const DatasetManifest& manifest, std::size_t input_hw);

/// Owns the optimization state of one run. The batch for step t is a pure
/// function of (seed, t), so a resumed run sees the same batches.
class Trainer {
 public:
  Trainer(Model<float>& model, std::vector<TrainExample> examples, const TrainConfig& config);

  /// Runs the next step and returns its result.
  StepResult step();
  /// Runs until `config.max_steps`. Appends `step,loss,lr` rows to `log`
  /// (flushed every eval_every steps) and calls `on_checkpoint` every
  /// eval_every steps and at the end.
  void run(std::ostream* log, const std::function<void(const Trainer&)>& on_checkpoint = {});

  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  /// Optional per-sample augmentation. Called with the stored example, the
  /// zero-based step and the position in the batch; its result goes into the
  /// batch and the stored examples stay untouched. Empty by default.
  std::function<TrainExample(const TrainExample&, std::uint64_t, std::size_t)> augment;

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  LossParams<float>& loss_params() { return loss_params_; }
  const LossParams<float>& loss_params() const { return loss_params_; }
  Adam<float>& adam() { return adam_; }
  const Adam<float>& adam() const { return adam_; }
  RngState& rng() { return rng_; }
  const RngState& rng() const { return rng_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<TrainExample>& examples() const { return examples_; }

 private:
  Model<float>& model_;
  std::vector<TrainExample> examples_;
  TrainConfig config_;
  LossParams<float> loss_params_;
  Adam<float> adam_;
  RngState rng_;
  std::uint64_t step_ = 0;
};

/// Model parameters followed by loss.s_x, loss.s_q: the optimizer's list.
std::vector<Parameter<float>> trainable_parameters(Model<float>& model, const LossParams<float>& loss_params);

}  // namespace mst
