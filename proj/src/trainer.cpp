#include "mst/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "mst/errors.hpp"

namespace mst {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
  if (eval_every == 0) throw ConfigError("train config: eval_every must be >= 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("train config: grad_clip must be >= 0");
  if (lr_schedule == LrSchedule::cosine && lr_decay_start >= max_steps) {
    throw ConfigError("train config: lr_decay_start must be below max_steps for the cosine schedule");
  }
}

double TrainConfig::learning_rate(std::uint64_t t) const {
  if (lr_schedule == LrSchedule::constant || t <= lr_decay_start) return lr;
  const double span = static_cast<double>(max_steps - lr_decay_start);
  const double progress = std::min(1.0, static_cast<double>(t - lr_decay_start) / span);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Parameter<float>> trainable_parameters(Model<float>& model, const LossParams<float>& loss_params) {
  std::vector<Parameter<float>> params = model.parameters();
  for (auto& p : loss_params.parameters()) params.push_back(p);
  return params;
}

StepResult train_step(Model<float>& model, std::span<const TrainExample> batch, LossParams<float>& loss_params,
                      Adam<float>& adam, RngState& rng, double grad_clip) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  StepResult result;
  const ForwardContext ctx{true, &rng};
  std::vector<Tensor<float>> losses;
  for (const auto& ex : batch) {
    const ForwardOutput<float> out = model.forward(ex.image, ex.scene, ctx);
    result.selected_scenes.push_back(out.selected_scene);
    losses.push_back(reshape(multiscene_loss(out, ex.pose, ex.scene, loss_params), {1}));
  }
  const Tensor<float> total = losses.size() == 1 ? mean(losses.front()) : mean(concat(losses, 0));
  total.backward();
  if (grad_clip > 0.0) clip_grad_norm(adam.parameters(), grad_clip);
  adam.step();
  for (const auto& p : adam.parameters()) Tensor<float>(p.value).zero_grad();
  result.loss = static_cast<double>(total.item());
  return result;
}

EvalResult evaluate(const Model<float>& model, std::span<const TrainExample> examples) {
  if (examples.empty()) throw ContractError("evaluate: no samples");
  NoGradGuard no_grad;
  EvalResult r;
  for (const auto& ex : examples) {
    const ForwardOutput<float> out = model.forward(ex.image, std::nullopt);
    const auto x = out.x_hat.data();
    const auto q = out.q_hat.data();
    SampleError e;
    e.scene_id = ex.scene;
    e.position_m = position_error_m(ex.pose.position, {x[0], x[1], x[2]});
    e.orientation_deg = angular_error_deg(normalize(ex.pose.orientation), normalize(Quaternion{q[0], q[1], q[2], q[3]}));
    e.scene_correct = out.selected_scene == ex.scene;
    r.samples.push_back(e);
  }
  r.summary = summarize(r.samples);
  return r;
}

std::vector<TrainExample> load_examples(const DatasetManifest& manifest, std::size_t input_hw) {
  std::vector<TrainExample> out;
  out.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) {
    out.push_back({load_image(s, manifest.root, input_hw, manifest.stats), s.scene_id, s.pose});
  }
  return out;
}

Trainer::Trainer(Model<float>& model, std::vector<TrainExample> examples, const TrainConfig& config)
    : model_(model),
      examples_(std::move(examples)),
      config_(config),
      loss_params_(LossParams<float>::make(config.s_x_init, config.s_q_init)),
      adam_(trainable_parameters(model, loss_params_), config.adam()),
      rng_(RngState{config.seed, 0}.fork({0x64726f70ULL})) {
  config_.validate();
  if (config_.lr_schedule != LrSchedule::constant) {
    adam_.schedule = [c = config_](std::uint64_t t) { return c.learning_rate(t); };
  }
  if (examples_.empty()) throw ContractError("trainer: empty dataset");
  for (const auto& ex : examples_) {
    if (ex.scene >= model_.config().n_scenes) {
      throw ContractError("trainer: sample scene " + std::to_string(ex.scene) + " exceeds model scene count " +
                          std::to_string(model_.config().n_scenes));
    }
  }
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
  const std::size_t n = examples_.size();
  std::vector<std::size_t> out;
  std::uint64_t pos = step * config_.batch_size;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < config_.batch_size; ++i, ++pos) {
    const std::uint64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      order = epoch_order(config_.seed, epoch, n);
      cached_epoch = epoch;
    }
    out.push_back(order[pos % n]);
  }
  return out;
}

StepResult Trainer::step() {
  std::vector<TrainExample> batch;
  for (std::size_t i : batch_indices(step_)) {
    batch.push_back(augment ? augment(examples_[i], step_, batch.size()) : examples_[i]);
  }
  StepResult r = train_step(model_, batch, loss_params_, adam_, rng_, config_.grad_clip);
  ++step_;
  return r;
}

void Trainer::run(std::ostream* log, const std::function<void(const Trainer&)>& on_checkpoint) {
  char line[96];
  while (step_ < config_.max_steps) {
    const double lr = adam_.current_lr();
    const StepResult r = step();
    if (log) {
      std::snprintf(line, sizeof line, "%llu,%.9g,%.9g\n", static_cast<unsigned long long>(step_), r.loss, lr);
      *log << line;
    }
    if (step_ % config_.eval_every == 0 || step_ == config_.max_steps) {
      if (log) log->flush();
      if (on_checkpoint) on_checkpoint(*this);
    }
  }
}

}  // namespace mst
