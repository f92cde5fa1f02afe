#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mst/adam.hpp"
#include "mst/errors.hpp"
#include "mst/trainer.hpp"
#include "test_util.hpp"

namespace mst {
namespace {

using Td = Tensor<double>;

// Plain scalar Adam, written independently of the library.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-10;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

void set_grad(const Td& p, double g) {
  auto& buf = p.impl()->grad_buffer();
  std::fill(buf.begin(), buf.end(), g);
}

TEST(Adam, FirstStepExample) {
  const auto theta = Td::leaf({1}, {0.0});
  Adam<double> adam({{"theta", theta}}, {0.1, 0.9, 0.999, 1e-10});
  set_grad(theta, 1.0);
  adam.step();
  EXPECT_NEAR(theta.data()[0], -0.1 / (1.0 + 1e-10), 1e-15);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  const auto theta = Td::leaf({3}, {0.5, -1, 2});
  Adam<double> adam({{"theta", theta}}, {});
  for (int i = 0; i < 5; ++i) {
    set_grad(theta, 0.0);
    adam.step();
  }
  EXPECT_EQ(theta.data()[0], 0.5);
  EXPECT_EQ(theta.data()[1], -1.0);
  EXPECT_EQ(theta.data()[2], 2.0);
}

TEST(Adam, MatchesScalarOracleOverTenSteps) {
  for (double g : {1.0, -0.3, 1e-4}) {
    const auto theta = Td::leaf({1}, {0.7});
    Adam<double> adam({{"theta", theta}}, {1e-3, 0.9, 0.999, 1e-10});
    ScalarAdam ref{1e-3};
    double expected = 0.7;
    for (int i = 0; i < 10; ++i) {
      set_grad(theta, g);
      adam.step();
      expected = ref.step(expected, g);
      EXPECT_NEAR(theta.data()[0], expected, 1e-10);
    }
  }
}

TEST(Adam, VaryingGradientsMatchOracle) {
  const auto theta = Td::leaf({1}, {0.0});
  Adam<double> adam({{"theta", theta}}, {0.01, 0.9, 0.999, 1e-10});
  ScalarAdam ref{0.01};
  double expected = 0.0;
  for (int i = 0; i < 20; ++i) {
    // gradient of (theta - 1)^2
    const double g = 2 * (theta.data()[0] - 1);
    set_grad(theta, g);
    adam.step();
    expected = ref.step(expected, g);
    EXPECT_NEAR(theta.data()[0], expected, 1e-12);
  }
}

TEST(Adam, GradientsClearedAndMissingGradientRejected) {
  const auto a = Td::leaf({2}, {1, 2});
  const auto b = Td::leaf({1}, {3});
  Adam<double> adam({{"a", a}, {"b", b}}, {});
  sum(mul(a, a)).backward();
  EXPECT_THROW(adam.step(), ContractError);
}

TEST(Adam, ScheduleOverridesLearningRate) {
  const auto theta = Td::leaf({1}, {0.0});
  Adam<double> adam({{"theta", theta}}, {0.1, 0.9, 0.999, 1e-10});
  adam.schedule = [](std::uint64_t t) { return t == 1 ? 0.5 : 0.0; };
  EXPECT_EQ(adam.current_lr(), 0.5);
  set_grad(theta, 1.0);
  adam.step();
  EXPECT_NEAR(theta.data()[0], -0.5, 1e-9);
  set_grad(theta, 1.0);
  adam.step();
  EXPECT_NEAR(theta.data()[0], -0.5, 1e-9);
}

TEST(ClipGradNorm, ScalesToMaximum) {
  const auto a = Td::leaf({2}, {0, 0});
  set_grad(a, 0.0);
  a.impl()->grad[0] = 3;
  a.impl()->grad[1] = 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>({{"a", a}}, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-12);
}

std::vector<TrainExample> tiny_examples(std::size_t n_scenes, std::size_t per_scene) {
  return load_examples(synth_dataset(0, n_scenes, per_scene, 32), 32);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_schedule = LrSchedule::cosine;
  c.lr_decay_start = c.max_steps;
  EXPECT_THROW(c.validate(), ConfigError);
  c.lr_decay_start = c.max_steps - 1;
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, ConstantScheduleIsFlat) {
  TrainConfig c;
  for (std::uint64_t t : {1u, 500u, 2000u, 5000u}) EXPECT_EQ(c.learning_rate(t), 1e-4);
}

TEST(TrainConfig, CosineScheduleHoldsThenAnneals) {
  TrainConfig c;
  c.lr = 0.2;
  c.max_steps = 30;
  c.lr_schedule = LrSchedule::cosine;
  c.lr_decay_start = 10;
  EXPECT_EQ(c.learning_rate(1), 0.2);
  EXPECT_EQ(c.learning_rate(10), 0.2);
  EXPECT_NEAR(c.learning_rate(20), 0.1, 1e-15);
  EXPECT_NEAR(c.learning_rate(15), 0.1 * (1 + std::sqrt(0.5)), 1e-15);
  EXPECT_NEAR(c.learning_rate(30), 0.0, 1e-15);
  EXPECT_NEAR(c.learning_rate(40), 0.0, 1e-15);
  for (std::uint64_t t = 11; t <= 30; ++t) EXPECT_LT(c.learning_rate(t), c.learning_rate(t - 1));
}

TEST(Trainer, CosineScheduleReachesOptimizer) {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_steps = 4;
  tc.lr_schedule = LrSchedule::cosine;
  tc.lr_decay_start = 2;
  Model<float> m(test::tiny_config(2), 4);
  Trainer t(m, tiny_examples(2, 2), tc);
  std::ostringstream log;
  t.run(&log);
  std::istringstream in(log.str());
  std::vector<double> lrs;
  for (std::string line; std::getline(in, line);) lrs.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  ASSERT_EQ(lrs.size(), 4u);
  for (std::uint64_t s = 1; s <= 4; ++s) EXPECT_NEAR(lrs[s - 1], tc.learning_rate(s), 1e-9) << s;
}

TEST(TrainStep, UsesGroundTruthSelection) {
  const auto cfg = test::tiny_config(3);
  Model<float> model(cfg, 1);
  auto examples = tiny_examples(3, 2);
  std::size_t disagreements = 0;
  for (const auto& ex : examples) {
    disagreements += model.forward(ex.image, std::nullopt).selected_scene != ex.scene ? 1 : 0;
  }
  // The untrained classifier must disagree somewhere for the check to bite.
  ASSERT_GT(disagreements, 0u);
  auto loss_params = LossParams<float>::make(0, -3);
  Adam<float> adam(trainable_parameters(model, loss_params), {});
  RngState rng{0, 0};
  const auto r = train_step(model, examples, loss_params, adam, rng);
  ASSERT_EQ(r.selected_scenes.size(), examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) EXPECT_EQ(r.selected_scenes[i], examples[i].scene);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (const auto& p : adam.parameters()) {
    for (float g : p.value.grad()) ASSERT_EQ(g, 0.0f) << p.name;
  }
}

TEST(TrainStep, IdenticalBatchEqualsSingleSample) {
  // Dropout draws differ per sample, so compare with dropout disabled.
  auto cfg = test::tiny_config(2);
  cfg.dropout_p = 0.0;
  const auto examples = tiny_examples(2, 1);
  auto loss_of = [&](std::size_t copies) {
    Model<float> model(cfg, 1);
    auto loss_params = LossParams<float>::make(0, -3);
    Adam<float> adam(trainable_parameters(model, loss_params), {});
    RngState rng{0, 0};
    const std::vector<TrainExample> batch(copies, examples[1]);
    return train_step(model, batch, loss_params, adam, rng).loss;
  };
  const double single = loss_of(1);
  EXPECT_NEAR(loss_of(4), single, 1e-5 * std::abs(single));
}

TEST(TrainStep, LossDecreasesOnFixedBatch) {
  auto cfg = test::tiny_config(2);
  cfg.dropout_p = 0.0;
  const auto examples = tiny_examples(2, 2);
  Model<float> model(cfg, 3);
  auto loss_params = LossParams<float>::make(0, -3);
  Adam<float> adam(trainable_parameters(model, loss_params), {});
  RngState rng{0, 0};
  const double first = train_step(model, examples, loss_params, adam, rng).loss;
  double last = first;
  for (int i = 0; i < 5; ++i) last = train_step(model, examples, loss_params, adam, rng).loss;
  EXPECT_LT(last, first);
}

TEST(Trainer, BatchesArePureFunctionOfStep) {
  const auto cfg = test::tiny_config(3);
  Model<float> a(cfg, 1), b(cfg, 1);
  TrainConfig tc;
  tc.batch_size = 4;
  Trainer ta(a, tiny_examples(3, 3), tc), tb(b, tiny_examples(3, 3), tc);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto idx = ta.batch_indices(s);
    EXPECT_EQ(idx.size(), 4u);
    EXPECT_EQ(idx, tb.batch_indices(s));
    for (auto i : idx) EXPECT_LT(i, 9u);
  }
}

TEST(Trainer, RunsAreDeterministicAndLogged) {
  const auto cfg = test::tiny_config(2);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_steps = 6;
  tc.eval_every = 3;
  std::string logs[2];
  for (auto& text : logs) {
    Model<float> m(cfg, 4);
    Trainer t(m, tiny_examples(2, 2), tc);
    std::ostringstream log;
    int checkpoints = 0;
    t.run(&log, [&](const Trainer&) { ++checkpoints; });
    EXPECT_EQ(t.step_count(), 6u);
    EXPECT_GE(checkpoints, 2);
    text = log.str();
  }
  EXPECT_EQ(logs[0], logs[1]);
  std::istringstream in(logs[0]);
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    ++rows;
    EXPECT_NE(line.find(",0.0001"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 6u);
}

TEST(Trainer, AugmentationHookSeesEveryBatchSample) {
  const auto cfg = test::tiny_config(2);
  TrainConfig tc;
  tc.batch_size = 3;
  auto run_two_steps = [&](auto hook) {
    Model<float> m(cfg, 4);
    Trainer t(m, tiny_examples(2, 2), tc);
    t.augment = hook;
    std::vector<double> losses{t.step().loss, t.step().loss};
    return losses;
  };
  std::vector<std::pair<std::uint64_t, std::size_t>> calls;
  const auto identity = run_two_steps([&](const TrainExample& ex, std::uint64_t step, std::size_t pos) {
    calls.emplace_back(step, pos);
    return ex;
  });
  const std::vector<std::pair<std::uint64_t, std::size_t>> expected{{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 2}};
  EXPECT_EQ(calls, expected);
  EXPECT_EQ(identity, run_two_steps(nullptr));

  const auto blanked = run_two_steps([](const TrainExample& ex, std::uint64_t, std::size_t) {
    TrainExample out = ex;
    out.image = Tensor<float>::zeros(ex.image.shape());
    return out;
  });
  EXPECT_NE(blanked[0], identity[0]);
}

TEST(Evaluate, DeterministicAndCoversScenes) {
  const auto cfg = test::tiny_config(3);
  Model<float> m(cfg, 2);
  const auto examples = tiny_examples(3, 2);
  const auto a = evaluate(m, examples);
  const auto b = evaluate(m, examples);
  EXPECT_EQ(a.summary.median_position_m, b.summary.median_position_m);
  EXPECT_EQ(a.summary.median_orientation_deg, b.summary.median_orientation_deg);
  EXPECT_EQ(a.summary.per_scene.size(), 3u);
  EXPECT_EQ(a.samples.size(), 6u);
  for (const auto& s : a.samples) {
    EXPECT_GE(s.orientation_deg, 0.0);
    EXPECT_LE(s.orientation_deg, 180.0);
  }
}

TEST(Evaluate, MemorizedSingleSample) {
  auto cfg = test::tiny_config(1);
  Model<float> m(cfg, 2);
  auto examples = tiny_examples(1, 1);
  // Make the heads emit the target exactly through their biases.
  for (const char* w : {"x.head.fc2.weight", "q.head.fc2.weight"}) {
    for (auto& v : m.find(w)->value.mutable_data()) v = 0;
  }
  const auto& pose = examples[0].pose;
  auto& bx = m.find("x.head.fc2.bias")->value;
  auto& bq = m.find("q.head.fc2.bias")->value;
  for (std::size_t i = 0; i < 3; ++i) bx.mutable_data()[i] = static_cast<float>(pose.position[i]);
  const Quaternion& q = pose.orientation;
  const float qv[4] = {static_cast<float>(q.w), static_cast<float>(q.x), static_cast<float>(q.y),
                       static_cast<float>(q.z)};
  for (std::size_t i = 0; i < 4; ++i) bq.mutable_data()[i] = qv[i];
  const auto r = evaluate(m, examples);
  EXPECT_LT(r.summary.median_position_m, 1e-6);
  EXPECT_LT(r.summary.median_orientation_deg, 0.05);
  EXPECT_EQ(r.summary.scene_accuracy, 1.0);
}

}  // namespace
}  // namespace mst
