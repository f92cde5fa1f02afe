#include <gtest/gtest.h>

#include <sstream>

#include "mst/errors.hpp"
#include "mst/run_config.hpp"

namespace mst {
namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

TEST(RunConfig, DefaultsMatchTrainingSetup) {
  const RunConfig c = parse("");
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.eps, 1e-10);
  EXPECT_EQ(c.train.lr_schedule, LrSchedule::constant);
  EXPECT_FALSE(c.n_scenes_set);
}

TEST(RunConfig, ParsesCommentsListsAndSchedule) {
  const RunConfig c = parse(
      "# tiny run\n"
      "c_d = 32\n"
      "\n"
      "backbone_channels = 4, 8,16 ,32\n"
      "lr_schedule = cosine  # anneal\n"
      "lr_decay_start = 50\n"
      "image_mean = 0.1,0.2,0.3\n");
  EXPECT_EQ(c.model.c_d, 32u);
  EXPECT_EQ(c.model.backbone_channels, (std::vector<std::size_t>{4, 8, 16, 32}));
  EXPECT_EQ(c.train.lr_schedule, LrSchedule::cosine);
  EXPECT_EQ(c.train.lr_decay_start, 50u);
  EXPECT_EQ(c.stats.mean[2], 0.3);
}

TEST(RunConfig, FormatRoundTrips) {
  RunConfig c;
  apply_override(c, "lr=3.3e-5");
  apply_override(c, "dropout_p=0.15");
  apply_override(c, "lr_schedule=cosine");
  apply_override(c, "lr_decay_start=7");
  apply_override(c, "n_scenes=5");
  const std::string text = format_run_config(c);
  const RunConfig back = parse(text);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(format_run_config(back), text);
}

TEST(RunConfig, RejectsBadInput) {
  RunConfig c;
  EXPECT_THROW(apply_override(c, "nope=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "lr_schedule=step"), ConfigError);
  EXPECT_THROW(apply_override(c, "lr=fast"), ConfigError);
  EXPECT_THROW(apply_override(c, "max_steps=-3"), ConfigError);
  EXPECT_THROW(apply_override(c, "image_std=1,2"), ConfigError);
  EXPECT_THROW(apply_override(c, "no_equals_sign"), ConfigError);
}

}  // namespace
}  // namespace mst
