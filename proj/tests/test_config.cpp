#include <gtest/gtest.h>

#include "pipe/config.hpp"
#include "pipe/training.hpp"

using namespace riskpipe;

TEST(KeyValues, ParsesCommentsAndLists) {
  const auto kv = KeyValues::parse_string("# comment\nepochs = 20\n\nstate_lo=-1,-2 # trailing\nflag=true\n");
  EXPECT_EQ(kv.get_int("epochs", 0), 20);
  EXPECT_EQ(kv.get_doubles("state_lo", {}), (std::vector<double>{-1.0, -2.0}));
  EXPECT_TRUE(kv.get_bool("flag", false));
  EXPECT_EQ(kv.get_double("missing", 3.5), 3.5);
}

TEST(KeyValues, MalformedLine) {
  try {
    KeyValues::parse_string("epochs 20\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
  }
}

TEST(KeyValues, BadTypedValue) {
  const auto kv = KeyValues::parse_string("epochs=abc\n");
  EXPECT_THROW(kv.get_int("epochs", 0), Error);
}

TEST(KeyValues, UnknownKeysRejected) {
  const auto kv = KeyValues::parse_string("epochs=20\nepoch=30\n");
  (void)TrainConfig::from_key_values(kv);
  try {
    kv.reject_unknown();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(TrainConfigKeys, Defaults) {
  const auto c = TrainConfig::from_key_values(KeyValues{});
  EXPECT_EQ(c.epochs, 60000);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.w_physics, 1.0);
  EXPECT_EQ(c.w_data, 1.0);
  EXPECT_EQ(c.hidden_layers, 3);
  EXPECT_EQ(c.width, 32);
  EXPECT_EQ(c.physics_points, 10000);
}

TEST(TrainConfigKeys, RejectsNegativeWeight) {
  EXPECT_THROW(TrainConfig::from_key_values(KeyValues::parse_string("w_data=-1\n")), Error);
}
