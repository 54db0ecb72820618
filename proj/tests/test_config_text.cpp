#include <gtest/gtest.h>

#include "lmnet/config_text.hpp"

using namespace lmnet;

TEST(ConfigText, RenderIsSortedAndParsesBack) {
  const KeyValues kv = {{"zeta", "1"}, {"alpha", "x y"}, {"mid", ""}};
  const std::string text = render_key_values(kv);
  EXPECT_EQ(text, "alpha=x y\nmid=\nzeta=1\n");
  EXPECT_EQ(parse_key_values(text), kv);
}

TEST(ConfigText, CommentsBlanksAndWhitespace) {
  EXPECT_EQ(parse_key_values("# header\n\n  lr = 0.01 \r\nepochs=3"), (KeyValues{{"epochs", "3"}, {"lr", "0.01"}}));
}

TEST(ConfigText, Errors) {
  EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(parse_key_values("=1\n"), ConfigError);
  try {
    parse_key_values("a=1\nb\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ConfigText, Numbers) {
  EXPECT_EQ(format_float(0.005), "0.005");
  EXPECT_EQ(format_float(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(parse_double("lr", " 5e-3 "), 0.005);
  EXPECT_THROW(parse_double("lr", "fast"), ConfigError);
  EXPECT_THROW(parse_double("lr", "1.0x"), ConfigError);
  EXPECT_EQ(parse_uint("n", "42"), 42u);
  EXPECT_THROW(parse_uint("n", "-1"), ConfigError);
  EXPECT_EQ(parse_uint_list("c", "5,13,89,233"), (std::vector<std::uint64_t>{5, 13, 89, 233}));
  EXPECT_TRUE(parse_uint_list("c", "").empty());
  EXPECT_THROW(parse_uint_list("c", "1,,2"), ConfigError);
  EXPECT_EQ(join_list(std::vector<int>{2, 3, 5}), "2,3,5");
}
