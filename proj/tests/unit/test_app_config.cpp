#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "hpc_sentinel/app_config.hpp"

using namespace hpcs;

namespace {

AppConfig make() {
  AppConfig c("simulate");
  c.declare("seed", "1");
  c.declare("window-ms", "100");
  c.declare("load", "nl");
  c.declare("verbose", "false");
  return c;
}

AppConfig::Getenv env(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const char* name) -> const char* {
    auto it = vars.find(name);
    return it == vars.end() ? nullptr : it->second.c_str();
  };
}

}  // namespace

TEST(AppConfig, DefaultsWhenNothingElseIsSet) {
  auto c = make();
  c.load_env(env({}));
  EXPECT_EQ(c.get_int("seed"), 1);
  EXPECT_EQ(c.source("seed"), ConfigSource::defaults);
  EXPECT_FALSE(c.get_bool("verbose"));
}

TEST(AppConfig, PrecedenceIsFlagThenEnvThenFile) {
  auto c = make();
  c.load_file_text(R"({"seed": 5, "window-ms": 50, "load": "al"})");
  c.load_env(env({{"HPC_SENTINEL_SEED", "6"}, {"HPC_SENTINEL_WINDOW_MS", "20"}}));
  c.set_flag("seed", "7");
  EXPECT_EQ(c.get("seed"), "7");
  EXPECT_EQ(c.source("seed"), ConfigSource::flag);
  EXPECT_EQ(c.get_int("window-ms"), 20);
  EXPECT_EQ(c.source("window-ms"), ConfigSource::env);
  EXPECT_EQ(c.get("load"), "al");
  EXPECT_EQ(c.source("load"), ConfigSource::file);
}

TEST(AppConfig, LayerOrderOfLoadingDoesNotMatter) {
  auto a = make();
  a.set_flag("seed", "9");
  a.load_env(env({{"HPC_SENTINEL_SEED", "8"}}));
  a.load_file_text(R"({"seed": 3})");
  EXPECT_EQ(a.get("seed"), "9");
}

TEST(AppConfig, SectionOverridesTopLevelAndChecksKeys) {
  auto c = make();
  c.load_file_text(R"({"seed": 2, "model": "cnn", "simulate": {"seed": 4}})");
  EXPECT_EQ(c.get_int("seed"), 4);
  auto d = make();
  EXPECT_THROW(d.load_file_text(R"({"simulate": {"sede": 4}})"), ConfigError);
  EXPECT_THROW(d.load_file_text("[1,2]"), ConfigError);
  EXPECT_THROW(d.load_file_text("{oops"), DecodeError);
}

TEST(AppConfig, FileValuesOfAnyScalarType) {
  auto c = make();
  c.load_file_text(R"({"verbose": true, "window-ms": 12.5, "load": ["nl", "fl"]})");
  EXPECT_TRUE(c.get_bool("verbose"));
  EXPECT_EQ(c.get_double("window-ms"), 12.5);
  EXPECT_EQ(c.get("load"), "nl,fl");
}

TEST(AppConfig, TypedGettersReportTheField) {
  auto c = make();
  c.set_flag("seed", "12x");
  try {
    c.get_int("seed");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "seed");
  }
  c.set_flag("verbose", "maybe");
  EXPECT_THROW(c.get_bool("verbose"), ConfigError);
  c.set_flag("seed", "-3");
  EXPECT_THROW(c.get_u64("seed"), ConfigError);
  EXPECT_THROW(c.set_flag("nope", "1"), ConfigError);
}

TEST(AppConfig, PrintShowsEverySource) {
  auto c = make();
  c.load_file_text(R"({"load": "fl"})");
  c.load_env(env({{"HPC_SENTINEL_WINDOW_MS", "10"}}));
  c.set_flag("seed", "3");
  const auto out = c.print();
  EXPECT_NE(out.find("seed      = 3  [flag]"), std::string::npos) << out;
  EXPECT_NE(out.find("window-ms = 10  [env]"), std::string::npos);
  EXPECT_NE(out.find("load      = fl  [config]"), std::string::npos);
  EXPECT_NE(out.find("verbose   = false  [default]"), std::string::npos);
}

TEST(AppConfig, EnvNamesUseThePrefix) {
  EXPECT_EQ(env_name("window-ms"), "HPC_SENTINEL_WINDOW_MS");
  EXPECT_EQ(env_name("seed"), "HPC_SENTINEL_SEED");
}

TEST(AppConfig, LoadsFromFile) {
  const std::string path = ::testing::TempDir() + "cfg.json";
  {
    std::ofstream os(path);
    os << R"({"seed": 44})";
  }
  auto c = make();
  c.load_file(path);
  EXPECT_EQ(c.get_int("seed"), 44);
  std::remove(path.c_str());
  EXPECT_THROW(c.load_file(path), ConfigError);
}
