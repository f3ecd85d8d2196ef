#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "saved/config.hpp"
#include "test_util.hpp"

using namespace saved;

TEST_CASE("run config round-trips through the key=value file", "[config]") {
  RunConfig cfg;
  cfg.aug.p_col_dropout = 0.25;
  cfg.encoder.d_model = 48;
  cfg.encoder.num_heads = 4;
  cfg.train.learning_rate = 5e-4;
  cfg.train.batch_size = 8;
  cfg.loss.temperature = 0.5;
  cfg.tokenizer.vocab_size = 555;
  cfg.linearize = LinearizeMode::Bracketed;
  cfg.seed = 99;

  const std::string path = testutil::temp_path("run.cfg");
  save_run_config(cfg, path);
  RunConfig loaded;
  load_run_config(loaded, path);
  REQUIRE(loaded.aug.p_col_dropout == cfg.aug.p_col_dropout);
  REQUIRE(loaded.encoder.d_model == cfg.encoder.d_model);
  REQUIRE(loaded.train.learning_rate == cfg.train.learning_rate);
  REQUIRE(loaded.train.batch_size == cfg.train.batch_size);
  REQUIRE(loaded.loss.temperature == cfg.loss.temperature);
  REQUIRE(loaded.tokenizer.vocab_size == cfg.tokenizer.vocab_size);
  REQUIRE(loaded.linearize == cfg.linearize);
  REQUIRE(loaded.seed == cfg.seed);
}

TEST_CASE("config parsing validates keys and values", "[config]") {
  RunConfig cfg;
  REQUIRE_THROWS_AS(set_config_key(cfg, "nope.key", "1"), std::invalid_argument);
  REQUIRE_THROWS_AS(set_config_key(cfg, "enc.d_model", "abc"), std::invalid_argument);
  REQUIRE_THROWS_AS(set_config_key(cfg, "aug.p_dummy", "0.5x"), std::invalid_argument);
  set_config_key(cfg, "aug.p_dummy", "0.5");
  REQUIRE(cfg.aug.p_dummy == 0.5);
  set_config_key(cfg, "linearize", "bracketed");
  REQUIRE(cfg.linearize == LinearizeMode::Bracketed);
  REQUIRE_THROWS_AS(set_config_key(cfg, "linearize", "sideways"), std::invalid_argument);
}

TEST_CASE("config file accepts comments and rejects junk", "[config]") {
  const std::string path = testutil::temp_path("cfg.txt");
  {
    std::ofstream out(path);
    out << "# a comment\n";
    out << "enc.d_model=32\n";
    out << "\n";
    out << "train.patience=7\n";
  }
  RunConfig cfg;
  load_run_config(cfg, path);
  REQUIRE(cfg.encoder.d_model == 32);
  REQUIRE(cfg.train.patience == 7);

  const std::string bad = testutil::temp_path("bad.txt");
  {
    std::ofstream out(bad);
    out << "enc.d_model 32\n";
  }
  RunConfig other;
  REQUIRE_THROWS_AS(load_run_config(other, bad), std::invalid_argument);
}

TEST_CASE("validate covers every sub-config", "[config]") {
  RunConfig cfg;
  cfg.validate();
  cfg.aug.p_dummy = 1.5;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.encoder.d_model = 63;  // indivisible by heads
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.train.warmup_fraction = 1.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.loss.temperature = -1.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
