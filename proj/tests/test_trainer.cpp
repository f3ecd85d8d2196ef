#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "saved/benchgen.hpp"
#include "saved/trainer.hpp"
#include "test_util.hpp"

using namespace saved;

namespace {

std::vector<Table> family_corpus(const std::string& family, std::size_t count) {
  std::vector<Table> tables;
  for (std::size_t i = 0; i < count; ++i) {
    Table t = generate_seed_table(family, 6, 1, 1, 1000 + i);
    t.name = family + "_" + std::to_string(i);
    tables.push_back(std::move(t));
  }
  return tables;
}

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.vocab_size = 300;
  cfg.d_model = 16;
  cfg.d_emb = 8;
  cfg.d_hidden = 24;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.max_len = 64;
  cfg.dropout_rate = 0.1;
  return cfg;
}

struct Pipeline {
  std::vector<Table> tables;
  SplitSpec split;
  TokenizerModel tokenizer;
  AugmentationConfig aug;
  EncoderConfig enc;
  LossConfig loss;
  TrainConfig cfg;
};

Pipeline small_pipeline(std::uint64_t seed) {
  Pipeline p;
  BenchmarkOptions options;
  options.rows = 10;
  options.num_numeric = 2;
  options.num_categorical = 1;
  const Benchmark bench = generate_benchmark(2, 5, 1, 2, 91, options);
  p.tables = bench.tables;
  p.split = stratified_split(p.tables, seed);
  std::vector<std::string> corpus;
  for (const Table& t : p.tables) {
    corpus.push_back(linearize(t));
  }
  TokenizerSettings settings;
  settings.vocab_size = 300;
  p.tokenizer = train_tokenizer(corpus, settings);
  p.aug.p_row_shuffle = 1.0;
  p.aug.p_missing = 0.02;
  p.aug.jitter_std = 0.01;
  p.aug.row_drop_frac = 0.1;
  p.enc = small_encoder();
  p.cfg.batch_size = 8;
  p.cfg.max_epochs = 2;
  p.cfg.learning_rate = 1e-3;
  p.cfg.seed = seed;
  return p;
}

std::vector<double> flatten_params(const ModelParameters& params) {
  std::vector<double> flat;
  for (const auto& [name, tensor] : params.named_parameters()) {
    flat.insert(flat.end(), tensor.values().begin(), tensor.values().end());
  }
  return flat;
}

}  // namespace

TEST_CASE("stratified split follows the ceil rule", "[trainer]") {
  SECTION("family of 20 splits 14/3/3") {
    const SplitSpec split = stratified_split(family_corpus("solo", 20), 5);
    REQUIRE(split.train.size() == 14);
    REQUIRE(split.validation.size() == 3);
    REQUIRE(split.test.size() == 3);
  }
  SECTION("family of 10 splits 7/2/1") {
    const SplitSpec split = stratified_split(family_corpus("solo", 10), 5);
    REQUIRE(split.train.size() == 7);
    REQUIRE(split.validation.size() == 2);
    REQUIRE(split.test.size() == 1);
  }
  SECTION("family of 7 still holds one table out") {
    const SplitSpec split = stratified_split(family_corpus("solo", 7), 5);
    REQUIRE(split.train.size() == 4);
    REQUIRE(split.validation.size() == 2);
    REQUIRE(split.test.size() == 1);
  }
  SECTION("family of 3 gets one table per split") {
    const SplitSpec split = stratified_split(family_corpus("solo", 3), 5);
    REQUIRE(split.train.size() == 1);
    REQUIRE(split.validation.size() == 1);
    REQUIRE(split.test.size() == 1);
  }
  SECTION("splits partition the corpus disjointly") {
    std::vector<Table> corpus = family_corpus("a", 9);
    const std::vector<Table> more = family_corpus("b", 12);
    corpus.insert(corpus.end(), more.begin(), more.end());
    const SplitSpec split = stratified_split(corpus, 7);
    std::set<std::string> all;
    for (const auto& list : {split.train, split.validation, split.test}) {
      for (const auto& id : list) {
        REQUIRE(all.insert(id).second);  // disjoint
      }
    }
    REQUIRE(all.size() == corpus.size());
  }
  SECTION("same seed reproduces the split") {
    const std::vector<Table> corpus = family_corpus("a", 11);
    const SplitSpec a = stratified_split(corpus, 3);
    const SplitSpec b = stratified_split(corpus, 3);
    REQUIRE(a.train == b.train);
    REQUIRE(a.validation == b.validation);
    REQUIRE(a.test == b.test);
  }
  SECTION("tiny families are rejected") {
    REQUIRE_THROWS_AS(stratified_split(family_corpus("a", 2), 1), std::invalid_argument);
  }
}

TEST_CASE("adamw update matches the hand evaluation", "[trainer]") {
  EncoderConfig cfg = small_encoder();
  ModelParameters params = init_parameters(cfg, 1);
  OptimizerState state = make_optimizer_state(params);
  TrainConfig tc;
  tc.learning_rate = 0.1;

  params.embedding.values()[0] = 1.0;
  params.zero_grad();
  const std::vector<double> before = flatten_params(params);

  SECTION("first step with g=0.5, no decay") {
    tc.weight_decay = 0.0;
    params.embedding.grad()[0] = 0.5;
    adamw_step(params, state, tc, tc.learning_rate);
    // m_hat = 0.5, sqrt(v_hat) = 0.5 -> p = 1 - 0.1 * 0.5/(0.5 + 1e-8)
    REQUIRE(params.embedding.values()[0] == Catch::Approx(0.9).margin(1e-8));
    // all zero-gradient parameters stay put
    const std::vector<double> after = flatten_params(params);
    for (std::size_t i = 1; i < after.size(); ++i) {
      REQUIRE(after[i] == before[i]);
    }
  }
  SECTION("zero gradient with decay only") {
    tc.weight_decay = 0.1;
    adamw_step(params, state, tc, tc.learning_rate);
    REQUIRE(params.embedding.values()[0] == Catch::Approx(0.99).margin(1e-12));
  }
  SECTION("non-finite gradient aborts") {
    params.embedding.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(adamw_step(params, state, tc, 0.1), std::runtime_error);
  }
}

TEST_CASE("learning rate schedule ramps linearly then stays flat", "[trainer]") {
  TrainConfig cfg;
  cfg.learning_rate = 2.0;
  cfg.warmup_fraction = 0.10;
  REQUIRE(lr_schedule(5, 100, cfg) == Catch::Approx(1.0));
  REQUIRE(lr_schedule(10, 100, cfg) == Catch::Approx(2.0));
  REQUIRE(lr_schedule(100, 100, cfg) == Catch::Approx(2.0));
  // continuity at the warmup boundary
  REQUIRE(std::fabs(lr_schedule(9, 100, cfg) - 0.9 * 2.0) < 1e-12);
  REQUIRE_THROWS_AS(lr_schedule(101, 100, cfg), std::invalid_argument);
}

TEST_CASE("gradient clipping scales by max_norm/norm", "[trainer]") {
  EncoderConfig cfg = small_encoder();
  ModelParameters params = init_parameters(cfg, 1);
  params.zero_grad();
  SECTION("norm 2 with max 1 scales by 0.5") {
    params.embedding.grad()[0] = 2.0;
    REQUIRE(clip_gradients(params, 1.0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(params.embedding.grad()[0] == Catch::Approx(1.0).margin(1e-15));
  }
  SECTION("norm below max is untouched") {
    params.embedding.grad()[0] = 0.5;
    REQUIRE(clip_gradients(params, 1.0) == 1.0);
    REQUIRE(params.embedding.grad()[0] == 0.5);
  }
  SECTION("post-clip norm never exceeds max") {
    RandomStream rng(8);
    for (auto& [name, tensor] : params.named_parameters()) {
      for (double& g : tensor.grad()) {
        g = rng.uniform(-1.0, 1.0);
      }
    }
    clip_gradients(params, 1.0);
    double sq = 0.0;
    for (const auto& [name, tensor] : params.named_parameters()) {
      for (const double g : tensor.grad()) {
        sq += g * g;
      }
    }
    REQUIRE(std::sqrt(sq) <= 1.0 + 1e-12);
  }
}

TEST_CASE("early stopping trace", "[trainer]") {
  EarlyStopper stopper(2);
  REQUIRE(stopper.observe(1, 1.0));
  REQUIRE_FALSE(stopper.should_stop());
  REQUIRE(stopper.observe(2, 0.9));
  REQUIRE_FALSE(stopper.should_stop());
  REQUIRE_FALSE(stopper.observe(3, 0.91));
  REQUIRE_FALSE(stopper.should_stop());
  REQUIRE_FALSE(stopper.observe(4, 0.92));
  REQUIRE(stopper.should_stop());
  REQUIRE(stopper.best_epoch() == 2);

  // sub-threshold improvement counts as a plateau
  EarlyStopper fine(1);
  REQUIRE(fine.observe(1, 1.0));
  REQUIRE_FALSE(fine.observe(2, 1.0 - 0.5e-4));
  REQUIRE(fine.should_stop());
}

TEST_CASE("one-epoch budget yields one history row", "[trainer]") {
  Pipeline p = small_pipeline(11);
  p.cfg.max_epochs = 1;
  const TrainResult result =
      train(p.tables, p.split, p.tokenizer, LinearizeMode::Flat, p.aug, p.enc, p.loss, p.cfg);
  REQUIRE(result.history.size() == 1);
  REQUIRE(std::isfinite(result.history[0].train_loss));
  REQUIRE(std::isfinite(result.history[0].val_loss));
}

TEST_CASE("training is deterministic in reference mode", "[trainer]") {
  const Pipeline p = small_pipeline(21);
  const TrainResult a =
      train(p.tables, p.split, p.tokenizer, LinearizeMode::Flat, p.aug, p.enc, p.loss, p.cfg);
  const TrainResult b =
      train(p.tables, p.split, p.tokenizer, LinearizeMode::Flat, p.aug, p.enc, p.loss, p.cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].train_loss == b.history[i].train_loss);
    REQUIRE(a.history[i].val_loss == b.history[i].val_loss);
    REQUIRE(a.history[i].lr == b.history[i].lr);
  }
  REQUIRE(flatten_params(a.final) == flatten_params(b.final));
}

TEST_CASE("test-split tables never influence the checkpoint", "[trainer]") {
  const Pipeline p = small_pipeline(31);
  const TrainResult with_test =
      train(p.tables, p.split, p.tokenizer, LinearizeMode::Flat, p.aug, p.enc, p.loss, p.cfg);

  std::set<std::string> held_out(p.split.test.begin(), p.split.test.end());
  std::vector<Table> reduced;
  for (const Table& t : p.tables) {
    if (held_out.count(t.name) == 0) {
      reduced.push_back(t);
    }
  }
  SplitSpec reduced_split = p.split;
  reduced_split.test.clear();
  const TrainResult without_test = train(reduced, reduced_split, p.tokenizer,
                                         LinearizeMode::Flat, p.aug, p.enc, p.loss, p.cfg);
  REQUIRE(flatten_params(with_test.final) == flatten_params(without_test.final));
  REQUIRE(flatten_params(with_test.best) == flatten_params(without_test.best));
}

TEST_CASE("training rejects bad inputs", "[trainer]") {
  Pipeline p = small_pipeline(41);
  SECTION("empty train split") {
    SplitSpec empty;
    REQUIRE_THROWS_AS(train(p.tables, empty, p.tokenizer, LinearizeMode::Flat, p.aug,
                            p.enc, p.loss, p.cfg),
                      std::invalid_argument);
  }
  SECTION("invalid config") {
    p.cfg.max_epochs = 0;
    REQUIRE_THROWS_AS(train(p.tables, p.split, p.tokenizer, LinearizeMode::Flat, p.aug,
                            p.enc, p.loss, p.cfg),
                      std::invalid_argument);
  }
}

TEST_CASE("metrics csv is stable and well-formed", "[trainer]") {
  std::vector<EpochStats> history = {{1, 0.5, 0.6, 0.1, 1e-3}, {2, 0.4, 0.55, 0.2, 1e-3}};
  const std::string path = testutil::temp_path("metrics.csv");
  write_metrics_csv(history, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "epoch,train_loss,val_loss,val_separation,lr");
  std::getline(in, line);
  REQUIRE(line == "1,0.5,0.6,0.1,0.001");
}
