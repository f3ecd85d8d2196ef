#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string out_file = testutil::temp_path("cli_out.txt");
  const std::string cmd =
      std::string(SAVED_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::stringstream buffer;
  buffer << in.rdbuf();
  result.output = buffer.str();
  return result;
}

std::map<std::string, std::string> dir_contents(const std::string& root) {
  std::map<std::string, std::string> contents;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) {
      continue;
    }
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    contents[fs::relative(entry.path(), root).string()] = buffer.str();
  }
  return contents;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string tiny_config_file() {
  const std::string path = testutil::temp_path("tiny.cfg");
  std::ofstream out(path);
  out << "enc.vocab_size=300\n"
         "enc.d_model=16\n"
         "enc.d_emb=8\n"
         "enc.d_hidden=24\n"
         "enc.num_heads=2\n"
         "enc.num_layers=1\n"
         "enc.max_len=64\n"
         "enc.dropout_rate=0.1\n"
         "train.batch_size=8\n"
         "train.max_epochs=2\n"
         "train.learning_rate=0.001\n"
         "tok.vocab_size=300\n"
         "aug.p_row_shuffle=1\n"
         "aug.jitter_std=0.005\n"
         "aug.row_drop_frac=0.1\n";
  return path;
}

}  // namespace

TEST_CASE("benchgen writes the corpus and is reproducible", "[cli]") {
  const std::string dir_a = testutil::temp_path("bench_a");
  const CliResult first =
      run_cli("--seed 7 benchgen --families 3 --versions 5 --rows 12 --out " + dir_a);
  INFO(first.output);
  REQUIRE(first.code == 0);

  std::size_t csv_count = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (entry.path().extension() == ".csv") {
      csv_count += 1;
    }
  }
  REQUIRE(csv_count == 18);  // 3 families x (5 versions + seed)
  REQUIRE(fs::exists(fs::path(dir_a) / "manifest.txt"));

  const std::string dir_b = testutil::temp_path("bench_b");
  REQUIRE(run_cli("--seed 7 benchgen --families 3 --versions 5 --rows 12 --out " +
                  dir_b).code == 0);
  REQUIRE(dir_contents(dir_a) == dir_contents(dir_b));
}

TEST_CASE("benchgen argument and io failures map to the exit contract", "[cli]") {
  REQUIRE(run_cli("benchgen --families 3").code == 1);             // missing --out
  REQUIRE(run_cli("benchgen --out /proc/saved_nope").code == 2);   // unwritable
}

TEST_CASE("full pipeline through the cli", "[cli]") {
  const std::string bench_dir = testutil::temp_path("pipeline_bench");
  REQUIRE(run_cli("--seed 11 benchgen --families 3 --versions 5 --rows 12 --out " +
                  bench_dir).code == 0);
  const std::string manifest = bench_dir + "/manifest.txt";
  const std::string cfg = tiny_config_file();

  SECTION("tokenizer-train respects the vocab budget and reruns identically") {
    const std::string model_a = testutil::temp_path("tok_a.model");
    REQUIRE(run_cli("--config " + cfg + " tokenizer-train --corpus " + manifest +
                    " --out " + model_a).code == 0);
    const std::string header = read_file(model_a);
    REQUIRE(header.rfind("saved-bpe v1", 0) == 0);

    const std::string model_b = testutil::temp_path("tok_b.model");
    REQUIRE(run_cli("--config " + cfg + " tokenizer-train --corpus " + manifest +
                    " --vocab-size 50 --out " + model_b).code == 0);
    std::ifstream in(model_b);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    REQUIRE(line == "vocab_size=50");

    const std::string model_c = testutil::temp_path("tok_c.model");
    REQUIRE(run_cli("--config " + cfg + " tokenizer-train --corpus " + manifest +
                    " --out " + model_c).code == 0);
    REQUIRE(read_file(model_a) == read_file(model_c));
  }

  SECTION("train, embed and eval chain") {
    const std::string tok_model = testutil::temp_path("tok.model");
    REQUIRE(run_cli("--config " + cfg + " tokenizer-train --corpus " + manifest +
                    " --out " + tok_model).code == 0);

    const std::string run_a = testutil::temp_path("run_a");
    const CliResult train_a = run_cli("--config " + cfg + " --seed 5 train --corpus " +
                                      manifest + " --tokenizer " + tok_model +
                                      " --out " + run_a);
    INFO(train_a.output);
    REQUIRE(train_a.code == 0);
    for (const char* artifact :
         {"config.txt", "split.txt", "metrics.csv", "best.ckpt", "final.ckpt"}) {
      REQUIRE(fs::exists(fs::path(run_a) / artifact));
    }

    // reference-mode determinism: identical metrics on a rerun
    const std::string run_b = testutil::temp_path("run_b");
    REQUIRE(run_cli("--config " + cfg + " --seed 5 train --corpus " + manifest +
                    " --tokenizer " + tok_model + " --out " + run_b).code == 0);
    REQUIRE(read_file(run_a + "/metrics.csv") == read_file(run_b + "/metrics.csv"));

    // zero epoch budget is a validation error
    REQUIRE(run_cli("--config " + cfg + " train --corpus " + manifest + " --tokenizer " +
                    tok_model + " --out " + testutil::temp_path("run_c") +
                    " --max-epochs 0").code == 1);

    const std::string emb_a = testutil::temp_path("emb_a.tsv");
    REQUIRE(run_cli("--config " + cfg + " embed --corpus " + manifest + " --checkpoint " +
                    run_a + "/best.ckpt --tokenizer " + tok_model + " --out " +
                    emb_a).code == 0);
    // 18 tables, one line each plus the header
    std::ifstream emb_in(emb_a);
    std::string line;
    std::size_t lines = 0, vector_width = 0;
    std::getline(emb_in, line);
    while (std::getline(emb_in, line)) {
      if (!line.empty()) {
        lines += 1;
        vector_width = 1 + std::count(line.begin() + line.rfind('\t'), line.end(), ' ');
      }
    }
    REQUIRE(lines == 18);
    REQUIRE(vector_width == 8);  // d_emb

    const std::string emb_b = testutil::temp_path("emb_b.tsv");
    REQUIRE(run_cli("--config " + cfg + " embed --corpus " + manifest + " --checkpoint " +
                    run_a + "/best.ckpt --tokenizer " + tok_model + " --out " +
                    emb_b).code == 0);
    REQUIRE(read_file(emb_a) == read_file(emb_b));

    const std::string report = testutil::temp_path("report.csv");
    const CliResult eval = run_cli("eval --embeddings " + emb_a + " --manifest " +
                                   manifest + " --split " + run_a +
                                   "/split.txt --report " + report);
    INFO(eval.output);
    REQUIRE(eval.code == 0);
    REQUIRE(eval.output.find("TPR=") != std::string::npos);
    REQUIRE(eval.output.find("XI=") != std::string::npos);
    REQUIRE(read_file(report).find("category,count,mean,std") == 0);
  }
}

TEST_CASE("eval on hand-built clustered embeddings", "[cli]") {
  const std::string manifest = testutil::temp_path("manifest.txt");
  {
    std::ofstream out(manifest);
    out << "TABLE a1 famA tables/a1.csv\n"
           "TABLE a2 famA tables/a2.csv\n"
           "TABLE b1 famB tables/b1.csv\n"
           "TABLE b2 famB tables/b2.csv\n"
           "PAIR a1 a2\n"
           "PAIR b1 b2\n";
  }
  const std::string embeddings = testutil::temp_path("clustered.tsv");
  {
    std::ofstream out(embeddings);
    out << "saved-embeddings v1\n"
           "a1\tfamA\t1 0\n"
           "a2\tfamA\t1 0\n"
           "b1\tfamB\t0 1\n"
           "b2\tfamB\t0 1\n";
  }
  const CliResult result = run_cli("eval --embeddings " + embeddings + " --manifest " + manifest);
  INFO(result.output);
  REQUIRE(result.code == 0);
  REQUIRE(result.output.find("TPR=1 TNR=1") != std::string::npos);

  REQUIRE(run_cli("eval --embeddings " + embeddings + " --manifest " + manifest +
                  " --xi 1.5").code == 1);

  // manifest/embedding mismatch is a validation failure
  const std::string extra = testutil::temp_path("extra.tsv");
  {
    std::ofstream out(extra);
    out << "saved-embeddings v1\n"
           "zz\tfamZ\t1 0\n";
  }
  REQUIRE(run_cli("eval --embeddings " + extra + " --manifest " + manifest).code == 1);
}
