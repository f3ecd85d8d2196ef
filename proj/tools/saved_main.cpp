// saved: contrastive table-version discovery pipeline.
//
// Subcommands: benchgen, tokenizer-train, train, embed, eval.
// Exit codes: 0 success, 1 usage/validation error, 2 IO/environment error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "saved/saved.hpp"

namespace {

// --config file first, then flag overrides on top
saved::RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed_flag,
                                std::size_t threads) {
  saved::RunConfig cfg;
  if (!config_path.empty()) {
    saved::load_run_config(cfg, config_path);
  }
  for (const std::string& kv : overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got: " + kv);
    }
    saved::set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed_flag.has_value()) {
    cfg.seed = *seed_flag;
  }
  cfg.train.seed = cfg.seed;
  cfg.train.threads = threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saved: contrastive table version discovery"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed_flag;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "run configuration file (key=value lines)");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");
  app.add_option("--seed", seed_flag, "random seed");
  app.add_option("--threads", threads, "worker threads for view prep / evaluation");

  // benchgen
  saved::cli::BenchgenArgs bench_args;
  CLI::App* bench = app.add_subcommand("benchgen", "generate a synthetic benchmark corpus");
  bench->add_option("--families", bench_args.families, "number of dataset families");
  bench->add_option("--versions", bench_args.versions, "versions derived per seed table");
  bench->add_option("--depth-min", bench_args.depth_min, "minimum transformation depth");
  bench->add_option("--depth-max", bench_args.depth_max, "maximum transformation depth");
  bench->add_option("--rows", bench_args.rows, "rows per seed table");
  bench->add_option("--numeric", bench_args.num_numeric, "numeric columns per seed table");
  bench->add_option("--categorical", bench_args.num_categorical,
                    "categorical columns per seed table");
  bench->add_option("--decoys", bench_args.decoys, "same-family non-version tables");
  bench->add_option("--out", bench_args.out, "output directory")->required();

  // tokenizer-train
  saved::cli::TokenizerTrainArgs tok_args;
  CLI::App* tok = app.add_subcommand("tokenizer-train", "train the BPE tokenizer on a corpus");
  tok->add_option("--corpus", tok_args.manifest, "benchmark manifest file")->required();
  tok->add_option("--out", tok_args.out, "tokenizer model output path")->required();
  tok->add_option("--only", tok_args.only_ids, "restrict to these table ids");
  std::optional<std::size_t> vocab_flag;
  tok->add_option("--vocab-size", vocab_flag, "tokenizer vocabulary budget");

  // train
  saved::cli::TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "contrastive training run");
  train_cmd->add_option("--corpus", train_args.manifest, "benchmark manifest file")->required();
  train_cmd->add_option("--tokenizer", train_args.tokenizer_path, "tokenizer model")->required();
  train_cmd->add_option("--out", train_args.out_dir, "run directory")->required();
  std::optional<std::size_t> epochs_flag;
  train_cmd->add_option("--max-epochs", epochs_flag, "epoch budget");

  // embed
  saved::cli::EmbedArgs embed_args;
  CLI::App* embed = app.add_subcommand("embed", "embed tables with a trained checkpoint");
  embed->add_option("--corpus", embed_args.manifest, "benchmark manifest file")->required();
  embed->add_option("--checkpoint", embed_args.checkpoint, "model checkpoint")->required();
  embed->add_option("--tokenizer", embed_args.tokenizer_path, "tokenizer model")->required();
  embed->add_option("--out", embed_args.out, "embeddings output path")->required();

  // eval
  saved::cli::EvalArgs eval_args;
  double xi_flag = -1.0;
  CLI::App* eval = app.add_subcommand("eval", "corpus-level similarity evaluation");
  eval->add_option("--embeddings", eval_args.embeddings, "embeddings file")->required();
  eval->add_option("--manifest", eval_args.manifest, "benchmark manifest file")->required();
  eval->add_option("--xi", xi_flag, "similarity threshold in (0,1]; selected on the "
                                    "validation split when omitted");
  eval->add_option("--split", eval_args.split_path, "split file from a training run");
  eval->add_flag("--holdout-test", eval_args.holdout_test,
                 "restrict metrics to pairs involving held-out test tables");
  eval->add_option("--report", eval_args.report_out, "report output path");
  eval->add_option("--dump-theta", eval_args.theta_out, "full cosine matrix CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      return app.exit(e);
    }
    app.exit(e);
    return saved::cli::kExitUsage;
  }

  try {
    if (bench->parsed()) {
      bench_args.seed = seed_flag.value_or(0);
      return saved::cli::cmd_benchgen(bench_args);
    }
    if (tok->parsed()) {
      tok_args.cfg = resolve_config(config_path, overrides, seed_flag, threads);
      if (vocab_flag.has_value()) {
        tok_args.cfg.tokenizer.vocab_size = *vocab_flag;
      }
      return saved::cli::cmd_tokenizer_train(tok_args);
    }
    if (train_cmd->parsed()) {
      train_args.cfg = resolve_config(config_path, overrides, seed_flag, threads);
      if (epochs_flag.has_value()) {
        if (*epochs_flag == 0) {
          std::cerr << "error: --max-epochs must be at least 1\n";
          return saved::cli::kExitUsage;
        }
        train_args.cfg.train.max_epochs = *epochs_flag;
      }
      return saved::cli::cmd_train(train_args);
    }
    if (embed->parsed()) {
      const saved::RunConfig cfg = resolve_config(config_path, overrides, seed_flag, threads);
      embed_args.mode = cfg.linearize;
      return saved::cli::cmd_embed(embed_args);
    }
    if (eval->parsed()) {
      if (eval->count("--xi") > 0) {
        eval_args.xi = xi_flag;
      }
      eval_args.threads = threads;
      return saved::cli::cmd_eval(eval_args);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return saved::cli::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return saved::cli::kExitIo;
  }
  return saved::cli::kExitUsage;
}
