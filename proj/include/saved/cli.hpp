#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saved/benchgen.hpp"
#include "saved/config.hpp"
#include "saved/encoder.hpp"
#include "saved/evaluation.hpp"
#include "saved/tokenizer.hpp"
#include "saved/trainer.hpp"

namespace saved::cli {

/// Exit-code contract shared by every subcommand: 0 success, 1 usage or
/// validation failure, 2 environment/IO failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;

namespace detail {

template <typename Fn>
int run_guarded(Fn&& fn) {
  try {
    fn();
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// split file io
// ---------------------------------------------------------------------------

inline void save_split(const SplitSpec& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  for (const auto& id : split.train) {
    out << "train " << id << '\n';
  }
  for (const auto& id : split.validation) {
    out << "val " << id << '\n';
  }
  for (const auto& id : split.test) {
    out << "test " << id << '\n';
  }
}

inline SplitSpec load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  SplitSpec split;
  std::string kind, id;
  while (in >> kind >> id) {
    if (kind == "train") {
      split.train.push_back(id);
    } else if (kind == "val") {
      split.validation.push_back(id);
    } else if (kind == "test") {
      split.test.push_back(id);
    } else {
      throw std::runtime_error(path + ": unknown split kind " + kind);
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// embeddings file io
// ---------------------------------------------------------------------------

inline void save_embeddings(const EmbeddingCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << "saved-embeddings v1\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out << corpus.ids[i] << '\t' << corpus.tags[i] << '\t';
    for (std::size_t j = 0; j < corpus.vectors[i].size(); ++j) {
      if (j > 0) {
        out << ' ';
      }
      out << format_number(corpus.vectors[i][j]);
    }
    out << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

inline EmbeddingCorpus load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line != "saved-embeddings v1") {
    throw std::runtime_error(path + ": not an embeddings file");
  }
  EmbeddingCorpus corpus;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const std::size_t tab1 = line.find('\t');
    const std::size_t tab2 = tab1 == std::string::npos ? std::string::npos
                                                       : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) {
      throw std::runtime_error(path + ": malformed embeddings line");
    }
    corpus.ids.push_back(line.substr(0, tab1));
    corpus.tags.push_back(line.substr(tab1 + 1, tab2 - tab1 - 1));
    std::vector<double> vec;
    std::istringstream stream(line.substr(tab2 + 1));
    double v = 0.0;
    while (stream >> v) {
      vec.push_back(v);
    }
    corpus.vectors.push_back(std::move(vec));
  }
  corpus.validate();
  return corpus;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct BenchgenArgs {
  std::size_t families = 3;
  std::size_t versions = 5;
  std::size_t depth_min = 1;
  std::size_t depth_max = 3;
  std::size_t rows = 48;
  std::size_t num_numeric = 3;
  std::size_t num_categorical = 2;
  std::size_t decoys = 0;
  std::string out;
  std::uint64_t seed = 0;
};

inline int cmd_benchgen(const BenchgenArgs& args) {
  return detail::run_guarded([&] {
    BenchmarkOptions options;
    options.rows = args.rows;
    options.num_numeric = args.num_numeric;
    options.num_categorical = args.num_categorical;
    options.decoys_per_family = args.decoys;
    const Benchmark bench = generate_benchmark(args.families, args.versions,
                                               args.depth_min, args.depth_max,
                                               args.seed, options);
    save_benchmark(bench, args.out);
    std::cout << "wrote " << bench.tables.size() << " tables and "
              << bench.manifest.truth.version_pairs.size() << " version pairs to "
              << args.out << "\n";
  });
}

struct TokenizerTrainArgs {
  std::string manifest;
  std::string out;
  RunConfig cfg;
  // ids restricted to this list when non-empty (e.g. the train split)
  std::vector<std::string> only_ids;
};

inline int cmd_tokenizer_train(const TokenizerTrainArgs& args) {
  return detail::run_guarded([&] {
    const BenchmarkManifest manifest = load_manifest(args.manifest);
    const std::vector<Table> tables = load_benchmark_tables(manifest, args.manifest);
    const std::set<std::string> only(args.only_ids.begin(), args.only_ids.end());
    std::vector<std::string> corpus;
    for (const Table& table : tables) {
      if (!only.empty() && only.count(table.name) == 0) {
        continue;
      }
      corpus.push_back(linearize(table, args.cfg.linearize));
    }
    const TokenizerModel model = train_tokenizer(corpus, args.cfg.tokenizer);
    save_tokenizer(model, args.out);
    std::cout << "trained tokenizer: " << model.vocab_count() << " tokens, "
              << model.merges().size() << " merges -> " << args.out << "\n";
  });
}

struct TrainArgs {
  std::string manifest;
  std::string tokenizer_path;
  std::string out_dir;
  RunConfig cfg;
};

inline int cmd_train(const TrainArgs& args) {
  return detail::run_guarded([&] {
    args.cfg.validate();
    const BenchmarkManifest manifest = load_manifest(args.manifest);
    const std::vector<Table> tables = load_benchmark_tables(manifest, args.manifest);
    const TokenizerModel tokenizer = load_tokenizer(args.tokenizer_path);

    RunConfig cfg = args.cfg;
    cfg.train.seed = cfg.seed;
    const SplitSpec split = stratified_split(tables, cfg.seed);

    namespace fs = std::filesystem;
    fs::create_directories(args.out_dir);
    save_run_config(cfg, (fs::path(args.out_dir) / "config.txt").string());
    save_split(split, (fs::path(args.out_dir) / "split.txt").string());

    const TrainResult result = train(tables, split, tokenizer, cfg.linearize, cfg.aug,
                                     cfg.encoder, cfg.loss, cfg.train);

    write_metrics_csv(result.history, (fs::path(args.out_dir) / "metrics.csv").string());
    save_checkpoint(result.best, (fs::path(args.out_dir) / "best.ckpt").string());
    save_checkpoint(result.final, (fs::path(args.out_dir) / "final.ckpt").string());
    std::cout << "trained " << result.history.size() << " epochs, best epoch "
              << result.best_epoch << " (val loss "
              << format_number(result.history.empty()
                                   ? 0.0
                                   : result.history[result.best_epoch - 1].val_loss)
              << ") -> " << args.out_dir << "\n";
  });
}

struct EmbedArgs {
  std::string manifest;
  std::string checkpoint;
  std::string tokenizer_path;
  std::string out;
  LinearizeMode mode = LinearizeMode::Flat;
  std::size_t batch_size = 16;
};

inline int cmd_embed(const EmbedArgs& args) {
  return detail::run_guarded([&] {
    const BenchmarkManifest manifest = load_manifest(args.manifest);
    const std::vector<Table> tables = load_benchmark_tables(manifest, args.manifest);
    const TokenizerModel tokenizer = load_tokenizer(args.tokenizer_path);
    const ModelParameters params = load_checkpoint(args.checkpoint);
    const EncoderConfig& cfg = params.config;

    EmbeddingCorpus corpus;
    NoGradGuard no_grad;
    RandomStream unused_rng(0);
    for (std::size_t start = 0; start < tables.size(); start += args.batch_size) {
      const std::size_t count = std::min(args.batch_size, tables.size() - start);
      std::vector<TokenSequence> seqs;
      seqs.reserve(count);
      for (std::size_t i = start; i < start + count; ++i) {
        seqs.push_back(encode(tokenizer, linearize(tables[i], args.mode), cfg.max_len,
                              static_cast<std::uint32_t>(cfg.vocab_size)));
      }
      const Tensor z = encode_batch(params, seqs, /*train=*/false, unused_rng);
      for (std::size_t i = 0; i < count; ++i) {
        corpus.ids.push_back(tables[start + i].name);
        corpus.tags.push_back(tables[start + i].source_dataset);
        corpus.vectors.emplace_back(z.values().begin() + i * cfg.d_emb,
                                    z.values().begin() + (i + 1) * cfg.d_emb);
      }
    }
    save_embeddings(corpus, args.out);
    std::cout << "embedded " << corpus.size() << " tables (d_emb " << cfg.d_emb
              << ") -> " << args.out << "\n";
  });
}

struct EvalArgs {
  std::string embeddings;
  std::string manifest;
  std::optional<double> xi;
  std::string split_path;    // empty: no split knowledge
  bool holdout_test = false; // restrict metric pairs to those touching test ids
  std::string report_out;
  std::string theta_out;     // optional full-matrix dump
  std::size_t threads = 1;
};

namespace detail {

inline void write_report(const EmbeddingCorpus& corpus, const SimilarityReport& report,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  auto block = [&out](const char* name, const std::vector<double>& xs) {
    double mean = 0.0, sq = 0.0;
    for (const double x : xs) {
      mean += x;
    }
    if (!xs.empty()) {
      mean /= static_cast<double>(xs.size());
      for (const double x : xs) {
        sq += (x - mean) * (x - mean);
      }
      sq = std::sqrt(sq / static_cast<double>(xs.size()));
    }
    out << name << ',' << xs.size() << ',' << format_number(mean) << ','
        << format_number(sq) << '\n';
  };
  out << "category,count,mean,std\n";
  block("self", report.categories.self_sims);
  block("intra", report.categories.intra);
  block("inter", report.categories.inter);
  out << "TPR=" << format_number(report.tpr) << " TNR=" << format_number(report.tnr)
      << " SEP=" << format_number(report.separation_score)
      << " XI=" << format_number(report.xi) << '\n';
  (void)corpus;
}

inline void write_theta(const EmbeddingCorpus& corpus, const std::vector<double>& theta,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  const std::size_t n = corpus.size();
  out << "id";
  for (const auto& id : corpus.ids) {
    out << ',' << id;
  }
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << corpus.ids[i];
    for (std::size_t j = 0; j < n; ++j) {
      out << ',' << format_number(theta[i * n + j]);
    }
    out << '\n';
  }
}

}  // namespace detail

inline int cmd_eval(const EvalArgs& args) {
  return detail::run_guarded([&] {
    if (args.xi.has_value() && !(*args.xi > 0.0 && *args.xi <= 1.0)) {
      throw std::invalid_argument("eval: --xi must lie in (0,1]");
    }
    const EmbeddingCorpus corpus = load_embeddings(args.embeddings);
    const BenchmarkManifest manifest = load_manifest(args.manifest);

    std::set<std::string> manifest_ids;
    for (const TableRecord& record : manifest.records) {
      manifest_ids.insert(record.id);
    }
    for (const auto& id : corpus.ids) {
      if (manifest_ids.count(id) == 0) {
        throw std::invalid_argument("eval: embedding id " + id + " not in manifest");
      }
    }
    if (manifest_ids.size() != corpus.size()) {
      throw std::invalid_argument("eval: manifest and embeddings list different tables");
    }

    SplitSpec split;
    const bool have_split = !args.split_path.empty();
    if (have_split) {
      split = load_split(args.split_path);
    }
    if (args.holdout_test && !have_split) {
      throw std::invalid_argument("eval: --holdout-test requires --split");
    }

    double xi = 0.0;
    if (args.xi.has_value()) {
      xi = *args.xi;
    } else if (have_split) {
      // selection on the validation split: pairs inside train+val with at
      // least one validation endpoint, so test tables stay fully held out
      std::set<std::string> seen(split.train.begin(), split.train.end());
      const FocusSet val_focus(split.validation.begin(), split.validation.end());
      seen.insert(val_focus.begin(), val_focus.end());
      const EmbeddingCorpus val_corpus = subset(corpus, seen);
      xi = select_threshold(cosine_matrix(val_corpus, args.threads), manifest.truth,
                            val_corpus, &val_focus);
    } else {
      xi = select_threshold(cosine_matrix(corpus, args.threads), manifest.truth, corpus);
    }

    const FocusSet test_focus(split.test.begin(), split.test.end());
    const FocusSet* focus = args.holdout_test ? &test_focus : nullptr;
    const SimilarityReport report =
        build_report(corpus, manifest.truth, xi, focus, args.threads);

    if (!args.report_out.empty()) {
      detail::write_report(corpus, report, args.report_out);
    }
    if (!args.theta_out.empty()) {
      detail::write_theta(corpus, report.theta, args.theta_out);
    }
    std::cout << "TPR=" << format_number(report.tpr)
              << " TNR=" << format_number(report.tnr)
              << " SEP=" << format_number(report.separation_score)
              << " XI=" << format_number(report.xi) << "\n";
  });
}

}  // namespace saved::cli
