#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "saved/augment.hpp"
#include "saved/encoder.hpp"
#include "saved/evaluation.hpp"
#include "saved/loss.hpp"
#include "saved/rng.hpp"
#include "saved/table.hpp"
#include "saved/tokenizer.hpp"

namespace saved {

/// Validation-loss improvements below this are treated as a plateau.
inline constexpr double kImprovementThreshold = 1e-4;
inline constexpr double kAdamEpsilon = 1e-8;

struct TrainConfig {
  double learning_rate = 2.3e-4;
  double weight_decay = 5.7e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 32;  // N
  std::size_t max_epochs = 30;
  double warmup_fraction = 0.10;
  double clip_max_norm = 1.0;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // >1 parallelizes per-batch view preparation

  void validate() const {
    if (!(learning_rate > 0.0) || !(weight_decay >= 0.0) || !(clip_max_norm > 0.0)) {
      throw std::invalid_argument("TrainConfig: rates must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("TrainConfig: betas must lie in (0,1)");
    }
    if (batch_size < 1 || max_epochs < 1 || patience < 1) {
      throw std::invalid_argument("TrainConfig: batch_size, max_epochs and patience must be >= 1");
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
      throw std::invalid_argument("TrainConfig: warmup_fraction must lie in [0,1)");
    }
  }
};

/// Disjoint per-family 70/15/15 table-id split.
struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Per family: deterministic shuffle, then ceil(0.7k) / ceil(0.15k) /
/// remainder.  When the ceilings consume everything (k = 3 or 7) the test
/// split still receives one table, ceded by the train side, so held-out
/// evaluation is always possible.
inline SplitSpec stratified_split(const std::vector<Table>& corpus, std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> families;
  for (const Table& table : corpus) {
    families[table.source_dataset].push_back(table.name);
  }
  SplitSpec split;
  for (auto& [family, ids] : families) {
    const std::size_t k = ids.size();
    if (k < 3) {
      throw std::invalid_argument("stratified_split: family '" + family +
                                  "' has fewer than 3 tables");
    }
    std::sort(ids.begin(), ids.end());
    RandomStream rng(mix_seed(seed, fnv1a_hash(family)));
    rng.shuffle(ids);
    const auto kd = static_cast<double>(k);
    std::size_t n_train = static_cast<std::size_t>(std::ceil(0.70 * kd));
    std::size_t n_val = static_cast<std::size_t>(std::ceil(0.15 * kd));
    std::size_t n_test = k - std::min(k, n_train + n_val);
    if (n_test == 0) {
      n_test = 1;
      n_train = k - n_val - n_test;
    }
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < n_train; ++i) {
      split.train.push_back(ids[cursor++]);
    }
    for (std::size_t i = 0; i < n_val; ++i) {
      split.validation.push_back(ids[cursor++]);
    }
    for (std::size_t i = 0; i < n_test; ++i) {
      split.test.push_back(ids[cursor++]);
    }
  }
  return split;
}

/// First/second moment buffers aligned with named_parameters() order.
struct OptimizerState {
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots;
  std::size_t step = 0;  // t
};

inline OptimizerState make_optimizer_state(const ModelParameters& params) {
  OptimizerState state;
  for (const auto& [name, tensor] : params.named_parameters()) {
    state.slots.push_back({std::vector<double>(tensor.numel(), 0.0),
                           std::vector<double>(tensor.numel(), 0.0)});
  }
  return state;
}

/// Global L2-norm gradient clipping; returns the applied scale (1.0 when no
/// clip happens).  Throws on non-finite gradients.
inline double clip_gradients(ModelParameters& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, tensor] : params.named_parameters()) {
    for (const double g : tensor.grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("clip_gradients: non-finite gradient in " + name);
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) {
    return 1.0;
  }
  const double scale = max_norm / norm;
  for (auto& [name, tensor] : params.named_parameters()) {
    for (double& g : tensor.grad()) {
      g *= scale;
    }
  }
  return scale;
}

/// One decoupled-weight-decay Adam update over every parameter, at effective
/// learning rate lr_t.  Advances the shared step counter once.
inline void adamw_step(ModelParameters& params, OptimizerState& state,
                       const TrainConfig& cfg, double lr_t) {
  auto named = params.named_parameters();
  if (named.size() != state.slots.size()) {
    throw std::invalid_argument("adamw_step: optimizer state does not match parameters");
  }
  state.step += 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t s = 0; s < named.size(); ++s) {
    auto& [name, tensor] = named[s];
    auto& slot = state.slots[s];
    auto& values = tensor.values();
    const auto& grads = tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      if (!std::isfinite(g)) {
        throw std::runtime_error("adamw_step: non-finite gradient in " + name);
      }
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = slot.m[i] / bias1;
      const double v_hat = slot.v[i] / bias2;
      values[i] -= lr_t * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
      values[i] -= lr_t * cfg.weight_decay * values[i];
    }
  }
}

/// Linear warmup from 0 to the base rate over the first
/// ceil(warmup_fraction * total_steps) steps, constant afterwards.
inline double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw std::invalid_argument("lr_schedule: step beyond total_steps");
  }
  const std::size_t warmup = static_cast<std::size_t>(
      std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (warmup == 0 || step >= warmup) {
    return cfg.learning_rate;
  }
  return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
}

/// Patience-based validation-loss monitor.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when the observed loss improves on the best by more than
  /// the plateau threshold.
  bool observe(std::size_t epoch, double val_loss) {
    if (best_ - val_loss > kImprovementThreshold) {
      best_ = val_loss;
      best_epoch_ = epoch;
      bad_epochs_ = 0;
      return true;
    }
    bad_epochs_ += 1;
    return false;
  }

  bool should_stop() const { return bad_epochs_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_separation = 0.0;  // nan when undefined for the corpus
  double lr = 0.0;              // effective rate of the epoch's last step
};

struct TrainResult {
  ModelParameters best;
  ModelParameters final;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

inline void write_metrics_csv(const std::vector<EpochStats>& history,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << "epoch,train_loss,val_loss,val_separation,lr\n";
  for (const EpochStats& row : history) {
    out << row.epoch << ',' << format_number(row.train_loss) << ','
        << format_number(row.val_loss) << ',' << format_number(row.val_separation)
        << ',' << format_number(row.lr) << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

namespace detail {

struct PreparedBatch {
  std::vector<TokenSequence> view_a;
  std::vector<TokenSequence> view_b;
};

// Augment + linearize + tokenize each table of a batch.  The per-table seed
// depends only on (run seed, epoch tag, table id) so the streams are stable
// under corpus composition changes.
inline PreparedBatch prepare_views(const std::vector<const Table*>& tables,
                                   const TokenizerModel& tokenizer, LinearizeMode mode,
                                   const AugmentationConfig& aug,
                                   const EncoderConfig& enc_cfg, std::uint64_t epoch_tag,
                                   std::uint64_t run_seed, std::size_t threads) {
  PreparedBatch batch;
  batch.view_a.resize(tables.size());
  batch.view_b.resize(tables.size());
  auto prepare_one = [&](std::size_t idx) {
    AugmentationConfig per_table = aug;
    per_table.seed = mix_seed(mix_seed(run_seed, epoch_tag), fnv1a_hash(tables[idx]->name));
    const ViewPair views = make_views(*tables[idx], per_table);
    const auto v = static_cast<std::uint32_t>(enc_cfg.vocab_size);
    batch.view_a[idx] =
        encode(tokenizer, linearize(views.original, mode), enc_cfg.max_len, v);
    batch.view_b[idx] =
        encode(tokenizer, linearize(views.augmented, mode), enc_cfg.max_len, v);
  };
  if (threads <= 1 || tables.size() < 2) {
    for (std::size_t i = 0; i < tables.size(); ++i) {
      prepare_one(i);
    }
  } else {
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(threads, tables.size());
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t]() {
        for (std::size_t i = t; i < tables.size(); i += workers) {
          prepare_one(i);
        }
      });
    }
    for (auto& worker : pool) {
      worker.join();
    }
  }
  return batch;
}

inline double batch_loss(const ModelParameters& params, const PreparedBatch& batch,
                         const LossConfig& loss_cfg, bool train, RandomStream& rng,
                         Tensor* out_loss) {
  const Tensor z_i = encode_batch(params, batch.view_a, train, rng);
  const Tensor z_j = encode_batch(params, batch.view_b, train, rng);
  const Tensor loss = nt_xent({z_i, z_j}, loss_cfg);
  if (out_loss != nullptr) {
    *out_loss = loss;
  }
  return loss.item();
}

}  // namespace detail

/// Contrastive training loop: shuffled mixed-family batches, two views per
/// table, NT-Xent, gradient clipping and AdamW under linear warmup, with
/// patience-based early stopping on the validation loss (fixed validation
/// augmentation seed, so epochs are comparable).  Only tables named by
/// split.train and split.validation are ever read.
inline TrainResult train(const std::vector<Table>& corpus, const SplitSpec& split,
                         const TokenizerModel& tokenizer, LinearizeMode mode,
                         const AugmentationConfig& aug, const EncoderConfig& enc_cfg,
                         const LossConfig& loss_cfg, const TrainConfig& cfg) {
  cfg.validate();
  enc_cfg.validate();
  loss_cfg.validate();
  aug.validate();
  if (split.train.size() < 2) {
    throw std::invalid_argument("train: need at least 2 training tables");
  }

  std::map<std::string, const Table*> by_id;
  for (const Table& table : corpus) {
    by_id[table.name] = &table;
  }
  auto lookup = [&](const std::string& id) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::invalid_argument("train: split references unknown table " + id);
    }
    return it->second;
  };
  std::vector<const Table*> train_tables;
  for (const auto& id : split.train) {
    train_tables.push_back(lookup(id));
  }
  std::vector<const Table*> val_tables;
  for (const auto& id : split.validation) {
    val_tables.push_back(lookup(id));
  }

  const std::size_t steps_per_epoch = [&] {
    std::size_t full = split.train.size() / cfg.batch_size;
    const std::size_t rest = split.train.size() % cfg.batch_size;
    return full + (rest >= 2 ? 1 : 0);  // a trailing chunk of 1 has no negatives
  }();
  if (steps_per_epoch == 0) {
    throw std::invalid_argument("train: no batch with at least 2 tables");
  }
  const std::size_t total_steps = cfg.max_epochs * steps_per_epoch;

  ModelParameters params = init_parameters(enc_cfg, cfg.seed);
  OptimizerState state = make_optimizer_state(params);
  EarlyStopper stopper(cfg.patience);

  TrainResult result;
  result.best = params.clone();
  result.best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<const Table*> order = train_tables;
    RandomStream shuffle_rng(mix_seed(cfg.seed, 0x0d0e + epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t epoch_examples = 0;
    for (std::size_t start = 0, step_in_epoch = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      if (count < 2) {
        break;
      }
      step_in_epoch += 1;
      const std::vector<const Table*> chunk(order.begin() + start,
                                            order.begin() + start + count);
      const detail::PreparedBatch batch = detail::prepare_views(
          chunk, tokenizer, mode, aug, enc_cfg, /*epoch_tag=*/0xa6000000ull + epoch,
          cfg.seed, cfg.threads);

      RandomStream dropout_rng(
          mix_seed(mix_seed(cfg.seed, 0xd0000000ull + epoch), step_in_epoch));
      Tensor loss;
      const double loss_value =
          detail::batch_loss(params, batch, loss_cfg, /*train=*/true, dropout_rng, &loss);
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      params.zero_grad();
      backward(loss);
      clip_gradients(params, cfg.clip_max_norm);
      const double lr_t = lr_schedule(state.step + 1, total_steps, cfg);
      adamw_step(params, state, cfg, lr_t);
      epoch_loss += loss_value * static_cast<double>(count);
      epoch_examples += count;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(epoch_examples);
    stats.lr = lr_schedule(state.step, total_steps, cfg);

    // validation loss under a fixed augmentation seed, evaluation mode
    {
      NoGradGuard no_grad;
      RandomStream unused_rng(0);
      double val_loss = 0.0;
      std::size_t val_examples = 0;
      for (std::size_t start = 0; start < val_tables.size(); start += cfg.batch_size) {
        const std::size_t count = std::min(cfg.batch_size, val_tables.size() - start);
        if (count < 2) {
          break;
        }
        const std::vector<const Table*> chunk(val_tables.begin() + start,
                                              val_tables.begin() + start + count);
        const detail::PreparedBatch batch =
            detail::prepare_views(chunk, tokenizer, mode, aug, enc_cfg,
                                  /*epoch_tag=*/0x7a11ull, cfg.seed, cfg.threads);
        val_loss += detail::batch_loss(params, batch, loss_cfg, /*train=*/false,
                                       unused_rng, nullptr) *
                    static_cast<double>(count);
        val_examples += count;
      }
      stats.val_loss = val_examples > 0
                           ? val_loss / static_cast<double>(val_examples)
                           : std::numeric_limits<double>::quiet_NaN();

      // validation separation over plain (unaugmented) table embeddings
      stats.val_separation = std::numeric_limits<double>::quiet_NaN();
      if (val_tables.size() >= 2) {
        EmbeddingCorpus val_corpus;
        std::vector<TokenSequence> seqs;
        for (const Table* table : val_tables) {
          val_corpus.ids.push_back(table->name);
          val_corpus.tags.push_back(table->source_dataset);
          seqs.push_back(encode(tokenizer, linearize(*table, mode), enc_cfg.max_len,
                                static_cast<std::uint32_t>(enc_cfg.vocab_size)));
        }
        const Tensor z = encode_batch(params, seqs, /*train=*/false, unused_rng);
        const std::size_t d = enc_cfg.d_emb;
        for (std::size_t i = 0; i < val_tables.size(); ++i) {
          val_corpus.vectors.emplace_back(z.values().begin() + i * d,
                                          z.values().begin() + (i + 1) * d);
        }
        try {
          stats.val_separation = separation(cosine_matrix(val_corpus), val_corpus);
        } catch (const std::invalid_argument&) {
          // single-family validation split: separation undefined
        }
      }
    }

    result.history.push_back(stats);
    if (stopper.observe(epoch, stats.val_loss)) {
      result.best = params.clone();
      result.best_epoch = epoch;
    }
    if (stopper.should_stop()) {
      break;
    }
  }

  result.final = params.clone();
  if (result.best_epoch == 0) {
    result.best = result.final.clone();
    result.best_epoch = result.history.size();
  }
  return result;
}

}  // namespace saved
