#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "saved/augment.hpp"
#include "saved/encoder.hpp"
#include "saved/loss.hpp"
#include "saved/tokenizer.hpp"
#include "saved/trainer.hpp"

namespace saved {

/// Augmentation defaults used by the pipeline when a config file does not say
/// otherwise.  These differ from a zero-initialized AugmentationConfig: a run
/// with no structural variation between views learns nothing useful.
inline AugmentationConfig default_training_augmentation() {
  AugmentationConfig aug;
  aug.p_col_dropout = 0.10;
  aug.p_dummy = 0.20;
  aug.p_row_shuffle = 0.50;
  aug.p_onehot = 0.20;
  aug.p_missing = 0.02;
  aug.jitter_std = 0.005;
  aug.p_col_shuffle = 0.50;
  aug.row_drop_frac = -1.0;  // drawn per view
  return aug;
}

/// Unified configuration document behind the CLI: a flat key=value text file
/// with '#' comments; later assignments win, and command-line overrides win
/// over the file.
struct RunConfig {
  AugmentationConfig aug = default_training_augmentation();
  EncoderConfig encoder;
  TrainConfig train;
  LossConfig loss;
  TokenizerSettings tokenizer;
  LinearizeMode linearize = LinearizeMode::Flat;
  std::uint64_t seed = 0;

  void validate() const {
    aug.validate();
    encoder.validate();
    train.validate();
    loss.validate();
    if (tokenizer.vocab_size < 3) {
      throw std::invalid_argument("RunConfig: tok.vocab_size must be at least 3");
    }
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) {
      throw std::invalid_argument(value);
    }
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad numeric value for " + key + ": " + value);
  }
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) {
      throw std::invalid_argument(value);
    }
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer value for " + key + ": " + value);
  }
}

}  // namespace detail

inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_double;
  using detail::parse_size;
  if (key == "aug.p_col_dropout") {
    cfg.aug.p_col_dropout = parse_double(key, value);
  } else if (key == "aug.p_dummy") {
    cfg.aug.p_dummy = parse_double(key, value);
  } else if (key == "aug.p_row_shuffle") {
    cfg.aug.p_row_shuffle = parse_double(key, value);
  } else if (key == "aug.p_onehot") {
    cfg.aug.p_onehot = parse_double(key, value);
  } else if (key == "aug.p_missing") {
    cfg.aug.p_missing = parse_double(key, value);
  } else if (key == "aug.jitter_std") {
    cfg.aug.jitter_std = parse_double(key, value);
  } else if (key == "aug.p_col_shuffle") {
    cfg.aug.p_col_shuffle = parse_double(key, value);
  } else if (key == "aug.row_drop_frac") {
    cfg.aug.row_drop_frac = parse_double(key, value);
  } else if (key == "enc.vocab_size") {
    cfg.encoder.vocab_size = parse_size(key, value);
  } else if (key == "enc.d_model") {
    cfg.encoder.d_model = parse_size(key, value);
  } else if (key == "enc.d_emb") {
    cfg.encoder.d_emb = parse_size(key, value);
  } else if (key == "enc.d_hidden") {
    cfg.encoder.d_hidden = parse_size(key, value);
  } else if (key == "enc.num_heads") {
    cfg.encoder.num_heads = parse_size(key, value);
  } else if (key == "enc.num_layers") {
    cfg.encoder.num_layers = parse_size(key, value);
  } else if (key == "enc.max_len") {
    cfg.encoder.max_len = parse_size(key, value);
  } else if (key == "enc.dropout_rate") {
    cfg.encoder.dropout_rate = parse_double(key, value);
  } else if (key == "train.learning_rate") {
    cfg.train.learning_rate = parse_double(key, value);
  } else if (key == "train.weight_decay") {
    cfg.train.weight_decay = parse_double(key, value);
  } else if (key == "train.beta1") {
    cfg.train.beta1 = parse_double(key, value);
  } else if (key == "train.beta2") {
    cfg.train.beta2 = parse_double(key, value);
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = parse_size(key, value);
  } else if (key == "train.max_epochs") {
    cfg.train.max_epochs = parse_size(key, value);
  } else if (key == "train.warmup_fraction") {
    cfg.train.warmup_fraction = parse_double(key, value);
  } else if (key == "train.clip_max_norm") {
    cfg.train.clip_max_norm = parse_double(key, value);
  } else if (key == "train.patience") {
    cfg.train.patience = parse_size(key, value);
  } else if (key == "loss.temperature") {
    cfg.loss.temperature = parse_double(key, value);
  } else if (key == "tok.vocab_size") {
    cfg.tokenizer.vocab_size = parse_size(key, value);
  } else if (key == "tok.min_frequency") {
    cfg.tokenizer.min_frequency = parse_size(key, value);
  } else if (key == "tok.lowercase") {
    cfg.tokenizer.lowercase = parse_size(key, value) != 0;
  } else if (key == "linearize") {
    cfg.linearize = parse_linearize_mode(value);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(
        std::stoull(value));
  } else {
    throw std::invalid_argument("config: unknown key " + key);
  }
}

inline void load_run_config(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open config " + path);
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty() || line[0] == '#') {
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ": malformed line " + std::to_string(line_no) +
                                  " (expected key=value)");
    }
    set_config_key(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << "aug.p_col_dropout=" << format_number(cfg.aug.p_col_dropout) << '\n';
  out << "aug.p_dummy=" << format_number(cfg.aug.p_dummy) << '\n';
  out << "aug.p_row_shuffle=" << format_number(cfg.aug.p_row_shuffle) << '\n';
  out << "aug.p_onehot=" << format_number(cfg.aug.p_onehot) << '\n';
  out << "aug.p_missing=" << format_number(cfg.aug.p_missing) << '\n';
  out << "aug.jitter_std=" << format_number(cfg.aug.jitter_std) << '\n';
  out << "aug.p_col_shuffle=" << format_number(cfg.aug.p_col_shuffle) << '\n';
  out << "aug.row_drop_frac=" << format_number(cfg.aug.row_drop_frac) << '\n';
  out << "enc.vocab_size=" << cfg.encoder.vocab_size << '\n';
  out << "enc.d_model=" << cfg.encoder.d_model << '\n';
  out << "enc.d_emb=" << cfg.encoder.d_emb << '\n';
  out << "enc.d_hidden=" << cfg.encoder.d_hidden << '\n';
  out << "enc.num_heads=" << cfg.encoder.num_heads << '\n';
  out << "enc.num_layers=" << cfg.encoder.num_layers << '\n';
  out << "enc.max_len=" << cfg.encoder.max_len << '\n';
  out << "enc.dropout_rate=" << format_number(cfg.encoder.dropout_rate) << '\n';
  out << "train.learning_rate=" << format_number(cfg.train.learning_rate) << '\n';
  out << "train.weight_decay=" << format_number(cfg.train.weight_decay) << '\n';
  out << "train.beta1=" << format_number(cfg.train.beta1) << '\n';
  out << "train.beta2=" << format_number(cfg.train.beta2) << '\n';
  out << "train.batch_size=" << cfg.train.batch_size << '\n';
  out << "train.max_epochs=" << cfg.train.max_epochs << '\n';
  out << "train.warmup_fraction=" << format_number(cfg.train.warmup_fraction) << '\n';
  out << "train.clip_max_norm=" << format_number(cfg.train.clip_max_norm) << '\n';
  out << "train.patience=" << cfg.train.patience << '\n';
  out << "loss.temperature=" << format_number(cfg.loss.temperature) << '\n';
  out << "tok.vocab_size=" << cfg.tokenizer.vocab_size << '\n';
  out << "tok.min_frequency=" << cfg.tokenizer.min_frequency << '\n';
  out << "tok.lowercase=" << (cfg.tokenizer.lowercase ? 1 : 0) << '\n';
  out << "linearize=" << (cfg.linearize == LinearizeMode::Flat ? "flat" : "bracketed") << '\n';
  out << "seed=" << cfg.seed << '\n';
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

}  // namespace saved
