#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saved/table.hpp"

namespace saved {

enum class LinearizeMode { Flat, Bracketed };

inline LinearizeMode parse_linearize_mode(const std::string& text) {
  if (text == "flat") {
    return LinearizeMode::Flat;
  }
  if (text == "bracketed") {
    return LinearizeMode::Bracketed;
  }
  throw std::invalid_argument("unknown linearization mode: " + text);
}

/// Table-to-text conversion.
///
/// Flat (canonical): column-major, each attribute introduced by a COL_ marker
/// followed by the column's cells in row order:
///   "COL_c1 a b COL_c2 1 2"
/// Bracketed: [COL] markers for all attributes but the last, [ROW] segments
/// carrying each row's cells except the last column, and a final [VAL]
/// segment with the last column's values:
///   "[COL] id [COL] name [ROW] 1 Alice [ROW] 2 Bob [VAL] 83 91"
/// Missing cells render as "nan" in both modes.
inline std::string linearize(const Table& table, LinearizeMode mode = LinearizeMode::Flat) {
  if (table.num_columns() == 0 || table.num_rows() == 0) {
    throw std::invalid_argument("linearize: empty table");
  }
  std::string out;
  if (mode == LinearizeMode::Flat) {
    for (std::size_t j = 0; j < table.num_columns(); ++j) {
      if (!out.empty()) {
        out += ' ';
      }
      out += "COL_" + table.attributes[j];
      for (const auto& row : table.rows) {
        out += ' ';
        out += cell_to_string(row[j]);
      }
    }
    return out;
  }
  const std::size_t last = table.num_columns() - 1;
  for (std::size_t j = 0; j < last; ++j) {
    if (!out.empty()) {
      out += ' ';
    }
    out += "[COL] " + table.attributes[j];
  }
  for (const auto& row : table.rows) {
    if (!out.empty()) {
      out += ' ';
    }
    out += "[ROW]";
    for (std::size_t j = 0; j < last; ++j) {
      out += ' ';
      out += cell_to_string(row[j]);
    }
  }
  out += out.empty() ? "[VAL]" : " [VAL]";
  for (const auto& row : table.rows) {
    out += ' ';
    out += cell_to_string(row[last]);
  }
  return out;
}

/// Fixed-length token id sequence.  Positions at or beyond true_length hold
/// the PAD id (0).
struct TokenSequence {
  std::vector<std::uint32_t> ids;
  std::size_t true_length = 0;
};

struct TokenizerSettings {
  std::size_t vocab_size = 12000;
  std::size_t min_frequency = 2;
  bool lowercase = true;
};

/// Byte-level BPE model.  Tokens are byte strings; ids 0 and 1 are reserved
/// for <PAD> and <UNK>.  Training and encoding are deterministic: merge
/// candidates are ranked by (frequency desc, pair lexicographic asc).
class TokenizerModel {
 public:
  static constexpr std::uint32_t kPadId = 0;
  static constexpr std::uint32_t kUnkId = 1;

  TokenizerSettings settings;
  std::map<std::string, std::uint32_t> vocab;  // token -> id

  std::size_t vocab_count() const { return vocab.size() + 2; }  // + specials

  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  void add_merge(std::pair<std::string, std::string> merge) {
    merge_rank_.emplace(merge, merges_.size());
    merges_.push_back(std::move(merge));
  }
  void set_merges(std::vector<std::pair<std::string, std::string>> merges) {
    merges_.clear();
    merge_rank_.clear();
    for (auto& m : merges) {
      add_merge(std::move(m));
    }
  }

  std::uint32_t token_id(const std::string& token) const {
    const auto it = vocab.find(token);
    return it == vocab.end() ? kUnkId : it->second;
  }

  /// Raw token ids of `text` (normalization, whitespace pre-tokenization,
  /// merges), before truncation/remapping/padding.
  std::vector<std::uint32_t> tokenize(const std::string& text) const {
    std::vector<std::uint32_t> out;
    for (const std::string& word : pretokenize(normalize(text))) {
      std::vector<std::string> symbols;
      symbols.reserve(word.size());
      for (const char c : word) {
        symbols.emplace_back(1, c);
      }
      apply_merges(symbols);
      for (const auto& symbol : symbols) {
        out.push_back(token_id(symbol));
      }
    }
    return out;
  }

  std::string normalize(const std::string& text) const {
    if (!settings.lowercase) {
      return text;
    }
    std::string out = text;
    for (char& c : out) {
      if (c >= 'A' && c <= 'Z') {
        c = static_cast<char>(c - 'A' + 'a');
      }
    }
    return out;
  }

  static std::vector<std::string> pretokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    for (const char c : text) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        if (!current.empty()) {
          words.push_back(std::move(current));
          current.clear();
        }
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) {
      words.push_back(std::move(current));
    }
    return words;
  }

 private:
  // lowest-rank applicable merge first, every occurrence merged left to right
  void apply_merges(std::vector<std::string>& symbols) const {
    while (symbols.size() > 1) {
      std::size_t best_rank = merges_.size();
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        const auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
        if (it != merge_rank_.end() && it->second < best_rank) {
          best_rank = it->second;
        }
      }
      if (best_rank == merges_.size()) {
        break;
      }
      const std::pair<std::string, std::string>& pair = merges_[best_rank];
      std::vector<std::string> merged;
      merged.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && symbols[i] == pair.first &&
            symbols[i + 1] == pair.second) {
          merged.push_back(pair.first + pair.second);
          i += 2;
        } else {
          merged.push_back(symbols[i]);
          i += 1;
        }
      }
      symbols = std::move(merged);
    }
  }

  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

/// Learns BPE merges greedily by pair frequency until the vocabulary is full
/// or no pair reaches min_frequency.
inline TokenizerModel train_tokenizer(const std::vector<std::string>& corpus,
                                      const TokenizerSettings& settings = {}) {
  if (corpus.empty()) {
    throw std::invalid_argument("train_tokenizer: empty corpus");
  }
  TokenizerModel model;
  model.settings = settings;

  // word-type table: symbol sequence + frequency, in first-seen order
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  std::map<std::string, std::size_t> word_index;
  for (const std::string& doc : corpus) {
    for (const std::string& word : TokenizerModel::pretokenize(model.normalize(doc))) {
      const auto it = word_index.find(word);
      if (it != word_index.end()) {
        words[it->second].second += 1;
        continue;
      }
      word_index[word] = words.size();
      std::vector<std::string> symbols;
      symbols.reserve(word.size());
      for (const char c : word) {
        symbols.emplace_back(1, c);
      }
      words.emplace_back(std::move(symbols), 1);
    }
  }

  // alphabet ids follow the specials, ordered by byte value
  std::uint32_t next_id = 2;
  {
    std::map<std::string, bool> alphabet;
    for (const auto& [symbols, freq] : words) {
      for (const auto& s : symbols) {
        alphabet[s] = true;
      }
    }
    for (const auto& [symbol, unused] : alphabet) {
      model.vocab[symbol] = next_id++;
    }
  }

  while (model.vocab_count() < settings.vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [symbols, freq] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += freq;
      }
    }
    std::pair<std::string, std::string> best;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {  // map order breaks ties lexicographically
        best = pair;
        best_count = count;
      }
    }
    if (best_count < settings.min_frequency) {
      break;
    }
    model.add_merge(best);
    const std::string token = best.first + best.second;
    if (model.vocab.find(token) == model.vocab.end()) {
      model.vocab[token] = next_id++;
    }
    for (auto& [symbols, freq] : words) {
      std::vector<std::string> merged;
      merged.reserve(symbols.size());
      bool changed = false;
      for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && symbols[i] == best.first &&
            symbols[i + 1] == best.second) {
          merged.push_back(token);
          i += 2;
          changed = true;
        } else {
          merged.push_back(symbols[i]);
          i += 1;
        }
      }
      if (changed) {
        symbols = std::move(merged);
      }
    }
  }
  return model;
}

/// Truncates to n ids, remaps each id modulo v_model and right-pads with the
/// PAD id.  Already-small ids are unchanged by the remap.
inline TokenSequence remap_and_pad(const std::vector<std::uint32_t>& raw_ids,
                                   std::size_t n, std::uint32_t v_model) {
  if (n == 0 || v_model == 0) {
    throw std::invalid_argument("remap_and_pad: n and v_model must be positive");
  }
  TokenSequence seq;
  seq.true_length = std::min(raw_ids.size(), n);
  seq.ids.assign(n, TokenizerModel::kPadId);
  for (std::size_t i = 0; i < seq.true_length; ++i) {
    seq.ids[i] = raw_ids[i] % v_model;
  }
  return seq;
}

/// Full sequence processing: tokenize -> truncate to n -> mod-v_model remap
/// -> zero padding.
inline TokenSequence encode(const TokenizerModel& model, const std::string& text,
                            std::size_t n, std::uint32_t v_model) {
  return remap_and_pad(model.tokenize(text), n, v_model);
}

/// Persists the model as a two-part text file: vocab lines "token<TAB>id"
/// (specials included) followed by merges, one per line in application order.
inline void save_tokenizer(const TokenizerModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << "saved-bpe v1\n";
  out << "vocab_size=" << model.settings.vocab_size << "\n";
  out << "min_frequency=" << model.settings.min_frequency << "\n";
  out << "lowercase=" << (model.settings.lowercase ? 1 : 0) << "\n";
  out << "VOCAB " << (model.vocab.size() + 2) << "\n";
  out << "<PAD>\t0\n<UNK>\t1\n";
  std::vector<std::pair<std::uint32_t, std::string>> by_id;
  by_id.reserve(model.vocab.size());
  for (const auto& [token, id] : model.vocab) {
    by_id.emplace_back(id, token);
  }
  std::sort(by_id.begin(), by_id.end());
  for (const auto& [id, token] : by_id) {
    out << token << '\t' << id << '\n';
  }
  out << "MERGES " << model.merges().size() << "\n";
  for (const auto& [left, right] : model.merges()) {
    out << left << '\t' << right << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

inline TokenizerModel load_tokenizer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) {
      throw std::runtime_error(path + ": truncated tokenizer file");
    }
    return line;
  };
  if (next_line() != "saved-bpe v1") {
    throw std::runtime_error(path + ": not a tokenizer model file");
  }
  TokenizerModel model;
  auto parse_kv = [&](const std::string& key) {
    next_line();
    if (line.rfind(key + "=", 0) != 0) {
      throw std::runtime_error(path + ": expected " + key);
    }
    return line.substr(key.size() + 1);
  };
  model.settings.vocab_size = std::stoull(parse_kv("vocab_size"));
  model.settings.min_frequency = std::stoull(parse_kv("min_frequency"));
  model.settings.lowercase = parse_kv("lowercase") == "1";

  next_line();
  if (line.rfind("VOCAB ", 0) != 0) {
    throw std::runtime_error(path + ": expected VOCAB section");
  }
  const std::size_t vocab_lines = std::stoull(line.substr(6));
  for (std::size_t i = 0; i < vocab_lines; ++i) {
    next_line();
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ": malformed vocab line");
    }
    const std::string token = line.substr(0, tab);
    const auto id = static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1)));
    if (token == "<PAD>" || token == "<UNK>") {
      continue;
    }
    model.vocab[token] = id;
  }
  next_line();
  if (line.rfind("MERGES ", 0) != 0) {
    throw std::runtime_error(path + ": expected MERGES section");
  }
  const std::size_t merge_lines = std::stoull(line.substr(7));
  for (std::size_t i = 0; i < merge_lines; ++i) {
    next_line();
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ": malformed merge line");
    }
    model.add_merge({line.substr(0, tab), line.substr(tab + 1)});
  }
  return model;
}

}  // namespace saved
