#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "saved/rng.hpp"
#include "saved/table.hpp"

namespace saved {

/// Probabilities and parameters of the eight view-generating operators.
/// row_drop_frac < 0 means "draw per view from [0.05, 0.30]".
struct AugmentationConfig {
  double p_col_dropout = 0.0;   // P1
  double p_dummy = 0.0;         // P2
  double p_row_shuffle = 0.0;   // P3
  double p_onehot = 0.0;        // P4
  double p_missing = 0.02;      // P5, per cell
  double jitter_std = 0.0;      // P6, 0 disables, otherwise (0, 0.01]
  double p_col_shuffle = 0.0;   // P7
  double row_drop_frac = -1.0;  // P8
  std::uint64_t seed = 0;

  void validate() const {
    auto probability = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument(std::string(what) + " must lie in [0,1]");
      }
    };
    probability(p_col_dropout, "p_col_dropout");
    probability(p_dummy, "p_dummy");
    probability(p_row_shuffle, "p_row_shuffle");
    probability(p_onehot, "p_onehot");
    probability(p_missing, "p_missing");
    probability(p_col_shuffle, "p_col_shuffle");
    if (!(jitter_std >= 0.0 && jitter_std <= 0.01)) {
      throw std::invalid_argument("jitter_std must lie in [0, 0.01]");
    }
    if (row_drop_frac >= 0.0 && !(row_drop_frac < 1.0)) {
      throw std::invalid_argument("row_drop_frac must lie in [0,1)");
    }
  }
};

/// The two views fed to the contrastive loss: the untouched source table and
/// its augmented counterpart.  `provenance` records the operators applied to
/// the augmented view together with any per-view drawn parameters.
struct ViewPair {
  Table original;
  Table augmented;
  std::vector<std::string> provenance;
};

namespace detail {

inline std::string unique_attribute_name(const std::set<std::string>& taken,
                                         const std::string& base) {
  std::string candidate = base;
  while (taken.count(candidate) > 0) {
    candidate += "_";
  }
  return candidate;
}

// Distinct category labels of a column, lexicographically ordered.  Missing
// contributes the label "nan", matching the column naming of indicator
// expansions ("<col>_nan").
inline std::vector<std::string> category_labels(const Table& table, std::size_t column) {
  std::set<std::string> labels;
  for (const auto& row : table.rows) {
    labels.insert(cell_to_string(row[column]));
  }
  return std::vector<std::string>(labels.begin(), labels.end());
}

// Replaces categorical columns selected with probability p by indicator
// columns; skip_first drops the lexicographically first category (dummy
// coding) so indicators sum to 0 or 1 per row instead of exactly 1.
inline Table expand_indicators(const Table& table, double p, bool skip_first,
                               RandomStream& rng) {
  std::vector<bool> selected(table.num_columns(), false);
  for (std::size_t j = 0; j < table.num_columns(); ++j) {
    const bool categorical = infer_column_kind(table, j) == ColumnKind::Categorical;
    const bool chosen = rng.bernoulli(p);  // one draw per column, kept aligned
    selected[j] = categorical && chosen;
  }

  Table out;
  out.name = table.name;
  out.source_dataset = table.source_dataset;
  std::set<std::string> taken;
  for (std::size_t j = 0; j < table.num_columns(); ++j) {
    if (selected[j]) {
      continue;
    }
    taken.insert(table.attributes[j]);
  }

  std::vector<std::vector<CellValue>> columns;  // output column-major
  for (std::size_t j = 0; j < table.num_columns(); ++j) {
    if (!selected[j]) {
      out.attributes.push_back(table.attributes[j]);
      std::vector<CellValue> col;
      col.reserve(table.num_rows());
      for (const auto& row : table.rows) {
        col.push_back(row[j]);
      }
      columns.push_back(std::move(col));
      continue;
    }
    const std::vector<std::string> labels = category_labels(table, j);
    for (std::size_t k = skip_first ? 1 : 0; k < labels.size(); ++k) {
      const std::string name =
          unique_attribute_name(taken, table.attributes[j] + "_" + labels[k]);
      taken.insert(name);
      out.attributes.push_back(name);
      std::vector<CellValue> col;
      col.reserve(table.num_rows());
      for (const auto& row : table.rows) {
        col.push_back(CellValue::number(cell_to_string(row[j]) == labels[k] ? 1.0 : 0.0));
      }
      columns.push_back(std::move(col));
    }
  }

  if (out.attributes.empty()) {
    // Every column was consumed by degenerate expansions (k-1 with a single
    // category); keep the first original column so the table stays non-empty.
    out.attributes.push_back(table.attributes[0]);
    std::vector<CellValue> col;
    for (const auto& row : table.rows) {
      col.push_back(row[0]);
    }
    columns.push_back(std::move(col));
  }

  out.rows.assign(table.num_rows(), {});
  for (auto& row : out.rows) {
    row.reserve(out.attributes.size());
  }
  for (const auto& col : columns) {
    for (std::size_t i = 0; i < table.num_rows(); ++i) {
      out.rows[i].push_back(col[i]);
    }
  }
  return out;
}

}  // namespace detail

/// P1: drops each column independently with probability p, always keeping at
/// least one column (a uniformly chosen one if all were dropped).
inline Table apply_column_dropout(const Table& table, double p, RandomStream& rng) {
  if (table.num_columns() == 0 || table.num_rows() == 0) {
    throw std::invalid_argument("apply_column_dropout: empty table");
  }
  std::vector<bool> keep(table.num_columns());
  bool kept_any = false;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    keep[j] = !rng.bernoulli(p);
    kept_any = kept_any || keep[j];
  }
  if (!kept_any) {
    keep[rng.uniform_int(keep.size())] = true;
  }
  Table out;
  out.name = table.name;
  out.source_dataset = table.source_dataset;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j]) {
      out.attributes.push_back(table.attributes[j]);
    }
  }
  out.rows.reserve(table.num_rows());
  for (const auto& row : table.rows) {
    std::vector<CellValue> kept;
    kept.reserve(out.attributes.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
      if (keep[j]) {
        kept.push_back(row[j]);
      }
    }
    out.rows.push_back(std::move(kept));
  }
  return out;
}

/// P2: dummy coding.  Each categorical column selected with probability p is
/// replaced by k-1 indicator columns, dropping the lexicographically first
/// category.  Missing counts as category "nan".
inline Table apply_dummy_encoding(const Table& table, double p, RandomStream& rng) {
  return detail::expand_indicators(table, p, /*skip_first=*/true, rng);
}

/// P4: one-hot coding.  Selected categorical columns are replaced by one
/// indicator per distinct value; per row exactly one indicator is 1.
inline Table apply_one_hot(const Table& table, double p, RandomStream& rng) {
  return detail::expand_indicators(table, p, /*skip_first=*/false, rng);
}

/// P3: with probability p, permutes the full row order uniformly.
inline Table apply_row_shuffle(const Table& table, double p, RandomStream& rng) {
  Table out = table;
  if (!rng.bernoulli(p) || table.num_rows() < 2) {
    return out;
  }
  rng.shuffle(out.rows);
  return out;
}

/// P7: with probability p, permutes the column order uniformly; cells follow
/// their attribute.
inline Table apply_column_shuffle(const Table& table, double p, RandomStream& rng) {
  Table out = table;
  if (!rng.bernoulli(p) || table.num_columns() < 2) {
    return out;
  }
  std::vector<std::size_t> order(table.num_columns());
  for (std::size_t j = 0; j < order.size(); ++j) {
    order[j] = j;
  }
  rng.shuffle(order);
  for (std::size_t j = 0; j < order.size(); ++j) {
    out.attributes[j] = table.attributes[order[j]];
  }
  for (std::size_t i = 0; i < table.num_rows(); ++i) {
    for (std::size_t j = 0; j < order.size(); ++j) {
      out.rows[i][j] = table.rows[i][order[j]];
    }
  }
  return out;
}

/// P8: removes floor(frac * m) rows uniformly without replacement, keeping the
/// survivors in their original relative order and never dropping the last row.
inline Table apply_row_drop(const Table& table, double frac, RandomStream& rng) {
  if (!(frac >= 0.0 && frac < 1.0)) {
    throw std::invalid_argument("apply_row_drop: frac must lie in [0,1)");
  }
  const std::size_t m = table.num_rows();
  std::size_t to_remove = static_cast<std::size_t>(frac * static_cast<double>(m));
  if (m > 0 && to_remove >= m) {
    to_remove = m - 1;
  }
  Table out = table;
  if (to_remove == 0) {
    return out;
  }
  std::vector<std::size_t> indices(m);
  for (std::size_t i = 0; i < m; ++i) {
    indices[i] = i;
  }
  rng.shuffle(indices);
  std::vector<bool> removed(m, false);
  for (std::size_t i = 0; i < to_remove; ++i) {
    removed[indices[i]] = true;
  }
  out.rows.clear();
  out.rows.reserve(m - to_remove);
  for (std::size_t i = 0; i < m; ++i) {
    if (!removed[i]) {
      out.rows.push_back(table.rows[i]);
    }
  }
  return out;
}

/// P5: each cell independently becomes Missing with probability p.
inline Table inject_missing(const Table& table, double p, RandomStream& rng) {
  Table out = table;
  for (auto& row : out.rows) {
    for (auto& cell : row) {
      if (rng.bernoulli(p)) {
        cell = CellValue::missing();
      }
    }
  }
  return out;
}

namespace detail {

// jitter without the training-time cap on std; the benchmark generator uses
// wider noise to test generalization beyond the augmentation defaults
inline Table jitter_unchecked(const Table& table, double std, RandomStream& rng) {
  Table out = table;
  if (std == 0.0) {
    return out;
  }
  for (std::size_t j = 0; j < table.num_columns(); ++j) {
    if (infer_column_kind(table, j) != ColumnKind::Numeric) {
      continue;
    }
    for (std::size_t i = 0; i < table.num_rows(); ++i) {
      const CellValue& cell = table.rows[i][j];
      if (cell.is_missing()) {
        continue;
      }
      const double x = *cell_numeric_value(cell);
      out.rows[i][j] = CellValue::number(x + rng.normal(0.0, std));
    }
  }
  return out;
}

}  // namespace detail

/// P6: adds N(0, std^2) noise to every non-Missing cell of numeric columns.
/// Categorical columns and Missing cells are untouched.
inline Table apply_jitter(const Table& table, double std, RandomStream& rng) {
  if (!(std >= 0.0 && std <= 0.01)) {
    throw std::invalid_argument("apply_jitter: std must lie in [0, 0.01]");
  }
  return detail::jitter_unchecked(table, std, rng);
}

/// Builds the contrastive view pair: the original table and one augmented
/// view produced by the fixed composition P1 -> P2 -> P4 -> P5 -> P6 -> P7 ->
/// P8 -> P3, all driven by a single stream seeded from cfg.seed.  The dummy
/// and one-hot stages never touch the same column because indicator columns
/// produced by P2 are numeric and P4 selects only categorical columns.
inline ViewPair make_views(const Table& table, const AugmentationConfig& cfg) {
  cfg.validate();
  if (table.num_columns() == 0 || table.num_rows() == 0) {
    throw std::invalid_argument("make_views: empty table");
  }
  RandomStream rng(cfg.seed);
  ViewPair pair;
  pair.original = table;

  Table aug = apply_column_dropout(table, cfg.p_col_dropout, rng);
  pair.provenance.push_back("col_dropout p=" + format_number(cfg.p_col_dropout));
  aug = apply_dummy_encoding(aug, cfg.p_dummy, rng);
  pair.provenance.push_back("dummy p=" + format_number(cfg.p_dummy));
  aug = apply_one_hot(aug, cfg.p_onehot, rng);
  pair.provenance.push_back("one_hot p=" + format_number(cfg.p_onehot));
  aug = inject_missing(aug, cfg.p_missing, rng);
  pair.provenance.push_back("missing p=" + format_number(cfg.p_missing));
  aug = apply_jitter(aug, cfg.jitter_std, rng);
  pair.provenance.push_back("jitter std=" + format_number(cfg.jitter_std));
  aug = apply_column_shuffle(aug, cfg.p_col_shuffle, rng);
  pair.provenance.push_back("col_shuffle p=" + format_number(cfg.p_col_shuffle));
  const double frac =
      cfg.row_drop_frac >= 0.0 ? cfg.row_drop_frac : rng.uniform(0.05, 0.30);
  aug = apply_row_drop(aug, frac, rng);
  pair.provenance.push_back("row_drop frac=" + format_number(frac));
  aug = apply_row_shuffle(aug, cfg.p_row_shuffle, rng);
  pair.provenance.push_back("row_shuffle p=" + format_number(cfg.p_row_shuffle));

  pair.augmented = std::move(aug);
  return pair;
}

}  // namespace saved
