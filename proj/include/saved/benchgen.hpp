#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saved/augment.hpp"
#include "saved/evaluation.hpp"
#include "saved/rng.hpp"
#include "saved/table.hpp"

namespace saved {

enum class AugOpKind {
  ColumnDropout,
  DummyEncoding,
  RowShuffle,
  OneHot,
  MissingInjection,
  Jitter,
  ColumnShuffle,
  RowDrop,
};

inline const char* aug_op_name(AugOpKind kind) {
  switch (kind) {
    case AugOpKind::ColumnDropout: return "col_dropout";
    case AugOpKind::DummyEncoding: return "dummy";
    case AugOpKind::RowShuffle: return "row_shuffle";
    case AugOpKind::OneHot: return "one_hot";
    case AugOpKind::MissingInjection: return "missing";
    case AugOpKind::Jitter: return "jitter";
    case AugOpKind::ColumnShuffle: return "col_shuffle";
    case AugOpKind::RowDrop: return "row_drop";
  }
  return "unknown";
}

/// One operator application with a fixed parameter and its own stream seed: a
/// concrete member of the transformation family.
struct AugOpSpec {
  AugOpKind kind = AugOpKind::RowShuffle;
  double param = 1.0;
  std::uint64_t seed = 0;
};

/// A concrete composed transformation.
struct TransformationSpec {
  std::vector<AugOpSpec> ops;

  std::string describe() const {
    std::string out;
    for (const AugOpSpec& op : ops) {
      if (!out.empty()) {
        out += ";";
      }
      out += std::string(aug_op_name(op.kind)) + "(" + format_number(op.param) + ")";
    }
    return out;
  }
};

/// Applies the spec's operators in order; the derived table keeps the source
/// family tag.
inline Table derive_version(const Table& table, const TransformationSpec& spec) {
  if (spec.ops.empty()) {
    throw std::invalid_argument("derive_version: empty transformation spec");
  }
  Table current = table;
  for (const AugOpSpec& op : spec.ops) {
    RandomStream rng(op.seed);
    switch (op.kind) {
      case AugOpKind::ColumnDropout:
        current = apply_column_dropout(current, op.param, rng);
        break;
      case AugOpKind::DummyEncoding:
        current = apply_dummy_encoding(current, op.param, rng);
        break;
      case AugOpKind::RowShuffle:
        current = apply_row_shuffle(current, op.param, rng);
        break;
      case AugOpKind::OneHot:
        current = apply_one_hot(current, op.param, rng);
        break;
      case AugOpKind::MissingInjection:
        current = inject_missing(current, op.param, rng);
        break;
      case AugOpKind::Jitter:
        current = detail::jitter_unchecked(current, op.param, rng);
        break;
      case AugOpKind::ColumnShuffle:
        current = apply_column_shuffle(current, op.param, rng);
        break;
      case AugOpKind::RowDrop:
        current = apply_row_drop(current, op.param, rng);
        break;
    }
  }
  return current;
}

/// Synthetic seed table.  Families are pairwise distinguishable by
/// construction: categorical alphabets are prefixed with the family name
/// (disjoint across families) and numeric columns sit on family-shifted
/// Gaussian mixtures.  Categorical columns come first and numeric cells are
/// rounded to two decimals so a table linearizes compactly enough for
/// bounded-length tokenization to see every column.
inline Table generate_seed_table(const std::string& family, std::size_t rows,
                                 std::size_t num_numeric, std::size_t num_categorical,
                                 std::uint64_t seed) {
  if (rows < 4) {
    throw std::invalid_argument("generate_seed_table: need at least 4 rows");
  }
  if (num_numeric + num_categorical < 2) {
    throw std::invalid_argument("generate_seed_table: need at least 2 columns");
  }
  RandomStream rng(mix_seed(seed, fnv1a_hash(family)));
  Table table;
  table.name = family + "_v0";
  table.source_dataset = family;

  const double family_shift =
      0.41 * static_cast<double>(mix_seed(fnv1a_hash(family), 0x5eed) % 2048);
  constexpr std::size_t kAlphabetSize = 8;

  for (std::size_t j = 0; j < num_categorical; ++j) {
    table.attributes.push_back("cat" + std::to_string(j));
  }
  for (std::size_t j = 0; j < num_numeric; ++j) {
    table.attributes.push_back("num" + std::to_string(j));
  }
  table.rows.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<CellValue> row;
    row.reserve(table.attributes.size());
    for (std::size_t j = 0; j < num_categorical; ++j) {
      const auto k = rng.uniform_int(kAlphabetSize);
      row.push_back(CellValue::text(family + "_" + std::string(1, static_cast<char>('a' + k))));
    }
    for (std::size_t j = 0; j < num_numeric; ++j) {
      const double center = family_shift + 5.0 * static_cast<double>(j);
      const double component = rng.bernoulli(0.5) ? -2.0 : 2.0;
      const double value = rng.normal(center + component, 1.0);
      row.push_back(CellValue::number(std::round(value * 100.0) / 100.0));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct TableRecord {
  std::string id;
  std::string family;
  std::string path;        // relative to the manifest location
  std::string provenance;  // "seed", "decoy", or the transformation summary
};

/// Corpus description plus the ground-truth version relation, symmetric and
/// transitively closed within each derivation tree.
struct BenchmarkManifest {
  std::vector<TableRecord> records;
  GroundTruth truth;
};

struct BenchmarkOptions {
  std::size_t rows = 48;
  std::size_t num_numeric = 3;
  std::size_t num_categorical = 2;
  std::size_t decoys_per_family = 0;  // same-family non-version tables
};

struct Benchmark {
  std::vector<Table> tables;
  BenchmarkManifest manifest;
};

namespace detail {

inline AugOpSpec random_op(RandomStream& rng) {
  AugOpSpec op;
  op.kind = static_cast<AugOpKind>(rng.uniform_int(8));
  switch (op.kind) {
    case AugOpKind::ColumnDropout:
      op.param = rng.uniform(0.05, 0.25);
      break;
    case AugOpKind::DummyEncoding:
      op.param = rng.uniform(0.3, 0.8);
      break;
    case AugOpKind::RowShuffle:
      op.param = 1.0;
      break;
    case AugOpKind::OneHot:
      op.param = rng.uniform(0.3, 0.8);
      break;
    case AugOpKind::MissingInjection:
      op.param = rng.uniform(0.01, 0.05);
      break;
    case AugOpKind::Jitter:
      op.param = rng.uniform(0.002, 0.05);  // wider than the training cap
      break;
    case AugOpKind::ColumnShuffle:
      op.param = 1.0;
      break;
    case AugOpKind::RowDrop:
      op.param = rng.uniform(0.05, 0.30);
      break;
  }
  op.seed = rng.next_u64();
  return op;
}

inline const std::vector<std::string>& family_name_pool() {
  static const std::vector<std::string> names = {
      "amber",  "basalt", "cedar",  "dune",   "ember",  "fjord",
      "garnet", "heron",  "iris",   "juniper", "krill",  "lagoon",
      "maple",  "nimbus", "onyx",   "pampas"};
  return names;
}

}  // namespace detail

inline std::string benchmark_family_name(std::size_t index) {
  const auto& pool = detail::family_name_pool();
  std::string name = pool[index % pool.size()];
  if (index >= pool.size()) {
    name += std::to_string(index / pool.size());
  }
  return name;
}

/// Builds `families` derivation trees: one seed table each plus
/// `versions_per_seed` versions derived by random transformation specs of
/// depth drawn from [depth_min, depth_max].  Chains may extend versions of
/// versions; every pair inside one tree is a version pair.  Optional decoys
/// share the family tag without joining the version relation.
inline Benchmark generate_benchmark(std::size_t families, std::size_t versions_per_seed,
                                    std::size_t depth_min, std::size_t depth_max,
                                    std::uint64_t seed,
                                    const BenchmarkOptions& options = {}) {
  if (families < 1 || versions_per_seed < 1) {
    throw std::invalid_argument("generate_benchmark: counts must be >= 1");
  }
  if (depth_min < 1 || depth_max < depth_min) {
    throw std::invalid_argument("generate_benchmark: bad depth range");
  }
  Benchmark bench;
  for (std::size_t f = 0; f < families; ++f) {
    const std::string family = benchmark_family_name(f);
    const std::uint64_t family_seed = mix_seed(seed, f + 1);
    RandomStream rng(mix_seed(family_seed, 0xc4a1));

    std::vector<std::string> chain_ids;
    std::vector<std::size_t> chain_indices;  // indices into bench.tables

    Table seed_table = generate_seed_table(family, options.rows, options.num_numeric,
                                           options.num_categorical, family_seed);
    seed_table.name = family + "_v0";
    chain_ids.push_back(seed_table.name);
    chain_indices.push_back(bench.tables.size());
    bench.manifest.records.push_back(
        {seed_table.name, family, "tables/" + seed_table.name + ".csv", "seed"});
    bench.tables.push_back(std::move(seed_table));

    for (std::size_t v = 1; v <= versions_per_seed; ++v) {
      const std::size_t parent_pos =
          static_cast<std::size_t>(rng.uniform_int(chain_indices.size()));
      const std::size_t depth =
          depth_min + static_cast<std::size_t>(rng.uniform_int(depth_max - depth_min + 1));
      TransformationSpec spec;
      for (std::size_t s = 0; s < depth; ++s) {
        spec.ops.push_back(detail::random_op(rng));
      }
      Table version = derive_version(bench.tables[chain_indices[parent_pos]], spec);
      version.name = family + "_v" + std::to_string(v);
      bench.manifest.records.push_back({version.name, family,
                                        "tables/" + version.name + ".csv",
                                        "from=" + chain_ids[parent_pos] + " " +
                                            spec.describe()});
      chain_ids.push_back(version.name);
      chain_indices.push_back(bench.tables.size());
      bench.tables.push_back(std::move(version));
    }

    for (std::size_t i = 0; i < chain_ids.size(); ++i) {
      for (std::size_t j = i + 1; j < chain_ids.size(); ++j) {
        bench.manifest.truth.add(chain_ids[i], chain_ids[j]);
      }
    }

    for (std::size_t dec = 0; dec < options.decoys_per_family; ++dec) {
      Table decoy = generate_seed_table(family, options.rows, options.num_numeric,
                                        options.num_categorical,
                                        mix_seed(family_seed, 0xdec0 + dec));
      decoy.name = family + "_d" + std::to_string(dec);
      bench.manifest.records.push_back(
          {decoy.name, family, "tables/" + decoy.name + ".csv", "decoy"});
      bench.tables.push_back(std::move(decoy));
    }
  }
  return bench;
}

// ---------------------------------------------------------------------------
// corpus + manifest io
// ---------------------------------------------------------------------------

inline void save_manifest(const BenchmarkManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  for (const TableRecord& record : manifest.records) {
    out << "TABLE " << record.id << ' ' << record.family << ' ' << record.path << '\n';
    if (!record.provenance.empty()) {
      out << "# prov " << record.id << ' ' << record.provenance << '\n';
    }
  }
  for (const auto& [a, b] : manifest.truth.version_pairs) {
    out << "PAIR " << a << ' ' << b << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

inline BenchmarkManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  BenchmarkManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    std::istringstream stream(line);
    std::string kind;
    stream >> kind;
    if (kind == "TABLE") {
      TableRecord record;
      stream >> record.id >> record.family >> record.path;
      if (record.path.empty()) {
        throw std::runtime_error(path + ": malformed TABLE record at line " +
                                 std::to_string(line_no));
      }
      manifest.records.push_back(std::move(record));
    } else if (kind == "PAIR") {
      std::string a, b;
      stream >> a >> b;
      if (b.empty()) {
        throw std::runtime_error(path + ": malformed PAIR record at line " +
                                 std::to_string(line_no));
      }
      manifest.truth.add(a, b);
    } else {
      throw std::runtime_error(path + ": unknown record '" + kind + "' at line " +
                               std::to_string(line_no));
    }
  }
  return manifest;
}

/// Writes the corpus as out_dir/tables/<id>.csv plus out_dir/manifest.txt.
inline void save_benchmark(const Benchmark& bench, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "tables");
  if (bench.tables.size() != bench.manifest.records.size()) {
    throw std::invalid_argument("save_benchmark: tables/records mismatch");
  }
  for (std::size_t i = 0; i < bench.tables.size(); ++i) {
    save_table(bench.tables[i], (fs::path(out_dir) / bench.manifest.records[i].path).string());
  }
  save_manifest(bench.manifest, (fs::path(out_dir) / "manifest.txt").string());
}

/// Loads every table listed by a manifest; paths resolve relative to the
/// manifest's directory.
inline std::vector<Table> load_benchmark_tables(const BenchmarkManifest& manifest,
                                                const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Table> tables;
  tables.reserve(manifest.records.size());
  for (const TableRecord& record : manifest.records) {
    tables.push_back(load_table((base / record.path).string(), record.id, record.family));
  }
  return tables;
}

}  // namespace saved
