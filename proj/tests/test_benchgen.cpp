#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "saved/benchgen.hpp"
#include "test_util.hpp"

using namespace saved;

namespace {

std::multiset<std::string> row_multiset(const Table& t) {
  std::multiset<std::string> keys;
  for (const auto& row : t.rows) {
    std::string key;
    for (const auto& cell : row) {
      key += cell_to_string(cell) + "|";
    }
    keys.insert(key);
  }
  return keys;
}

std::set<std::string> categorical_alphabet(const Table& t) {
  std::set<std::string> values;
  for (std::size_t j = 0; j < t.num_columns(); ++j) {
    if (infer_column_kind(t, j) == ColumnKind::Categorical) {
      for (const auto& row : t.rows) {
        if (!row[j].is_missing()) {
          values.insert(cell_to_string(row[j]));
        }
      }
    }
  }
  return values;
}

}  // namespace

TEST_CASE("seed tables have the requested shape", "[benchgen]") {
  const Table t = generate_seed_table("demo", 50, 3, 2, 9);
  REQUIRE(t.num_rows() == 50);
  REQUIRE(t.num_columns() == 5);
  REQUIRE(t.source_dataset == "demo");
  // categorical columns lead, numeric columns follow
  for (std::size_t j = 0; j < 2; ++j) {
    REQUIRE(infer_column_kind(t, j) == ColumnKind::Categorical);
  }
  for (std::size_t j = 2; j < 5; ++j) {
    REQUIRE(infer_column_kind(t, j) == ColumnKind::Numeric);
  }
  REQUIRE_THROWS_AS(generate_seed_table("demo", 3, 3, 2, 9), std::invalid_argument);
  REQUIRE_THROWS_AS(generate_seed_table("demo", 10, 1, 0, 9), std::invalid_argument);
}

TEST_CASE("families carry disjoint categorical alphabets", "[benchgen]") {
  const Table a = generate_seed_table("north", 30, 2, 2, 5);
  const Table b = generate_seed_table("south", 30, 2, 2, 5);  // same seed
  const std::set<std::string> alpha_a = categorical_alphabet(a);
  const std::set<std::string> alpha_b = categorical_alphabet(b);
  for (const auto& value : alpha_a) {
    REQUIRE(alpha_b.count(value) == 0);
  }
}

TEST_CASE("seed table generation is deterministic", "[benchgen]") {
  REQUIRE(generate_seed_table("demo", 20, 2, 2, 123) ==
          generate_seed_table("demo", 20, 2, 2, 123));
}

TEST_CASE("derive_version applies the spec in order", "[benchgen]") {
  const Table base = generate_seed_table("demo", 20, 2, 2, 77);
  SECTION("pure row shuffle preserves the row multiset") {
    TransformationSpec spec;
    spec.ops.push_back({AugOpKind::RowShuffle, 1.0, 42});
    const Table out = derive_version(base, spec);
    REQUIRE(row_multiset(out) == row_multiset(base));
    REQUIRE(out.source_dataset == base.source_dataset);
  }
  SECTION("one-hot widens the table and keeps the row-sum property") {
    TransformationSpec spec;
    spec.ops.push_back({AugOpKind::OneHot, 1.0, 42});
    const Table out = derive_version(base, spec);
    REQUIRE(out.num_columns() > base.num_columns());
  }
  SECTION("empty specs are rejected") {
    REQUIRE_THROWS_AS(derive_version(base, TransformationSpec{}), std::invalid_argument);
  }
  SECTION("wide-jitter specs are allowed beyond the training cap") {
    TransformationSpec spec;
    spec.ops.push_back({AugOpKind::Jitter, 0.05, 42});
    const Table out = derive_version(base, spec);
    REQUIRE(out.num_rows() == base.num_rows());
  }
}

TEST_CASE("generate_benchmark builds transitive version trees", "[benchgen]") {
  BenchmarkOptions options;
  options.rows = 12;
  const Benchmark bench = generate_benchmark(2, 3, 1, 1, 7, options);
  SECTION("counts") {
    REQUIRE(bench.tables.size() == 8);  // (3 versions + seed) per family
    REQUIRE(bench.manifest.records.size() == 8);
    // C(4,2) = 6 pairs per family
    REQUIRE(bench.manifest.truth.version_pairs.size() == 12);
  }
  SECTION("pairs never cross families") {
    std::map<std::string, std::string> family_of;
    for (const TableRecord& record : bench.manifest.records) {
      family_of[record.id] = record.family;
    }
    for (const auto& [a, b] : bench.manifest.truth.version_pairs) {
      REQUIRE(family_of.at(a) == family_of.at(b));
      REQUIRE(a < b);  // stored unordered as the sorted pair
    }
  }
  SECTION("determinism") {
    const Benchmark again = generate_benchmark(2, 3, 1, 1, 7, options);
    REQUIRE(again.tables.size() == bench.tables.size());
    for (std::size_t i = 0; i < bench.tables.size(); ++i) {
      REQUIRE(again.tables[i] == bench.tables[i]);
    }
    REQUIRE(again.manifest.truth.version_pairs == bench.manifest.truth.version_pairs);
  }
  SECTION("every version satisfies the table contract") {
    for (const Table& t : bench.tables) {
      t.validate();
      REQUIRE(t.num_rows() >= 1);
      REQUIRE(t.num_columns() >= 1);
    }
  }
}

TEST_CASE("decoys share the family without joining the version relation", "[benchgen]") {
  BenchmarkOptions options;
  options.rows = 12;
  options.decoys_per_family = 2;
  const Benchmark bench = generate_benchmark(1, 2, 1, 2, 3, options);
  REQUIRE(bench.tables.size() == 5);  // seed + 2 versions + 2 decoys
  for (const TableRecord& record : bench.manifest.records) {
    if (record.provenance == "decoy") {
      for (const auto& [a, b] : bench.manifest.truth.version_pairs) {
        REQUIRE(a != record.id);
        REQUIRE(b != record.id);
      }
    }
  }
}

TEST_CASE("benchmark corpus round-trips through the filesystem", "[benchgen]") {
  BenchmarkOptions options;
  options.rows = 10;
  const Benchmark bench = generate_benchmark(2, 2, 1, 2, 99, options);
  const std::string dir = testutil::temp_path("bench_dir");
  save_benchmark(bench, dir);

  const std::string manifest_path = dir + "/manifest.txt";
  const BenchmarkManifest manifest = load_manifest(manifest_path);
  REQUIRE(manifest.records.size() == bench.manifest.records.size());
  REQUIRE(manifest.truth.version_pairs == bench.manifest.truth.version_pairs);

  const std::vector<Table> tables = load_benchmark_tables(manifest, manifest_path);
  REQUIRE(tables.size() == bench.tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) {
    REQUIRE(tables[i].name == bench.tables[i].name);
    REQUIRE(tables[i].source_dataset == bench.tables[i].source_dataset);
    REQUIRE(tables[i].attributes == bench.tables[i].attributes);
    REQUIRE(tables[i].num_rows() == bench.tables[i].num_rows());
  }
}

TEST_CASE("generate_benchmark validates its arguments", "[benchgen]") {
  REQUIRE_THROWS_AS(generate_benchmark(0, 3, 1, 2, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(generate_benchmark(2, 3, 2, 1, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(generate_benchmark(2, 3, 0, 1, 1), std::invalid_argument);
}
