#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "csl/dataset.hpp"
#include "csl/rng.hpp"

using namespace csl;

namespace {

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

EmbeddingDataset tiny_dataset() {
  EmbeddingDataset ds;
  ds.rows = 2;
  ds.dim = 3;
  ds.features = {0.5f, -1.25f, 2.0f, 3.5f, 0.0f, -0.75f};
  ds.labels = std::vector<std::uint32_t>{0, 1};
  ds.class_count = 2;
  ds.name = "tiny";
  return ds;
}

EmbeddingDataset random_dataset(Rng& rng) {
  EmbeddingDataset ds;
  ds.rows = 1 + rng.next_below(8);
  ds.dim = 1 + rng.next_below(5);
  ds.class_count = 2 + static_cast<std::uint32_t>(rng.next_below(4));
  ds.domain_count = 1 + static_cast<std::uint32_t>(rng.next_below(3));
  ds.name = "rand";
  for (std::size_t i = 0; i < ds.rows * ds.dim; ++i) {
    ds.features.push_back(static_cast<float>(rng.next_normal()));
  }
  if (rng.next_below(2)) {
    ds.labels.emplace();
    for (std::size_t i = 0; i < ds.rows; ++i) {
      ds.labels->push_back(static_cast<std::uint32_t>(rng.next_below(ds.class_count)));
    }
  }
  if (rng.next_below(2)) {
    ds.domains.emplace();
    for (std::size_t i = 0; i < ds.rows; ++i) {
      ds.domains->push_back(static_cast<std::uint32_t>(rng.next_below(ds.domain_count)));
    }
  }
  return ds;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("binary round trip on a 2x3 dataset") {
  auto ds = tiny_dataset();
  const auto path = temp_path("csl_tiny.bin");
  save_dataset(ds, path, FileFormat::Binary);
  auto back = load_dataset(path, FileFormat::Binary);
  REQUIRE(back.rows == 2);
  REQUIRE(back.dim == 3);
  REQUIRE(back.features == ds.features);
  REQUIRE(back.labels == ds.labels);
  REQUIRE(back.class_count == 2);
  std::remove(path.c_str());
}

TEST_CASE("out-of-range label reports the offending row") {
  auto ds = tiny_dataset();
  (*ds.labels)[1] = 5;
  const auto path = temp_path("csl_badlabel.bin");
  // Bypass save-side validation by writing the raw blob.
  {
    std::ofstream os(path, std::ios::binary);
    save_dataset_binary(ds, os);
  }
  REQUIRE_THROWS_WITH(load_dataset(path, FileFormat::Binary),
                      Catch::Matchers::ContainsSubstring("row 1"));
  std::remove(path.c_str());
}

TEST_CASE("malformed header and truncation diagnostics") {
  const auto path = temp_path("csl_bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  REQUIRE_THROWS_WITH(load_dataset(path, FileFormat::Binary),
                      Catch::Matchers::ContainsSubstring("magic"));
  REQUIRE_THROWS_AS(load_dataset(temp_path("csl_missing_file.bin"), FileFormat::Binary),
                    DataError);
  std::remove(path.c_str());
}

TEST_CASE("non-finite feature rejected with row index") {
  auto ds = tiny_dataset();
  ds.features[4] = std::numeric_limits<float>::infinity();
  REQUIRE_THROWS_WITH(ds.validate(), Catch::Matchers::ContainsSubstring("row 1"));
}

TEST_CASE("binary save/load is identity on random datasets") {
  Rng rng(7);
  for (int rep = 0; rep < 25; ++rep) {
    auto ds = random_dataset(rng);
    const auto path = temp_path("csl_prop.bin");
    save_dataset(ds, path, FileFormat::Binary);
    auto back = load_dataset(path, FileFormat::Binary);
    REQUIRE(back.rows == ds.rows);
    REQUIRE(back.dim == ds.dim);
    REQUIRE(back.features == ds.features);
    REQUIRE(back.labels == ds.labels);
    REQUIRE(back.domains == ds.domains);
    REQUIRE(back.class_count == ds.class_count);
    REQUIRE(back.domain_count == ds.domain_count);
    // Serialized bytes are reproducible: save(load(save(d))) == save(d).
    const auto path2 = temp_path("csl_prop2.bin");
    save_dataset(back, path2, FileFormat::Binary);
    const std::string b1 = file_bytes(path);
    const std::string b2 = file_bytes(path2);
    REQUIRE(fnv1a(b1.data(), b1.size()) == fnv1a(b2.data(), b2.size()));
    REQUIRE(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
  }
}

TEST_CASE("text round trip is exact at 17 significant digits") {
  auto ds = tiny_dataset();
  ds.domains = std::vector<std::uint32_t>{0, 0};
  const auto path = temp_path("csl_tiny.txt");
  save_dataset(ds, path, FileFormat::Text);
  auto back = load_dataset(path, FileFormat::Text);
  REQUIRE(back.features == ds.features);
  REQUIRE(back.labels == ds.labels);
  REQUIRE(back.domains == ds.domains);
  std::remove(path.c_str());
}

TEST_CASE("1x1 dataset round trips") {
  EmbeddingDataset ds;
  ds.rows = 1;
  ds.dim = 1;
  ds.features = {1.5f};
  ds.name = "one";
  const auto path = temp_path("csl_one.bin");
  save_dataset(ds, path, FileFormat::Binary);
  auto back = load_dataset(path, FileFormat::Binary);
  REQUIRE(back.features == ds.features);
  std::remove(path.c_str());
}

TEST_CASE("an 80/20 split of 50k rows yields 40k train and 10k eval") {
  EmbeddingDataset ds;
  ds.rows = 50000;
  ds.dim = 1;
  ds.features.assign(50000, 0.0f);
  auto split = split_dataset(ds, 0.8, 3);
  REQUIRE(split.train_indices.size() == 40000);
  REQUIRE(split.eval_indices.size() == 10000);
}

TEST_CASE("split is deterministic and a partition") {
  EmbeddingDataset ds;
  ds.rows = 10;
  ds.dim = 1;
  ds.features.assign(10, 0.0f);
  auto a = split_dataset(ds, 0.5, 11);
  auto b = split_dataset(ds, 0.5, 11);
  REQUIRE(a.train_indices == b.train_indices);
  REQUIRE(a.eval_indices == b.eval_indices);
  std::vector<std::size_t> all = a.train_indices;
  all.insert(all.end(), a.eval_indices.begin(), a.eval_indices.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) REQUIRE(all[i] == i);
  REQUIRE_THROWS_AS(split_dataset(ds, 1.5, 0), DataError);
  REQUIRE_THROWS_AS(split_dataset(ds, 0.0, 0), DataError);
}

TEST_CASE("restrict selects matching rows and keeps order") {
  EmbeddingDataset ds;
  ds.rows = 6;
  ds.dim = 1;
  ds.features = {0, 1, 2, 3, 4, 5};
  ds.labels = std::vector<std::uint32_t>{0, 1, 2, 0, 1, 2};
  ds.class_count = 3;
  RowPredicate pred;
  pred.needs_label = true;
  pred.fn = [](std::uint32_t label, std::uint32_t) { return label < 2; };
  auto view = restrict(ds, pred);
  REQUIRE(view.indices == std::vector<std::size_t>{0, 1, 3, 4});
  REQUIRE(view.row(2)[0] == 3.0f);

  RowPredicate inverse;
  inverse.needs_label = true;
  inverse.fn = [](std::uint32_t label, std::uint32_t) { return label >= 2; };
  REQUIRE(view.size() + restrict(ds, inverse).size() == ds.rows);

  RowPredicate all;
  all.needs_label = true;
  all.fn = [](std::uint32_t, std::uint32_t) { return true; };
  REQUIRE(restrict(ds, all).indices == DatasetView::full(ds).indices);

  RowPredicate needs_domain;
  needs_domain.needs_domain = true;
  needs_domain.fn = [](std::uint32_t, std::uint32_t) { return true; };
  REQUIRE_THROWS_AS(restrict(ds, needs_domain), DataError);
}
