// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "fedmd/dataset.hpp"
#include "fedmd/error.hpp"
#include "support.hpp"

using namespace fedmd;

namespace {

std::size_t parse_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_idx(bytes);
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("expected ParseError");
  return 0;
}

}  // namespace

TEST_CASE("idx images decode to scaled floats") {
  // 2 images of 2x3
  const std::vector<std::uint8_t> bytes =
      test::idx_bytes({2, 2, 3}, {0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6});
  Tensor t = parse_idx(bytes);
  CHECK(t.shape() == std::vector<std::size_t>{2, 2, 3});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 6);
  CHECK(t.at(0, 1) == 1.0f);
  CHECK(t.at(0, 2) == doctest::Approx(0.2));
  CHECK(t.at(1, 5) == doctest::Approx(6.0 / 255.0));
}

TEST_CASE("golden idx header") {
  // Hand-assembled: magic 00 00 08 01, one dimension of 3.
  const std::vector<std::uint8_t> bytes{0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03, 7, 0, 9};
  CHECK(parse_idx_labels(bytes) == std::vector<int>{7, 0, 9});
}

TEST_CASE("malformed idx streams report the offending offset") {
  CHECK(parse_offset({}) == 0);
  CHECK(parse_offset({0, 0}) == 2);
  CHECK(parse_offset({1, 0, 8, 1, 0, 0, 0, 1, 5}) == 0);
  CHECK(parse_offset({0, 0, 0x0d, 1, 0, 0, 0, 1, 5}) == 2);  // float type unsupported
  CHECK(parse_offset({0, 0, 8, 0}) == 3);
  CHECK(parse_offset({0, 0, 8, 2, 0, 0, 0, 1, 0, 0}) == 10);  // truncated dim list
  CHECK(parse_offset({0, 0, 8, 1, 0, 0, 0, 0}) == 4);         // zero dim
  CHECK(parse_offset(test::idx_bytes({4}, {1, 2, 3})) == 11);  // short payload
  CHECK(parse_offset(test::idx_bytes({2}, {1, 2, 3})) == 10);  // trailing byte
  CHECK_THROWS_AS(parse_idx_labels(test::idx_bytes({1, 1}, {0})), ParseError);
}

TEST_CASE("idx dataset loading") {
  auto dir = test::scratch_dir("idx-load");
  test::write_bytes(dir / "img", test::idx_bytes({3, 2, 2}, std::vector<std::uint8_t>(12, 255)));
  test::write_bytes(dir / "lab", test::idx_bytes({3}, {2, 0, 1}));
  test::write_bytes(dir / "lab2", test::idx_bytes({2}, {2, 0}));
  Dataset d = load_idx_dataset((dir / "img").string(), (dir / "lab").string(), "mini");
  CHECK(d.size() == 3);
  CHECK(d.dim() == 4);
  CHECK(d.num_classes == 3);
  CHECK(d.class_histogram() == std::vector<std::size_t>{1, 1, 1});
  CHECK_THROWS_AS(load_idx_dataset((dir / "img").string(), (dir / "lab2").string(), "bad"), DataError);
  CHECK_THROWS_AS(read_file_bytes((dir / "missing").string()), IoError);
}

TEST_CASE("blob generator is seeded and shares centers across draws") {
  BlobGenerator g(4, 8, 1.0, 42);
  BlobGenerator h(4, 8, 1.0, 42);
  CHECK(g.centers() == h.centers());
  CHECK(g.draw(5, 1, "a").features == h.draw(5, 1, "b").features);
  CHECK_FALSE(g.draw(5, 1, "a").features == g.draw(5, 2, "a").features);
  for (const auto& c : g.centers()) {
    double n = 0.0;
    for (double x : c) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(BlobGenerator::kCenterRadius));
  }

  BlobGenerator o(6, 16, 1.0, 3, true);
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = a + 1; b < 6; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 16; ++i) dot += o.centers()[a][i] * o.centers()[b][i];
      CHECK(std::abs(dot) < 1e-9);
    }
  }
  CHECK_THROWS_AS(BlobGenerator(5, 4, 1.0, 1, true), ConfigError);
  CHECK_THROWS_AS(BlobGenerator(2, 4, 0.0, 1), ConfigError);
}

TEST_CASE("iid partition: exact counts, disjoint, provenance") {
  Dataset pool = synth_blobs(6, 60, 5, 1.0, 8);
  PartitionPlan plan;
  plan.parties = 10;
  plan.samples_per_class_per_party = 3;
  plan.seed = 77;
  Partition p = partition_iid(pool, plan);
  REQUIRE(p.parties.size() == 10);
  std::set<std::size_t> seen;
  for (const Dataset& d : p.parties) {
    CHECK(d.class_histogram() == std::vector<std::size_t>(6, 3));
    REQUIRE(d.origin.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t src = d.origin[i];
      CHECK(seen.insert(src).second);
      // Provenance audit: the row really is the source row, label unchanged.
      CHECK(d.labels[i] == pool.labels[src]);
      for (std::size_t j = 0; j < d.dim(); ++j) CHECK(d.features.at(i, j) == pool.features.at(src, j));
    }
  }
  CHECK(p.remainder.size() == pool.size() - 180);
  for (std::size_t src : p.remainder.origin) CHECK(seen.insert(src).second);
  CHECK(seen.size() == pool.size());

  Partition again = partition_iid(pool, plan);
  for (std::size_t k = 0; k < 10; ++k) CHECK(again.parties[k].origin == p.parties[k].origin);
  plan.seed = 78;
  CHECK_FALSE(partition_iid(pool, plan).parties[0].origin == p.parties[0].origin);
}

TEST_CASE("iid partition with too few samples names the class") {
  Dataset pool = synth_blobs(3, 5, 2, 1.0, 1);
  PartitionPlan plan;
  plan.parties = 2;
  plan.samples_per_class_per_party = 3;
  try {
    partition_iid(pool, plan);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("class 0") != std::string::npos);
  }
}

TEST_CASE("non-iid partition: one subclass per superclass per party") {
  // 3 superclasses x 2 subclasses
  Dataset pool = synth_blobs(6, 30, 4, 1.0, 5);
  PartitionPlan plan;
  plan.mode = PartitionMode::noniid;
  plan.parties = 2;
  plan.samples_per_class_per_party = 20;
  plan.subclass_to_superclass = {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 2}, {5, 2}};
  plan.seed = 4;
  Partition p = partition_noniid(pool, plan);
  REQUIRE(p.parties.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    const Dataset& d = p.parties[k];
    CHECK(d.num_classes == 3);
    CHECK(d.class_histogram() == std::vector<std::size_t>{20, 20, 20});
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int sub = pool.labels[d.origin[i]];
      CHECK(plan.subclass_to_superclass.at(sub) == d.labels[i]);
      CHECK(p.assigned_subclasses[k].at(d.labels[i]) == sub);
    }
  }
  // The two parties never share a subclass.
  for (int s = 0; s < 3; ++s) CHECK(p.assigned_subclasses[0].at(s) != p.assigned_subclasses[1].at(s));
  CHECK(p.remainder.size() == pool.size() - 120);

  plan.parties = 3;
  CHECK_THROWS_AS(partition_noniid(pool, plan), ConfigError);
}

TEST_CASE("relabel, filter and split") {
  Dataset d = synth_blobs(4, 10, 3, 1.0, 2);
  Dataset r = relabel_to_superclass(d, {{0, 0}, {1, 0}, {2, 1}, {3, 1}}, "r");
  CHECK(r.num_classes == 2);
  CHECK(r.class_histogram() == std::vector<std::size_t>{20, 20});
  CHECK_THROWS_AS(relabel_to_superclass(d, {{0, 0}}, "bad"), DataError);

  const std::vector<int> keep{1, 3};
  Dataset f = filter_labels(d, keep, "f");
  CHECK(f.size() == 20);
  for (int y : f.labels) CHECK((y == 1 || y == 3));

  Rng rng(5);
  auto [a, b] = split(d, 0.1, rng);
  CHECK(a.size() == 36);
  CHECK(b.size() == 4);
  std::set<std::size_t> all(a.origin.begin(), a.origin.end());
  all.insert(b.origin.begin(), b.origin.end());
  CHECK(all.size() == 40);
  CHECK_THROWS_AS(split(d, 1.0, rng), ConfigError);
}

TEST_CASE("concat keeps order") {
  Dataset a = synth_blobs(2, 2, 3, 1.0, 1);
  Dataset b = synth_blobs(2, 3, 3, 1.0, 2);
  std::vector<Dataset> parts{a, b};
  Dataset c = concat(parts, "c");
  CHECK(c.size() == 10);
  CHECK(c.features.at(4, 0) == b.features.at(0, 0));
  std::vector<Dataset> one{a};
  Dataset same = concat(one, "same");
  CHECK(same.features == a.features);
  CHECK(same.labels == a.labels);
}
