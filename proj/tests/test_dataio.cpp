// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "mlsgm/dataio.hpp"
#include "mlsgm/error.hpp"
#include "test_util.hpp"

using namespace mlsgm;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

std::vector<std::uint8_t> header(std::initializer_list<std::uint64_t> extents) {
  std::vector<std::uint8_t> out{'M', 'L', 'S', 'G'};
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(extents.size()));
  for (auto e : extents) put_u64(out, e);
  return out;
}

FormatError::Kind decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    dataio::decode_tensor(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decode accepted malformed bytes");
  return FormatError::Kind::kIo;
}

dataio::Manifest labelled_manifest(std::size_t records, std::size_t classes, std::uint64_t seed) {
  SplitMix64 rng(seed);
  dataio::Manifest m;
  for (std::size_t c = 0; c < classes; ++c) m.categories.push_back("c" + std::to_string(c));
  for (std::size_t r = 0; r < records; ++r) {
    dataio::Record rec;
    rec.id = "r" + std::to_string(r);
    rec.features = "features/" + rec.id + ".mlsg";
    for (std::size_t c = 0; c < classes; ++c) rec.labels.push_back(rng.uniform() < 0.4 ? 1 : -1);
    m.records.push_back(rec);
  }
  return m;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("tensor encoding is bit-exact") {
  const Tensor t({2, 3}, std::vector<double>{1.0, -2.5, 0.1, 3e10, -0.0, 7.0});
  auto want = header({2, 3});
  for (double v : t.data()) put_f32(want, static_cast<float>(v));
  CHECK(dataio::encode_tensor(t) == want);
}

TEST_CASE("tensor round trip") {
  const auto dir = test::scratch_dir("dataio_roundtrip");
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::vector<std::size_t> shape;
    for (std::size_t r = 0; r < 1 + s % 4; ++r) shape.push_back(1 + (s + r) % 5);
    const auto t = test::random_tensor(shape, s, -100.0, 100.0);
    const auto path = dir / ("t" + std::to_string(s) + ".mlsg");
    dataio::save_tensor(t, path);
    const auto back = dataio::load_tensor(path);
    CHECK(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
    // Re-saving the loaded tensor reproduces the file byte for byte.
    const auto again = dir / ("u" + std::to_string(s) + ".mlsg");
    dataio::save_tensor(back, again);
    CHECK(file_bytes(path) == file_bytes(again));
  }
}

TEST_CASE("tensor format errors") {
  CHECK(decode_error({}) == FormatError::Kind::kBadMagic);
  CHECK(decode_error({'M', 'L', 'S', 'X', 1, 0, 0, 0, 0, 0, 0, 0}) == FormatError::Kind::kBadMagic);
  SUBCASE("short payload") {
    auto bytes = header({2, 3});
    for (int i = 0; i < 5; ++i) put_f32(bytes, 1.0f);
    CHECK(decode_error(bytes) == FormatError::Kind::kTruncated);
  }
  SUBCASE("truncated extents") {
    auto bytes = header({2, 3});
    bytes.resize(bytes.size() - 3);
    CHECK(decode_error(bytes) == FormatError::Kind::kTruncated);
  }
  SUBCASE("extent product overflows") {
    auto bytes = header({1ULL << 40, 1ULL << 40});
    CHECK(decode_error(bytes) == FormatError::Kind::kDimOverflow);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(dataio::load_tensor(test::scratch_dir("dataio_missing") / "nope.mlsg"), FormatError);
  }
  SUBCASE("empty file on disk") {
    const auto p = test::scratch_dir("dataio_empty") / "empty.mlsg";
    std::ofstream(p).close();
    try {
      dataio::load_tensor(p);
      FAIL("expected an error");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::kBadMagic);
    }
  }
}

TEST_CASE("manifest round trip and validation") {
  const auto dir = test::scratch_dir("dataio_manifest");
  auto m = labelled_manifest(5, 3, 1);
  m.records[1].labels[2] = 0;
  dataio::write_manifest(m, dir / "m.jsonl");
  const auto back = dataio::read_manifest(dir / "m.jsonl");
  CHECK(back.categories == m.categories);
  REQUIRE(back.records.size() == 5);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(back.records[r].id == m.records[r].id);
    CHECK(back.records[r].labels == m.records[r].labels);
  }
  CHECK(back.resolve("x.mlsg") == dir / "x.mlsg");

  SUBCASE("duplicate id") {
    auto bad = m;
    bad.records[2].id = bad.records[0].id;
    CHECK_THROWS_AS(dataio::validate_manifest(bad), DataError);
  }
  SUBCASE("wrong label length") {
    auto bad = m;
    bad.records[3].labels.pop_back();
    CHECK_THROWS_AS(dataio::validate_manifest(bad), DataError);
  }
  SUBCASE("malformed line names the line") {
    std::ofstream(dir / "bad.jsonl") << "{\"categories\": [\"a\"]}\n{\"id\": \"x\", \"features\": 3\n";
    try {
      dataio::read_manifest(dir / "bad.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }
  SUBCASE("missing feature file names the record") {
    try {
      dataio::load_samples(back);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("r0") != std::string::npos);
    }
  }
}

TEST_CASE("embedding files") {
  const auto dir = test::scratch_dir("dataio_embeddings");
  std::ofstream(dir / "e.txt") << "dog 1 2 3\ncat 4 5 6\nbird 7 8 9\n";
  const std::vector<std::string> cats{"cat", "dog"};
  const auto e = dataio::read_embeddings(dir / "e.txt", cats);
  CHECK(e == Tensor::from_rows({{4, 5, 6}, {1, 2, 3}}));
  const std::vector<std::string> missing{"cow"};
  CHECK_THROWS_AS(dataio::read_embeddings(dir / "e.txt", missing), DataError);
  std::ofstream(dir / "ragged.txt") << "dog 1 2 3\ncat 4 5\n";
  CHECK_THROWS_AS(dataio::read_embeddings(dir / "ragged.txt", cats), DataError);

  dataio::write_embeddings(dir / "w.txt", cats, e);
  CHECK(dataio::read_embeddings(dir / "w.txt", cats) == e);

  const auto s = dataio::synthetic_embeddings(5, 4, 9);
  CHECK(s == dataio::synthetic_embeddings(5, 4, 9));
  for (std::size_t c = 0; c < 5; ++c) {
    double n = 0.0;
    for (std::size_t j = 0; j < 4; ++j) n += s(c, j) * s(c, j);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("drop_labels") {
  const auto m = labelled_manifest(1000, 10, 2);
  SUBCASE("deterministic per seed") {
    const auto a = dataio::drop_labels(m, 0.5, 7), b = dataio::drop_labels(m, 0.5, 7);
    for (std::size_t r = 0; r < m.records.size(); ++r) CHECK(a.records[r].labels == b.records[r].labels);
  }
  SUBCASE("kept fraction concentrates") {
    for (double frac : {0.1, 0.5, 0.9}) {
      const auto d = dataio::drop_labels(m, frac, 11);
      std::size_t kept = 0;
      for (const auto& r : d.records)
        for (int v : r.labels) kept += v != 0;
      CHECK(std::abs(static_cast<double>(kept) / 10000.0 - frac) <= 0.03);
    }
  }
  SUBCASE("never flips a label") {
    const auto d = dataio::drop_labels(m, 0.3, 12);
    for (std::size_t r = 0; r < m.records.size(); ++r)
      for (std::size_t c = 0; c < 10; ++c) {
        const int v = d.records[r].labels[c];
        CHECK((v == 0 || v == m.records[r].labels[c]));
      }
  }
  SUBCASE("draw order is record then class") {
    const auto d = dataio::drop_labels(m, 0.5, 13);
    SplitMix64 rng(13);
    for (std::size_t r = 0; r < m.records.size(); ++r)
      for (std::size_t c = 0; c < 10; ++c) {
        const bool keep = rng.uniform() < 0.5;
        CHECK(d.records[r].labels[c] == (keep ? m.records[r].labels[c] : 0));
      }
  }
  SUBCASE("fraction one keeps everything") {
    const auto d = dataio::drop_labels(m, 1.0, 14);
    for (std::size_t r = 0; r < m.records.size(); ++r) CHECK(d.records[r].labels == m.records[r].labels);
  }
}

TEST_CASE("fewshot_split") {
  auto train = labelled_manifest(40, 5, 3);
  auto test = labelled_manifest(20, 5, 4);
  for (auto& r : test.records) r.id = "t" + r.id;
  const std::vector<std::size_t> base{0, 1, 2}, novel{3, 4};
  SUBCASE("contract") {
    const auto split = dataio::fewshot_split(train, test, base, novel, 2, 5);
    CHECK(split.base_set.categories == std::vector<std::string>{"c0", "c1", "c2"});
    CHECK(split.base_set.records.size() == train.records.size());
    CHECK(split.novel_support.categories == std::vector<std::string>{"c3", "c4"});
    CHECK(split.novel_support.records.size() == 4);
    std::set<std::string> support;
    for (const auto& r : split.novel_support.records) support.insert(r.id);
    CHECK(support.size() == 4);
    for (const auto& r : split.novel_test.records) {
      CHECK_FALSE(support.contains(r.id));
      CHECK(std::find(r.labels.begin(), r.labels.end(), 1) != r.labels.end());
    }
    const auto again = dataio::fewshot_split(train, test, base, novel, 2, 5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(again.novel_support.records[i].id == split.novel_support.records[i].id);
  }
  SUBCASE("forced choice") {
    for (auto& r : train.records) r.labels[4] = -1;
    train.records[7].labels[4] = 1;
    const auto split = dataio::fewshot_split(train, test, base, std::vector<std::size_t>{4}, 1, 6);
    REQUIRE(split.novel_support.records.size() == 1);
    CHECK(split.novel_support.records[0].id == "r7");
  }
  SUBCASE("insufficient positives name the class") {
    for (auto& r : train.records) r.labels[4] = -1;
    try {
      dataio::fewshot_split(train, test, base, novel, 1, 7);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("c4") != std::string::npos);
    }
  }
  SUBCASE("overlapping classes") {
    CHECK_THROWS_AS(dataio::fewshot_split(train, test, base, std::vector<std::size_t>{2}, 1, 8), DataError);
  }
}

TEST_CASE("synthetic dataset") {
  dataio::SynthSpec spec;
  spec.n = 12;
  spec.n_test = 4;
  spec.seed = 21;
  const auto a = dataio::synth_dataset(spec), b = dataio::synth_dataset(spec);
  REQUIRE(a.train_samples.size() == 12);
  REQUIRE(a.test_samples.size() == 4);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(a.train_samples[i].features == b.train_samples[i].features);
    CHECK(a.train_samples[i].features.shape() == std::vector<std::size_t>{8, 8, 8});
    const auto& y = a.train_samples[i].labels;
    const auto pos = std::count(y.begin(), y.end(), 1);
    CHECK(pos >= 1);
    CHECK(pos <= 3);
    CHECK(std::count(y.begin(), y.end(), 0) == 0);
  }
  CHECK(a.embeddings == b.embeddings);

  spec.seed = 22;
  CHECK_FALSE(dataio::synth_dataset(spec).train_samples[0].features == a.train_samples[0].features);

  SUBCASE("written files are byte-identical") {
    const auto d1 = test::scratch_dir("synth_a"), d2 = test::scratch_dir("synth_b");
    dataio::write_dataset(a, d1);
    dataio::write_dataset(b, d2);
    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(d1)) {
      if (!entry.is_regular_file()) continue;
      ++files;
      CHECK(file_bytes(entry.path()) == file_bytes(d2 / fs::relative(entry.path(), d1)));
    }
    CHECK(files == 3 + 16);
    const auto m = dataio::read_manifest(d1 / "train.jsonl");
    const auto loaded = dataio::load_samples(m);
    REQUIRE(loaded.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(loaded[i].labels == a.train_samples[i].labels);
    CHECK(dataio::load_embeddings(m) == dataio::load_embeddings(dataio::read_manifest(d2 / "train.jsonl")));
  }
  SUBCASE("zero extents are rejected") {
    dataio::SynthSpec bad;
    bad.classes = 0;
    CHECK_THROWS_AS(dataio::synth_dataset(bad), DataError);
  }
}
