// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mlsgm/error.hpp"
#include "mlsgm/rng.hpp"

namespace mlsgm::dataio {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 8 * t.rank() + 4 * t.size());
  for (char ch : {'M', 'L', 'S', 'G'}) out.push_back(static_cast<std::uint8_t>(ch));
  put_le<std::uint32_t>(out, kTensorVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  for (double v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MLSG", 4) != 0)
    throw FormatError(Kind::kBadMagic, "not an MLSG tensor file (bad magic)");
  if (bytes.size() < 12) throw FormatError(Kind::kTruncated, "tensor header truncated");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorVersion)
    throw FormatError(Kind::kBadMagic, "unsupported tensor version " + std::to_string(version));
  const auto ndim = get_le<std::uint32_t>(bytes, 8);
  if (ndim > kMaxRank) throw FormatError(Kind::kDimOverflow, "tensor rank " + std::to_string(ndim) + " too large");
  if (bytes.size() < 12 + 8 * static_cast<std::size_t>(ndim)) throw FormatError(Kind::kTruncated, "tensor extents truncated");
  std::vector<std::size_t> shape;
  std::uint64_t count = 1;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / 4;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto e = get_le<std::uint64_t>(bytes, 12 + 8 * i);
    if (e != 0 && count > limit / e) throw FormatError(Kind::kDimOverflow, "tensor extents overflow");
    count *= e;
    shape.push_back(static_cast<std::size_t>(e));
  }
  const std::size_t offset = 12 + 8 * static_cast<std::size_t>(ndim);
  const std::uint64_t payload = bytes.size() - offset;
  if (payload != 4 * count)
    throw FormatError(Kind::kTruncated, "tensor payload holds " + std::to_string(payload / 4) + " floats, header says " +
                                            std::to_string(count));
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i)
    data[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset + 4 * i)));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const Tensor& t, const fs::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor load_tensor(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

fs::path Manifest::resolve(const std::string& relative) const {
  fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

void validate_manifest(const Manifest& m) {
  std::set<std::string> ids;
  for (const auto& r : m.records) {
    if (!ids.insert(r.id).second) throw DataError("duplicate record id: " + r.id);
    try {
      losses::validate_labels(r.labels, m.classes());
    } catch (const DataError& e) {
      throw DataError("record " + r.id + ": " + e.what());
    }
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  bool have_head = false;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json j = json::parse(line);
      if (!have_head) {
        m.categories = j.at("categories").get<std::vector<std::string>>();
        m.embeddings = j.value("embeddings", std::string("synthetic"));
        m.embedding_dim = j.value("embedding_dim", std::size_t{16});
        m.embedding_seed = j.value("embedding_seed", std::uint64_t{0});
        have_head = true;
        continue;
      }
      Record r;
      r.id = j.at("id").get<std::string>();
      r.features = j.at("features").get<std::string>();
      r.labels = j.at("labels").get<std::vector<int>>();
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_head) throw DataError("manifest " + path.string() + " has no head line");
  validate_manifest(m);
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  json head = {{"categories", m.categories},
               {"embeddings", m.embeddings},
               {"embedding_dim", m.embedding_dim},
               {"embedding_seed", m.embedding_seed}};
  out << head.dump() << '\n';
  for (const auto& r : m.records) {
    json j = {{"id", r.id}, {"features", r.features}, {"labels", r.labels}};
    out << j.dump() << '\n';
  }
}

Tensor read_embeddings(const fs::path& path, std::span<const std::string> categories) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path.string());
  std::map<std::string, std::vector<double>> table;
  std::size_t width = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    std::vector<double> v;
    for (double x; ls >> x;) v.push_back(x);
    if (v.empty()) throw DataError("embedding for '" + name + "' has no values");
    if (width == 0) width = v.size();
    if (v.size() != width) throw DataError("embedding for '" + name + "' has inconsistent width");
    table[name] = std::move(v);
  }
  Tensor out = Tensor::matrix(categories.size(), width);
  for (std::size_t c = 0; c < categories.size(); ++c) {
    auto it = table.find(categories[c]);
    if (it == table.end()) throw DataError("no embedding for category '" + categories[c] + "'");
    std::copy(it->second.begin(), it->second.end(), out.row(c).begin());
  }
  return out;
}

void write_embeddings(const fs::path& path, std::span<const std::string> names, const Tensor& embeddings) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write embeddings " + path.string());
  out << std::setprecision(17);
  for (std::size_t c = 0; c < names.size(); ++c) {
    out << names[c];
    for (double v : embeddings.row(c)) out << ' ' << v;
    out << '\n';
  }
}

Tensor synthetic_embeddings(std::size_t classes, std::size_t dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor out = Tensor::matrix(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    for (auto& v : out.row(c)) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : out.row(c)) v /= norm;
  }
  return out;
}

Tensor load_embeddings(const Manifest& m) {
  if (m.embeddings == "synthetic") return synthetic_embeddings(m.classes(), m.embedding_dim, m.embedding_seed);
  return read_embeddings(m.resolve(m.embeddings), m.categories);
}

std::vector<Sample> load_samples(const Manifest& m) {
  std::vector<Sample> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    try {
      Tensor f = load_tensor(m.resolve(r.features));
      if (f.rank() != 3) throw DataError("features must be rank 3 (D x H x W)");
      out.push_back(Sample{r.id, std::move(f), r.labels});
    } catch (const DataError& e) {
      throw DataError("record " + r.id + ": " + e.what());
    }
  }
  return out;
}

namespace {

template <typename Rows>
void drop_cells(Rows& rows, double known_fraction, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (auto& row : rows)
    for (auto& v : row.labels) {
      const bool keep = rng.uniform() < known_fraction;
      if (!keep) v = 0;
    }
}

}  // namespace

Manifest drop_labels(const Manifest& m, double known_fraction, std::uint64_t seed) {
  Manifest out = m;
  drop_cells(out.records, known_fraction, seed);
  return out;
}

void drop_labels(std::span<Sample> samples, double known_fraction, std::uint64_t seed) {
  drop_cells(samples, known_fraction, seed);
}

Manifest restrict_columns(const Manifest& m, std::span<const std::size_t> columns) {
  Manifest out = m;
  out.categories.clear();
  for (auto c : columns) out.categories.push_back(m.categories.at(c));
  for (auto& r : out.records) {
    losses::TriStateLabels y;
    for (auto c : columns) y.push_back(r.labels.at(c));
    r.labels = std::move(y);
  }
  return out;
}

std::vector<Sample> restrict_columns(std::span<const Sample> samples, std::span<const std::size_t> columns) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    losses::TriStateLabels y;
    for (auto c : columns) y.push_back(s.labels.at(c));
    s.labels = std::move(y);
  }
  return out;
}

FewShotSplit fewshot_split(const Manifest& train, const Manifest& test, std::span<const std::size_t> base_classes,
                           std::span<const std::size_t> novel_classes, std::size_t shots, std::uint64_t seed) {
  std::set<std::size_t> base(base_classes.begin(), base_classes.end());
  for (auto c : novel_classes) {
    if (base.contains(c)) throw DataError("class " + std::to_string(c) + " is both base and novel");
    if (c >= train.classes()) throw DataError("novel class " + std::to_string(c) + " out of range");
  }
  for (auto c : base_classes)
    if (c >= train.classes()) throw DataError("base class " + std::to_string(c) + " out of range");
  if (shots == 0) throw DataError("few-shot K must be positive");

  FewShotSplit split;
  split.base_set = restrict_columns(train, base_classes);

  SplitMix64 rng(seed);
  std::vector<std::size_t> chosen;
  std::set<std::string> chosen_ids;
  for (auto c : novel_classes) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < train.records.size(); ++i)
      if (train.records[i].labels[c] == 1 && !chosen_ids.contains(train.records[i].id)) candidates.push_back(i);
    if (candidates.size() < shots)
      throw DataError("few-shot split: class '" + train.categories[c] + "' has " + std::to_string(candidates.size()) +
                      " available positives, needs " + std::to_string(shots));
    rng.shuffle(candidates);
    for (std::size_t k = 0; k < shots; ++k) {
      chosen.push_back(candidates[k]);
      chosen_ids.insert(train.records[candidates[k]].id);
    }
  }
  Manifest support = train;
  support.records.clear();
  for (auto i : chosen) support.records.push_back(train.records[i]);
  split.novel_support = restrict_columns(support, novel_classes);

  Manifest held = test;
  held.records.clear();
  for (const auto& r : test.records) {
    if (chosen_ids.contains(r.id)) continue;
    const bool has_novel = std::any_of(novel_classes.begin(), novel_classes.end(),
                                       [&](std::size_t c) { return r.labels.at(c) == 1; });
    if (has_novel) held.records.push_back(r);
  }
  split.novel_test = restrict_columns(held, novel_classes);
  return split;
}

SynthDataset synth_dataset(const SynthSpec& spec) {
  if (!spec.n || !spec.classes || !spec.channels || !spec.height || !spec.width || !spec.embedding_dim)
    throw DataError("synthetic dataset extents must be positive");
  SplitMix64 rng(spec.seed);
  const std::size_t C = spec.classes, D = spec.channels, H = spec.height, W = spec.width;

  std::vector<std::vector<double>> pattern(C, std::vector<double>(D));
  for (auto& p : pattern)
    for (auto& v : p) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
  std::vector<std::pair<double, double>> centre(C);
  for (auto& [cy, cx] : centre) {
    cy = rng.uniform(0.0, static_cast<double>(H));
    cx = rng.uniform(0.0, static_cast<double>(W));
  }
  const double sigma = std::max(1.0, 0.2 * static_cast<double>(std::max(H, W)));

  SynthDataset out;
  {
    Tensor emb = Tensor::matrix(C, spec.embedding_dim);
    for (std::size_t c = 0; c < C; ++c) {
      double norm = 0.0;
      for (auto& v : emb.row(c)) {
        v = rng.normal();
        norm += v * v;
      }
      for (auto& v : emb.row(c)) v /= std::sqrt(norm);
    }
    out.embeddings = std::move(emb);
  }

  Manifest head;
  for (std::size_t c = 0; c < C; ++c) head.categories.push_back("class" + std::to_string(c));
  head.embeddings = "embeddings.txt";
  head.embedding_dim = spec.embedding_dim;
  head.embedding_seed = spec.seed;
  out.train = head;
  out.test = head;

  auto make_image = [&](const std::string& id) {
    const std::size_t count = 1 + rng.below(std::min<std::size_t>(3, C));
    std::vector<std::size_t> order(C);
    for (std::size_t c = 0; c < C; ++c) order[c] = c;
    rng.shuffle(order);
    losses::TriStateLabels labels(C, -1);
    Tensor f({D, H, W});
    std::vector<std::size_t> planted(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(planted.begin(), planted.end());
    std::vector<std::pair<double, double>> jittered;
    for (auto c : planted) {
      labels[c] = 1;
      jittered.emplace_back(centre[c].first + rng.uniform(-1.0, 1.0), centre[c].second + rng.uniform(-1.0, 1.0));
    }
    for (auto& v : f.data()) v = 0.1 * rng.uniform(-1.0, 1.0);
    for (std::size_t k = 0; k < planted.size(); ++k) {
      const auto c = planted[k];
      const auto [cy, cx] = jittered[k];
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
          const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
          for (std::size_t d = 0; d < D; ++d) f.at(d, y, x) += pattern[c][d] * blob;
        }
    }
    // Match what a round trip through the float32 tensor file would give.
    for (auto& v : f.data()) v = static_cast<double>(static_cast<float>(v));
    return Sample{id, std::move(f), std::move(labels)};
  };

  auto name = [](const char* prefix, std::size_t i) {
    std::ostringstream os;
    os << prefix << std::setw(5) << std::setfill('0') << i;
    return os.str();
  };
  for (std::size_t i = 0; i < spec.n; ++i) out.train_samples.push_back(make_image(name("train", i)));
  for (std::size_t i = 0; i < spec.n_test; ++i) out.test_samples.push_back(make_image(name("test", i)));
  for (const auto& s : out.train_samples) out.train.records.push_back(Record{s.id, "features/" + s.id + ".mlsg", s.labels});
  for (const auto& s : out.test_samples) out.test.records.push_back(Record{s.id, "features/" + s.id + ".mlsg", s.labels});
  return out;
}

void write_dataset(const SynthDataset& data, const fs::path& dir) {
  fs::create_directories(dir / "features");
  for (const auto* set : {&data.train_samples, &data.test_samples})
    for (const auto& s : *set) save_tensor(s.features, dir / "features" / (s.id + ".mlsg"));
  write_manifest(data.train, dir / "train.jsonl");
  write_manifest(data.test, dir / "test.jsonl");
  write_embeddings(dir / "embeddings.txt", data.train.categories, data.embeddings);
}

}  // namespace mlsgm::dataio
