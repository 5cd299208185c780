// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// File formats and label protocols.
//
// Tensor file (little-endian):
//   bytes 0..3   magic "MLSG"
//   u32          version (1)
//   u32          ndim
//   u64 x ndim   extents
//   f32 x prod   row-major payload
//
// Manifest (JSON lines): line 1 is a head object
//   {"categories": [...], "embeddings": "<path>" | "synthetic",
//    "embedding_dim": E, "embedding_seed": s}
// and every following line a record {"id", "features", "labels"} whose
// labels are +1 / -1 / 0. Relative paths resolve against the manifest's
// directory.
//
// Embedding file: one text line per category, "name v1 ... vE".

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mlsgm/losses.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::dataio {

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kMaxRank = 16;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

struct Record {
  std::string id;
  std::string features;            // path to a D x H x W tensor file
  losses::TriStateLabels labels;
};

struct Manifest {
  std::vector<std::string> categories;
  std::string embeddings = "synthetic";
  std::size_t embedding_dim = 16;  // used for synthetic embeddings
  std::uint64_t embedding_seed = 0;
  std::vector<Record> records;
  std::filesystem::path base_dir;  // not serialized

  std::size_t classes() const { return categories.size(); }
  std::filesystem::path resolve(const std::string& relative) const;
};

/// Throws DataError on duplicate ids or label vectors of the wrong length.
void validate_manifest(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Rows follow `categories`; throws DataError for a missing category or ragged widths.
Tensor read_embeddings(const std::filesystem::path& path, std::span<const std::string> categories);
void write_embeddings(const std::filesystem::path& path, std::span<const std::string> names, const Tensor& embeddings);
/// C unit vectors drawn from normals (C * E draws, row-major).
Tensor synthetic_embeddings(std::size_t classes, std::size_t dim, std::uint64_t seed);
/// Reads the manifest's embedding file or synthesizes vectors.
Tensor load_embeddings(const Manifest& m);

struct Sample {
  std::string id;
  Tensor features;
  losses::TriStateLabels labels;
};

/// Loads every feature tensor; errors name the offending record id.
std::vector<Sample> load_samples(const Manifest& m);

/// Keeps each (record, class) cell with probability `known_fraction`, one
/// uniform draw per cell in record-then-class order; dropped cells become 0.
Manifest drop_labels(const Manifest& m, double known_fraction, std::uint64_t seed);
void drop_labels(std::span<Sample> samples, double known_fraction, std::uint64_t seed);

/// Manifest with only the given label columns (and categories), in that order.
Manifest restrict_columns(const Manifest& m, std::span<const std::size_t> columns);
std::vector<Sample> restrict_columns(std::span<const Sample> samples, std::span<const std::size_t> columns);

struct FewShotSplit {
  Manifest base_set;       // train records, base columns
  Manifest novel_support;  // K records per novel class, novel columns
  Manifest novel_test;     // test records with a novel positive, novel columns
};

/// For each novel class in the given order, the positive train records not
/// yet chosen are shuffled (Fisher-Yates, SplitMix64) and the first K taken.
/// Test records that were picked as support are excluded from novel_test.
FewShotSplit fewshot_split(const Manifest& train, const Manifest& test, std::span<const std::size_t> base_classes,
                           std::span<const std::size_t> novel_classes, std::size_t shots, std::uint64_t seed);

struct SynthSpec {
  std::size_t n = 16;       // training images
  std::size_t n_test = 0;   // extra held-out images from the same classes
  std::size_t classes = 4;
  std::size_t channels = 8;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t embedding_dim = 8;
  std::uint64_t seed = 0;
};

struct SynthDataset {
  Manifest train;
  Manifest test;
  std::vector<Sample> train_samples;
  std::vector<Sample> test_samples;
  Tensor embeddings;
};

/// Planted-signal dataset. Draw order: class channel signs (C*D), blob
/// centres (2 per class), embeddings (C*E normals), then per image: class
/// count, a class shuffle, centre jitter (2 per chosen class) and noise
/// (D*H*W uniforms). Every image has 1-3 positive labels.
SynthDataset synth_dataset(const SynthSpec& spec);
/// Writes features/<id>.mlsg, train.jsonl, test.jsonl and embeddings.txt.
void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace mlsgm::dataio
