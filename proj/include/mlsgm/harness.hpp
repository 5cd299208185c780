// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run orchestration: configuration, the three training regimes (full labels,
// partial labels, few-shot), evaluation, checkpoints and gradient checks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsgm/dataio.hpp"
#include "mlsgm/metrics.hpp"
#include "mlsgm/model.hpp"

namespace mlsgm::harness {

enum class Mode { kTrain, kEval, kPartial, kFewShot, kGradCheck, kSynth };

Mode parse_mode(const std::string& name);
std::string mode_name(Mode mode);

struct RunConfig {
  Mode mode = Mode::kTrain;
  std::string train_manifest;
  std::string test_manifest;
  std::string checkpoint;
  std::string out = "run";
  std::optional<std::uint64_t> seed;

  // model
  double gamma = 0.5;
  std::size_t k_nn = 3;
  std::vector<std::size_t> widths{16, 8};
  std::size_t mlp_layers = 2;
  csac::ScorePooling pooling = csac::ScorePooling::kMean;

  // optimisation
  double lr = 0.01;
  std::size_t lr_step = 30;
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 60;
  std::size_t accumulate = 16;
  std::size_t eval_every = 1;

  // objectives
  double beta = 0.0;
  losses::PartialBceParams partial;
  losses::FocalParams focal;
  double lambda_aux = 1.0;

  // partial labels
  std::optional<double> known_fraction;

  // few-shot
  std::vector<std::size_t> base_classes;
  std::vector<std::size_t> novel_classes;
  std::size_t shots = 1;
  std::optional<std::size_t> stage2_epochs;
  std::optional<double> stage2_lr;

  // in-memory synthetic data (used when no manifests are given) and `synth` mode
  std::optional<dataio::SynthSpec> synth;

  /// Unknown keys and out-of-range values raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
  /// seed, else MLSGM_SEED from the environment, else 0.
  std::uint64_t resolved_seed() const;
};

struct Dataset {
  std::vector<std::string> categories;
  Tensor embeddings;
  std::vector<dataio::Sample> train;
  std::vector<dataio::Sample> test;
  dataio::Manifest train_manifest;
  dataio::Manifest test_manifest;
};

/// Manifests from disk when configured, otherwise the synthetic spec.
Dataset load_dataset(const RunConfig& config);
Dataset dataset_from_synth(const dataio::SynthDataset& synth);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> mAP;
};

struct TrainOptions {
  std::size_t epochs = 0;
  double lr = 0.01;
  std::size_t lr_step = 30;
  double lr_decay = 0.1;
  SgdOptions sgd;
  std::size_t accumulate = 16;
  std::size_t eval_every = 1;
  std::uint64_t shuffle_seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Sequential per-image SGD. `samples` carry labels over `active` (same
/// order). Each image's loss is objective(p) + lambda_aux * objective(scores),
/// divided by the size of its accumulation window. Images whose labels are
/// all unknown are skipped with a warning on stderr.
std::vector<EpochLog> train_loop(Model& model, const std::vector<dataio::Sample>& samples,
                                 const std::vector<std::size_t>& active, const Objective& objective,
                                 const TrainOptions& options, const std::vector<dataio::Sample>* eval_set = nullptr);

/// N x |active| image-level predictions.
Tensor predict_all(const Model& model, const std::vector<dataio::Sample>& samples,
                   const std::vector<std::size_t>& active);
metrics::EvalReport evaluate_model(const Model& model, const std::vector<dataio::Sample>& samples,
                                   const std::vector<std::size_t>& active);

/// {mAP, CP, CR, CF1, OP, OR, OF1, top3: {...}, per_class_ap: {name: ap}}.
nlohmann::json report_json(const metrics::EvalReport& report, const std::vector<std::string>& category_names);

struct Checkpoint {
  Model model;
  std::vector<std::string> categories;
  std::vector<std::size_t> active;
};

/// dir/index.json plus one tensor file per parameter and the embeddings.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const std::vector<std::string>& categories,
                     const std::vector<std::size_t>& active);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

ModelConfig model_config(const RunConfig& config, const Dataset& data);

struct TrainResult {
  Model model;
  std::vector<std::size_t> active;
  std::vector<EpochLog> log;        // last stage for few-shot
  std::vector<EpochLog> stage1_log; // few-shot only
  metrics::EvalReport report;       // on the evaluation set
  std::vector<std::string> active_names;
  std::size_t skipped_images = 0;
};

TrainResult train(const RunConfig& config, const Dataset& data);
TrainResult train_partial(const RunConfig& config, const Dataset& data);
TrainResult train_fewshot(const RunConfig& config, const Dataset& data);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
  double seconds = 0.0;
};

/// Central-difference step for the end-to-end check. ReLU kinks sit within
/// 1e-4 of some pre-activation often enough to dominate at larger steps.
inline constexpr double kPipelineCheckStep = 1e-5;

/// Finite-difference check of weighted_bce(max_pool(forward)) summed over the
/// synthetic training images (D=8, C=4, H=W=4, 2 images by default), with
/// every parameter perturbed.
GradCheckResult gradient_check(const dataio::SynthSpec& spec, const std::vector<std::size_t>& widths,
                               std::uint64_t seed, double step = kPipelineCheckStep);

/// Writes the artefacts of a run (checkpoint, report.json, per_class_ap.csv,
/// loss_curve.csv, train_report.json) under `out`.
void write_run_outputs(const std::filesystem::path& out, const RunConfig& config, const TrainResult& result);

/// CLI entry: dispatches on config.mode and maps errors to exit codes
/// (0 ok, 1 gradcheck failure or internal error, 2 config error, 3 data error).
int run(const RunConfig& config);

}  // namespace mlsgm::harness
