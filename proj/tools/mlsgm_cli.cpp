// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

// mlsgm <train|partial|fewshot|eval|gradcheck|synth> [--config FILE] [flags]

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlsgm/error.hpp"
#include "mlsgm/harness.hpp"

namespace {

constexpr int kConfigExit = 2;

nlohmann::json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mlsgm::ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw mlsgm::ConfigError("config " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-label image recognition with instance-label graph matching"};
  std::string subcommand, mode_flag, config_path, seed_text, out, checkpoint, train_manifest, test_manifest;
  app.add_option("command", subcommand, "train | partial | fewshot | eval | gradcheck | synth");
  app.add_option("--mode", mode_flag, "Run mode (overrides the positional mode and the config)");
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed_text, "Seed (falls back to MLSGM_SEED, then 0)");
  app.add_option("--out", out, "Output directory");
  app.add_option("--checkpoint", checkpoint, "Checkpoint directory for eval");
  app.add_option("--train-manifest", train_manifest, "Training manifest (JSONL)");
  app.add_option("--test-manifest", test_manifest, "Test manifest (JSONL)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    nlohmann::json j = config_path.empty() ? nlohmann::json::object() : read_config(config_path);
    if (!j.is_object()) throw mlsgm::ConfigError("config must be a JSON object");
    if (!subcommand.empty()) j["mode"] = subcommand;
    if (!mode_flag.empty()) j["mode"] = mode_flag;
    if (!seed_text.empty()) j["seed"] = seed_text;
    if (!out.empty()) j["out"] = out;
    if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
    if (!train_manifest.empty()) j["train_manifest"] = train_manifest;
    if (!test_manifest.empty()) j["test_manifest"] = test_manifest;
    if (!j.contains("mode")) throw mlsgm::ConfigError("no mode given");
    return mlsgm::harness::run(mlsgm::harness::RunConfig::from_json(j));
  } catch (const mlsgm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
}
