// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "mlsgm/error.hpp"

namespace mlsgm::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "mlsgm-checkpoint";
constexpr int kCheckpointVersion = 1;

// Independent seed streams derived from the run seed.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kDropStream = 0x44524f50ULL;
constexpr std::uint64_t kSplitStream = 0x53504c4954ULL;
constexpr std::uint64_t kStage2Stream = 0x5354324bULL;

const std::map<std::string, Mode, std::less<>>& mode_table() {
  static const std::map<std::string, Mode, std::less<>> table{
      {"train", Mode::kTrain},         {"eval", Mode::kEval},   {"partial", Mode::kPartial},
      {"fewshot", Mode::kFewShot},     {"gradcheck", Mode::kGradCheck}, {"synth", Mode::kSynth}};
  return table;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::vector<std::size_t> get_counts(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array");
  std::vector<std::size_t> out;
  for (const auto& x : v) out.push_back(get_count(x, key));
  return out;
}

std::uint64_t parse_seed(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used, 0);
  } catch (const std::exception&) {
    throw ConfigError(what + " is not an unsigned integer: '" + text + "'");
  }
  if (used != text.size() || text.starts_with('-')) throw ConfigError(what + " is not an unsigned integer: '" + text + "'");
  return v;
}

dataio::SynthSpec synth_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config key 'synth' must be an object");
  dataio::SynthSpec s;
  for (const auto& [key, v] : j.items()) {
    const std::string where = "synth." + key;
    if (key == "n") s.n = get_count(v, where);
    else if (key == "n_test") s.n_test = get_count(v, where);
    else if (key == "classes") s.classes = get_count(v, where);
    else if (key == "channels") s.channels = get_count(v, where);
    else if (key == "height") s.height = get_count(v, where);
    else if (key == "width") s.width = get_count(v, where);
    else if (key == "embedding_dim") s.embedding_dim = get_count(v, where);
    else if (key == "seed") s.seed = get_count(v, where);
    else throw ConfigError("unknown config key '" + where + "'");
  }
  return s;
}

json synth_to_json(const dataio::SynthSpec& s) {
  return json{{"n", s.n},           {"n_test", s.n_test},
              {"classes", s.classes}, {"channels", s.channels},
              {"height", s.height},   {"width", s.width},
              {"embedding_dim", s.embedding_dim}, {"seed", s.seed}};
}

csac::ScorePooling parse_pooling(const std::string& name) {
  if (name == "mean") return csac::ScorePooling::kMean;
  if (name == "max") return csac::ScorePooling::kMax;
  throw ConfigError("score_pooling must be 'mean' or 'max', got '" + name + "'");
}

std::string pooling_name(csac::ScorePooling p) { return p == csac::ScorePooling::kMean ? "mean" : "max"; }

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool all_unknown(const losses::TriStateLabels& y) {
  return std::all_of(y.begin(), y.end(), [](int v) { return v == 0; });
}

std::vector<losses::TriStateLabels> labels_of(const std::vector<dataio::Sample>& samples) {
  std::vector<losses::TriStateLabels> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.labels);
  return out;
}

std::vector<std::string> names_of(const std::vector<std::string>& categories, const std::vector<std::size_t>& active) {
  std::vector<std::string> out;
  for (auto c : active) out.push_back(categories.at(c));
  return out;
}

std::optional<double> try_map(const Model& model, const std::vector<dataio::Sample>& samples,
                              const std::vector<std::size_t>& active) {
  if (samples.empty()) return std::nullopt;
  try {
    return evaluate_model(model, samples, active).mAP;
  } catch (const metrics::UndefinedClassError&) {
    return std::nullopt;
  }
}

TrainOptions train_options(const RunConfig& config, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = config.epochs;
  o.lr = config.lr;
  o.lr_step = config.lr_step;
  o.lr_decay = config.lr_decay;
  o.sgd.momentum = config.momentum;
  o.sgd.weight_decay = config.weight_decay;
  o.accumulate = config.accumulate;
  o.eval_every = config.eval_every;
  o.shuffle_seed = seed ^ kShuffleStream;
  return o;
}

Objective weighted_objective(const RunConfig& config, const std::vector<dataio::Sample>& samples, std::size_t classes) {
  Objective obj;
  obj.kind = ObjectiveKind::kWeightedBce;
  const auto labels = labels_of(samples);
  obj.priors = losses::class_priors(labels, classes);
  obj.beta = config.beta;
  obj.lambda_aux = config.lambda_aux;
  return obj;
}

const std::vector<dataio::Sample>& eval_samples(const Dataset& data) {
  return data.test.empty() ? data.train : data.test;
}

std::size_t count_unknown_images(const std::vector<dataio::Sample>& samples) {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const dataio::Sample& s) { return all_unknown(s.labels); }));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

json log_json(const std::vector<EpochLog>& log) {
  json out = json::array();
  for (const auto& e : log) {
    json row{{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}};
    row["mAP"] = e.mAP ? json(*e.mAP) : json(nullptr);
    out.push_back(row);
  }
  return out;
}

}  // namespace

Mode parse_mode(const std::string& name) {
  const auto& t = mode_table();
  if (auto it = t.find(name); it != t.end()) return it->second;
  throw ConfigError("unknown mode '" + name + "' (expected train, partial, fewshot, eval, gradcheck or synth)");
}

std::string mode_name(Mode mode) {
  for (const auto& [name, m] : mode_table())
    if (m == mode) return name;
  return "train";
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  bool widths_set = false;
  std::optional<std::size_t> k_blocks;
  for (const auto& [key, v] : j.items()) {
    if (key == "mode") c.mode = parse_mode(get_as<std::string>(v, key));
    else if (key == "train_manifest") c.train_manifest = get_as<std::string>(v, key);
    else if (key == "test_manifest") c.test_manifest = get_as<std::string>(v, key);
    else if (key == "checkpoint") c.checkpoint = get_as<std::string>(v, key);
    else if (key == "out") c.out = get_as<std::string>(v, key);
    else if (key == "seed") {
      if (v.is_string()) c.seed = parse_seed(v.get<std::string>(), "seed");
      else c.seed = get_count(v, key);
    } else if (key == "gamma") c.gamma = get_as<double>(v, key);
    else if (key == "k_nn") c.k_nn = get_count(v, key);
    else if (key == "widths") {
      c.widths = get_counts(v, key);
      widths_set = true;
    } else if (key == "k_blocks") k_blocks = get_count(v, key);
    else if (key == "mlp_layers") c.mlp_layers = get_count(v, key);
    else if (key == "score_pooling") c.pooling = parse_pooling(get_as<std::string>(v, key));
    else if (key == "lr") c.lr = get_as<double>(v, key);
    else if (key == "lr_step") c.lr_step = get_count(v, key);
    else if (key == "lr_decay") c.lr_decay = get_as<double>(v, key);
    else if (key == "momentum") c.momentum = get_as<double>(v, key);
    else if (key == "weight_decay") c.weight_decay = get_as<double>(v, key);
    else if (key == "epochs") c.epochs = get_count(v, key);
    else if (key == "accumulate" || key == "batch_size") c.accumulate = get_count(v, key);
    else if (key == "eval_every") c.eval_every = get_count(v, key);
    else if (key == "beta") c.beta = get_as<double>(v, key);
    else if (key == "alpha") c.partial.alpha = get_as<double>(v, key);
    else if (key == "theta") c.partial.theta = get_as<double>(v, key);
    else if (key == "mu") c.partial.mu = get_as<double>(v, key);
    else if (key == "gamma_pos") c.focal.gamma_pos = get_as<double>(v, key);
    else if (key == "gamma_neg") c.focal.gamma_neg = get_as<double>(v, key);
    else if (key == "margin") c.focal.margin = get_as<double>(v, key);
    else if (key == "lambda_aux") c.lambda_aux = get_as<double>(v, key);
    else if (key == "known_fraction") c.known_fraction = get_as<double>(v, key);
    else if (key == "base_classes") c.base_classes = get_counts(v, key);
    else if (key == "novel_classes") c.novel_classes = get_counts(v, key);
    else if (key == "shots") c.shots = get_count(v, key);
    else if (key == "stage2_epochs") c.stage2_epochs = get_count(v, key);
    else if (key == "stage2_lr") c.stage2_lr = get_as<double>(v, key);
    else if (key == "synth") c.synth = synth_from_json(v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (k_blocks) {
    require(*k_blocks > 0, "k_blocks must be positive");
    if (widths_set) {
      require(c.widths.size() == *k_blocks, "k_blocks disagrees with the number of block widths");
    } else {
      const std::size_t last = c.widths.back();
      c.widths.resize(*k_blocks, last);
    }
  }
  return c;
}

json RunConfig::to_json() const {
  json j{{"mode", mode_name(mode)},
         {"train_manifest", train_manifest},
         {"test_manifest", test_manifest},
         {"checkpoint", checkpoint},
         {"out", out},
         {"gamma", gamma},
         {"k_nn", k_nn},
         {"widths", widths},
         {"k_blocks", widths.size()},
         {"mlp_layers", mlp_layers},
         {"score_pooling", pooling_name(pooling)},
         {"lr", lr},
         {"lr_step", lr_step},
         {"lr_decay", lr_decay},
         {"momentum", momentum},
         {"weight_decay", weight_decay},
         {"epochs", epochs},
         {"accumulate", accumulate},
         {"eval_every", eval_every},
         {"beta", beta},
         {"alpha", partial.alpha},
         {"theta", partial.theta},
         {"mu", partial.mu},
         {"gamma_pos", focal.gamma_pos},
         {"gamma_neg", focal.gamma_neg},
         {"margin", focal.margin},
         {"lambda_aux", lambda_aux},
         {"base_classes", base_classes},
         {"novel_classes", novel_classes},
         {"shots", shots}};
  j["seed"] = resolved_seed();
  if (known_fraction) j["known_fraction"] = *known_fraction;
  if (stage2_epochs) j["stage2_epochs"] = *stage2_epochs;
  if (stage2_lr) j["stage2_lr"] = *stage2_lr;
  if (synth) j["synth"] = synth_to_json(*synth);
  return j;
}

void RunConfig::validate() const {
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(k_nn > 0, "k_nn must be positive");
  require(!widths.empty(), "at least one block width is required");
  require(std::all_of(widths.begin(), widths.end(), [](std::size_t w) { return w > 0; }),
          "block widths must be positive");
  require(mlp_layers > 0, "mlp_layers must be positive");
  require(lr > 0.0, "lr must be positive");
  require(lr_step > 0, "lr_step must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must lie in (0, 1]");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(accumulate > 0, "accumulate must be positive");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  require(partial.mu >= 0.0, "mu must be non-negative");
  require(focal.gamma_pos >= 0.0 && focal.gamma_neg >= 0.0, "focal exponents must be non-negative");
  require(focal.margin >= 0.0 && focal.margin < 1.0, "margin must lie in [0, 1)");
  require(lambda_aux >= 0.0, "lambda_aux must be non-negative");
  if (synth) {
    require(synth->n > 0 && synth->classes > 0 && synth->channels > 0 && synth->height > 0 && synth->width > 0 &&
                synth->embedding_dim > 0,
            "synth extents must be positive");
  }
  const bool has_data = !train_manifest.empty() || synth.has_value();
  switch (mode) {
    case Mode::kTrain:
      require(has_data, "train needs train_manifest or synth");
      break;
    case Mode::kPartial:
      require(has_data, "partial needs train_manifest or synth");
      require(known_fraction.has_value(), "partial needs known_fraction");
      require(*known_fraction >= 0.0 && *known_fraction <= 1.0, "known_fraction must lie in [0, 1]");
      break;
    case Mode::kFewShot: {
      require(has_data, "fewshot needs train_manifest or synth");
      require(!base_classes.empty() && !novel_classes.empty(), "fewshot needs base_classes and novel_classes");
      require(shots > 0, "shots must be positive");
      std::set<std::size_t> seen;
      for (auto c : base_classes) require(seen.insert(c).second, "duplicate class in base_classes/novel_classes");
      for (auto c : novel_classes) require(seen.insert(c).second, "duplicate class in base_classes/novel_classes");
      if (stage2_lr) require(*stage2_lr > 0.0, "stage2_lr must be positive");
      break;
    }
    case Mode::kEval:
      require(!checkpoint.empty(), "eval needs checkpoint");
      require(!test_manifest.empty() || has_data, "eval needs test_manifest, train_manifest or synth");
      break;
    case Mode::kGradCheck:
    case Mode::kSynth:
      break;
  }
  require(!out.empty(), "out must not be empty");
}

std::uint64_t RunConfig::resolved_seed() const {
  if (seed) return *seed;
  if (const char* env = std::getenv("MLSGM_SEED"); env && *env) return parse_seed(env, "MLSGM_SEED");
  return 0;
}

Dataset dataset_from_synth(const dataio::SynthDataset& synth) {
  Dataset d;
  d.categories = synth.train.categories;
  d.embeddings = synth.embeddings;
  d.train = synth.train_samples;
  d.test = synth.test_samples;
  d.train_manifest = synth.train;
  d.test_manifest = synth.test;
  return d;
}

Dataset load_dataset(const RunConfig& config) {
  if (config.train_manifest.empty() && config.test_manifest.empty())
    return dataset_from_synth(dataio::synth_dataset(config.synth.value_or(dataio::SynthSpec{})));
  Dataset d;
  const std::string& head_path = config.train_manifest.empty() ? config.test_manifest : config.train_manifest;
  const auto head = dataio::read_manifest(head_path);
  d.categories = head.categories;
  d.embeddings = dataio::load_embeddings(head);
  if (!config.train_manifest.empty()) {
    d.train_manifest = head;
    d.train = dataio::load_samples(head);
  }
  if (!config.test_manifest.empty()) {
    d.test_manifest = dataio::read_manifest(config.test_manifest);
    if (d.test_manifest.categories != d.categories)
      throw DataError("test manifest categories differ from the train manifest");
    d.test = dataio::load_samples(d.test_manifest);
  }
  return d;
}

std::vector<EpochLog> train_loop(Model& model, const std::vector<dataio::Sample>& samples,
                                 const std::vector<std::size_t>& active, const Objective& objective,
                                 const TrainOptions& options, const std::vector<dataio::Sample>* eval_set) {
  if (options.accumulate == 0) throw ConfigError("accumulate must be positive");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].labels.size() != active.size())
      throw DataError("record '" + samples[i].id + "' has " + std::to_string(samples[i].labels.size()) +
                      " labels, expected " + std::to_string(active.size()));
    if (all_unknown(samples[i].labels)) {
      std::cerr << "warning: skipping record '" << samples[i].id << "': every label is unknown\n";
      continue;
    }
    order.push_back(i);
  }

  ParamStore& store = model.params();
  store.zero_grad();
  SplitMix64 rng(options.shuffle_seed);
  std::vector<EpochLog> log;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = step_learning_rate(options.lr, epoch, options.lr_step, options.lr_decay);
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.accumulate) {
      const std::size_t stop = std::min(order.size(), start + options.accumulate);
      const double inv_window = 1.0 / static_cast<double>(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = samples[order[k]];
        ad::Tape tape(&store);
        const auto fwd = model.forward(tape, s.features, active);
        ad::Var loss = objective(fwd.prediction, s.labels);
        if (objective.lambda_aux != 0.0)
          loss = ad::add(loss, ad::scale(objective(fwd.class_scores, s.labels), objective.lambda_aux));
        total += loss.value()(0, 0);
        tape.backward(ad::scale(loss, inv_window));
      }
      sgd_step(store, lr, options.sgd);
    }
    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.loss = order.empty() ? 0.0 : total / static_cast<double>(order.size());
    const bool last = epoch + 1 == options.epochs;
    if (eval_set && (last || (options.eval_every > 0 && (epoch + 1) % options.eval_every == 0)))
      e.mAP = try_map(model, *eval_set, active);
    if (options.on_epoch) options.on_epoch(e);
    log.push_back(e);
  }
  return log;
}

Tensor predict_all(const Model& model, const std::vector<dataio::Sample>& samples,
                   const std::vector<std::size_t>& active) {
  Tensor out = Tensor::matrix(samples.size(), active.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto p = model.predict(samples[i].features, active);
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

metrics::EvalReport evaluate_model(const Model& model, const std::vector<dataio::Sample>& samples,
                                   const std::vector<std::size_t>& active) {
  const auto scores = predict_all(model, samples, active);
  const auto labels = labels_of(samples);
  return metrics::evaluate(scores, labels);
}

json report_json(const metrics::EvalReport& report, const std::vector<std::string>& category_names) {
  auto pr = [](const metrics::PrecisionRecall& m) {
    return json{{"CP", m.CP}, {"CR", m.CR}, {"CF1", m.CF1}, {"OP", m.OP}, {"OR", m.OR}, {"OF1", m.OF1}};
  };
  json j = pr(report.all);
  j["mAP"] = report.mAP;
  j["top3"] = pr(report.top3);
  json per = json::object();
  for (std::size_t c = 0; c < report.per_class_ap.size(); ++c) {
    const std::string name = c < category_names.size() ? category_names[c] : std::to_string(c);
    per[name] = report.per_class_ap[c] ? json(*report.per_class_ap[c]) : json(nullptr);
  }
  j["per_class_ap"] = per;
  return j;
}

void save_checkpoint(const fs::path& dir, const Model& model, const std::vector<std::string>& categories,
                     const std::vector<std::size_t>& active) {
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw DataError("cannot create " + (dir / "params").string() + ": " + ec.message());
  const auto& cfg = model.config();
  json index{{"format", kCheckpointFormat},
             {"version", kCheckpointVersion},
             {"model",
              {{"channels", cfg.channels},
               {"classes", cfg.classes},
               {"embedding_dim", cfg.embedding_dim},
               {"widths", cfg.widths},
               {"mlp_layers", cfg.mlp_layers},
               {"gamma", cfg.gamma},
               {"k_nn", cfg.k_nn},
               {"score_pooling", pooling_name(cfg.pooling)}}},
             {"categories", categories},
             {"active", active},
             {"embeddings", "embeddings.mlsg"}};
  dataio::save_tensor(model.embeddings(), dir / "embeddings.mlsg");
  json params = json::array();
  for (const auto& p : model.params().params()) {
    const std::string file = "params/" + p.name + ".mlsg";
    dataio::save_tensor(p.value, dir / file);
    params.push_back(json{{"name", p.name}, {"file", file}, {"shape", p.value.shape()}});
  }
  index["params"] = params;
  write_text(dir / "index.json", index.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const json index = read_json_file(dir / "index.json");
  try {
    if (index.at("format") != kCheckpointFormat || index.at("version") != kCheckpointVersion)
      throw DataError("unsupported checkpoint format in " + dir.string());
    const auto& m = index.at("model");
    ModelConfig cfg;
    cfg.channels = m.at("channels").get<std::size_t>();
    cfg.classes = m.at("classes").get<std::size_t>();
    cfg.embedding_dim = m.at("embedding_dim").get<std::size_t>();
    cfg.widths = m.at("widths").get<std::vector<std::size_t>>();
    cfg.mlp_layers = m.at("mlp_layers").get<std::size_t>();
    cfg.gamma = m.at("gamma").get<double>();
    cfg.k_nn = m.at("k_nn").get<std::size_t>();
    cfg.pooling = parse_pooling(m.at("score_pooling").get<std::string>());
    auto categories = index.at("categories").get<std::vector<std::string>>();
    auto active = index.at("active").get<std::vector<std::size_t>>();
    if (categories.size() != cfg.classes) throw DataError("checkpoint categories do not match its class count");
    for (auto c : active)
      if (c >= cfg.classes) throw DataError("checkpoint active class out of range");
    Tensor embeddings = dataio::load_tensor(dir / index.at("embeddings").get<std::string>());

    ParamStore store;
    for (const auto& entry : index.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      Tensor value = dataio::load_tensor(dir / entry.at("file").get<std::string>());
      if (value.shape() != entry.at("shape").get<std::vector<std::size_t>>())
        throw DataError("checkpoint tensor '" + name + "' does not match its index shape");
      store.add(name, std::move(value));
    }
    const std::size_t expected = Model(cfg, embeddings, std::uint64_t{0}).params().size();
    if (store.size() != expected)
      throw DataError("checkpoint holds " + std::to_string(store.size()) + " parameters, model needs " +
                      std::to_string(expected));
    try {
      return Checkpoint{Model(cfg, std::move(embeddings), std::move(store)), std::move(categories), std::move(active)};
    } catch (const ShapeError& e) {
      throw DataError(std::string("checkpoint does not match its index: ") + e.what());
    } catch (const StateError& e) {
      throw DataError(std::string("checkpoint does not match its index: ") + e.what());
    }
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint index " + (dir / "index.json").string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("malformed checkpoint index " + (dir / "index.json").string() + ": " + e.what());
  }
}

ModelConfig model_config(const RunConfig& config, const Dataset& data) {
  const auto& samples = data.train.empty() ? data.test : data.train;
  if (samples.empty()) throw DataError("dataset has no records");
  const auto& f = samples.front().features;
  if (f.rank() != 3) throw DataError("record '" + samples.front().id + "' features are not D x H x W");
  ModelConfig cfg;
  cfg.channels = f.shape()[0];
  cfg.classes = data.categories.size();
  cfg.embedding_dim = data.embeddings.cols();
  cfg.widths = config.widths;
  cfg.mlp_layers = config.mlp_layers;
  cfg.gamma = config.gamma;
  cfg.k_nn = config.k_nn;
  cfg.pooling = config.pooling;
  for (const auto& s : samples)
    if (s.features.rank() != 3 || s.features.shape()[0] != cfg.channels)
      throw DataError("record '" + s.id + "' features have shape " + shape_string(s.features.shape()) +
                      ", expected " + std::to_string(cfg.channels) + " channels");
  return cfg;
}

TrainResult train(const RunConfig& config, const Dataset& data) {
  if (data.train.empty()) throw DataError("training set is empty");
  const std::uint64_t seed = config.resolved_seed();
  const auto cfg = model_config(config, data);
  for (const auto& s : data.train)
    if (std::any_of(s.labels.begin(), s.labels.end(), [](int v) { return v == 0; }))
      throw DataError("record '" + s.id + "' has unknown labels; train needs full labels");
  TrainResult r{Model(cfg, data.embeddings, seed), all_classes(cfg.classes), {}, {}, {}, data.categories, 0};
  const auto objective = weighted_objective(config, data.train, cfg.classes);
  const auto& eval = eval_samples(data);
  r.log = train_loop(r.model, data.train, r.active, objective, train_options(config, seed), &eval);
  r.model.params().round_to_storage_precision();
  r.report = evaluate_model(r.model, eval, r.active);
  return r;
}

TrainResult train_partial(const RunConfig& config, const Dataset& data) {
  if (data.train.empty()) throw DataError("training set is empty");
  if (!config.known_fraction) throw ConfigError("partial needs known_fraction");
  const std::uint64_t seed = config.resolved_seed();
  const auto cfg = model_config(config, data);
  auto samples = data.train;
  dataio::drop_labels(samples, *config.known_fraction, seed ^ kDropStream);
  TrainResult r{Model(cfg, data.embeddings, seed), all_classes(cfg.classes), {}, {}, {}, data.categories, 0};
  r.skipped_images = count_unknown_images(samples);
  Objective objective;
  objective.kind = ObjectiveKind::kPartialBce;
  objective.partial = config.partial;
  objective.lambda_aux = config.lambda_aux;
  const auto& eval = eval_samples(data);
  r.log = train_loop(r.model, samples, r.active, objective, train_options(config, seed), &eval);
  r.model.params().round_to_storage_precision();
  r.report = evaluate_model(r.model, eval, r.active);
  return r;
}

TrainResult train_fewshot(const RunConfig& config, const Dataset& data) {
  if (data.train.empty()) throw DataError("training set is empty");
  const std::uint64_t seed = config.resolved_seed();
  const auto cfg = model_config(config, data);
  for (auto c : config.base_classes)
    if (c >= cfg.classes) throw ConfigError("base class " + std::to_string(c) + " out of range");
  for (auto c : config.novel_classes)
    if (c >= cfg.classes) throw ConfigError("novel class " + std::to_string(c) + " out of range");

  const bool has_test = !data.test.empty();
  const auto& test_manifest = has_test ? data.test_manifest : data.train_manifest;
  const auto split = dataio::fewshot_split(data.train_manifest, test_manifest, config.base_classes,
                                           config.novel_classes, config.shots, seed ^ kSplitStream);

  std::map<std::string, const dataio::Sample*> train_by_id, test_by_id;
  for (const auto& s : data.train) train_by_id[s.id] = &s;
  for (const auto& s : has_test ? data.test : data.train) test_by_id[s.id] = &s;
  auto pick = [](const std::map<std::string, const dataio::Sample*>& by_id, const dataio::Manifest& m) {
    std::vector<dataio::Sample> out;
    for (const auto& rec : m.records) {
      auto it = by_id.find(rec.id);
      if (it == by_id.end()) throw DataError("record '" + rec.id + "' has no loaded features");
      out.push_back(dataio::Sample{rec.id, it->second->features, rec.labels});
    }
    return out;
  };
  const auto base_set = pick(train_by_id, split.base_set);
  const auto support = pick(train_by_id, split.novel_support);
  const auto novel_test = pick(test_by_id, split.novel_test);
  if (novel_test.empty()) throw DataError("few-shot split left no novel test records");

  TrainResult r{Model(cfg, data.embeddings, seed), config.novel_classes, {}, {}, {}, {}, 0};
  r.active_names = names_of(data.categories, r.active);

  // Stage 1: base classes, full labels.
  const auto stage1_objective = weighted_objective(config, base_set, config.base_classes.size());
  r.stage1_log = train_loop(r.model, base_set, config.base_classes, stage1_objective, train_options(config, seed));

  // Stage 2: novel support, base classifier rows frozen, fresh momentum.
  ParamStore& store = r.model.params();
  for (auto& p : store.params()) p.momentum.fill(0.0);
  for (auto c : config.base_classes) {
    store.set_frozen_rows(kClassifierWeight, c, c + 1);
    store.set_frozen_rows(kClassifierBias, c, c + 1);
  }
  Objective stage2_objective;
  stage2_objective.kind = ObjectiveKind::kAsymmetricFocal;
  stage2_objective.focal = config.focal;
  stage2_objective.lambda_aux = config.lambda_aux;
  auto options = train_options(config, seed ^ kStage2Stream);
  if (config.stage2_epochs) options.epochs = *config.stage2_epochs;
  if (config.stage2_lr) options.lr = *config.stage2_lr;
  r.log = train_loop(r.model, support, r.active, stage2_objective, options, &novel_test);
  store.clear_frozen();
  store.round_to_storage_precision();
  r.report = evaluate_model(r.model, novel_test, r.active);
  return r;
}

GradCheckResult gradient_check(const dataio::SynthSpec& spec, const std::vector<std::size_t>& widths,
                               std::uint64_t seed, double step) {
  const auto start = std::chrono::steady_clock::now();
  const auto data = dataio::synth_dataset(spec);
  ModelConfig cfg;
  cfg.channels = spec.channels;
  cfg.classes = spec.classes;
  cfg.embedding_dim = spec.embedding_dim;
  cfg.widths = widths;
  Model model(cfg, data.embeddings, seed);
  const auto active = all_classes(cfg.classes);
  const auto priors = losses::class_priors(labels_of(data.train_samples), cfg.classes);

  // Selections are piecewise constant in the parameters; hold them at the
  // unperturbed values so the check sees a smooth function.
  std::vector<Selection> selections;
  for (const auto& s : data.train_samples) {
    ad::Tape tape(std::as_const(model).params());
    selections.push_back(model.forward(tape, s.features, active).selection);
  }
  auto loss_fn = [&](ad::Tape& tape) {
    ad::Var total;
    for (std::size_t i = 0; i < data.train_samples.size(); ++i) {
      const auto& s = data.train_samples[i];
      const auto fwd = model.forward(tape, s.features, active, &selections[i]);
      auto l = losses::weighted_bce(fwd.prediction, losses::to_binary(s.labels), priors, 0.0);
      total = total.valid() ? ad::add(total, l) : l;
    }
    return total;
  };
  GradCheckResult r;
  r.max_rel_error = ad::finite_diff_check(model.params(), loss_fn, step);
  r.parameters = model.params().scalar_count();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void write_run_outputs(const fs::path& out, const RunConfig& config, const TrainResult& result) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
  const auto& model = result.model;
  std::vector<std::string> categories;
  if (config.mode == Mode::kFewShot || result.active_names.size() != model.config().classes) {
    // Full category list is needed to name classifier rows.
    categories.resize(model.config().classes);
    for (std::size_t c = 0; c < categories.size(); ++c) categories[c] = "class" + std::to_string(c);
    for (std::size_t k = 0; k < result.active.size(); ++k) categories[result.active[k]] = result.active_names[k];
  } else {
    categories = result.active_names;
  }
  save_checkpoint(out / "checkpoint", model, categories, result.active);

  write_text(out / "report.json", report_json(result.report, result.active_names).dump(2) + "\n");

  std::string csv = "class,ap\n";
  for (std::size_t c = 0; c < result.report.per_class_ap.size(); ++c) {
    csv += result.active_names.at(c) + ",";
    if (result.report.per_class_ap[c]) csv += format_double(*result.report.per_class_ap[c]);
    csv += "\n";
  }
  write_text(out / "per_class_ap.csv", csv);

  std::string curve = "stage,epoch,lr,loss,mAP\n";
  auto add_rows = [&](int stage, const std::vector<EpochLog>& log) {
    for (const auto& e : log)
      curve += std::to_string(stage) + "," + std::to_string(e.epoch) + "," + format_double(e.lr) + "," +
               format_double(e.loss) + "," + (e.mAP ? format_double(*e.mAP) : std::string()) + "\n";
  };
  if (config.mode == Mode::kFewShot) {
    add_rows(1, result.stage1_log);
    add_rows(2, result.log);
  } else {
    add_rows(1, result.log);
  }
  write_text(out / "loss_curve.csv", curve);

  json train_report{{"mode", mode_name(config.mode)},
                    {"seed", config.resolved_seed()},
                    {"config", config.to_json()},
                    {"classes", result.active_names},
                    {"skipped_images", result.skipped_images},
                    {"log", log_json(result.log)},
                    {"metrics", report_json(result.report, result.active_names)}};
  if (config.known_fraction) train_report["known_fraction"] = *config.known_fraction;
  if (config.mode == Mode::kFewShot) {
    train_report["stage1_log"] = log_json(result.stage1_log);
    train_report["shots"] = config.shots;
  }
  write_text(out / "train_report.json", train_report.dump(2) + "\n");
}

namespace {

int run_eval(const RunConfig& config) {
  auto ck = load_checkpoint(config.checkpoint);
  Dataset data;
  if (!config.test_manifest.empty()) {
    RunConfig c = config;
    c.train_manifest.clear();
    data = load_dataset(c);
  } else {
    data = load_dataset(config);
  }
  const auto& samples = data.test.empty() ? data.train : data.test;
  if (samples.empty()) throw DataError("evaluation set is empty");
  const auto names = names_of(ck.categories, ck.active);

  std::vector<dataio::Sample> eval;
  if (data.categories == ck.categories) {
    eval = dataio::restrict_columns(samples, ck.active);
  } else if (data.categories == names) {
    eval = samples;
  } else {
    throw DataError("evaluation categories do not match the checkpoint");
  }
  const auto report = evaluate_model(ck.model, eval, ck.active);
  fs::create_directories(config.out);
  write_text(fs::path(config.out) / "report.json", report_json(report, names).dump(2) + "\n");
  std::string csv = "class,ap\n";
  for (std::size_t c = 0; c < report.per_class_ap.size(); ++c) {
    csv += names[c] + ",";
    if (report.per_class_ap[c]) csv += format_double(*report.per_class_ap[c]);
    csv += "\n";
  }
  write_text(fs::path(config.out) / "per_class_ap.csv", csv);
  std::cout << "mAP " << format_double(report.mAP) << "\n";
  return 0;
}

int run_gradcheck(const RunConfig& config) {
  dataio::SynthSpec spec;
  spec.n = 2;
  spec.classes = 4;
  spec.channels = 8;
  spec.height = 4;
  spec.width = 4;
  spec.seed = config.resolved_seed();
  if (config.synth) spec = *config.synth;
  const auto r = gradient_check(spec, config.widths, config.resolved_seed());
  const bool ok = r.max_rel_error < 1e-3;
  json j{{"max_rel_error", r.max_rel_error}, {"parameters", r.parameters}, {"pass", ok}};
  std::cout << j.dump() << "\n";
  return ok ? 0 : 1;
}

int run_synth(const RunConfig& config) {
  dataio::SynthSpec spec;
  spec.seed = config.resolved_seed();
  if (config.synth) spec = *config.synth;
  dataio::write_dataset(dataio::synth_dataset(spec), config.out);
  std::cout << "wrote synthetic dataset to " << config.out << "\n";
  return 0;
}

int run_training(const RunConfig& config) {
  const auto data = load_dataset(config);
  TrainResult result = config.mode == Mode::kTrain     ? train(config, data)
                       : config.mode == Mode::kPartial ? train_partial(config, data)
                                                       : train_fewshot(config, data);
  write_run_outputs(config.out, config, result);
  for (const auto& e : result.log)
    std::cout << "epoch " << e.epoch << " lr " << format_double(e.lr) << " loss " << format_double(e.loss)
              << (e.mAP ? " mAP " + format_double(*e.mAP) : std::string()) << "\n";
  std::cout << "mAP " << format_double(result.report.mAP) << "\n";
  return 0;
}

}  // namespace

int run(const RunConfig& config) {
  try {
    config.validate();
    switch (config.mode) {
      case Mode::kTrain:
      case Mode::kPartial:
      case Mode::kFewShot:
        return run_training(config);
      case Mode::kEval:
        return run_eval(config);
      case Mode::kGradCheck:
        return run_gradcheck(config);
      case Mode::kSynth:
        return run_synth(config);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const metrics::UndefinedClassError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mlsgm::harness
