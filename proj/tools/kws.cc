// Copyright (c) 2026 The kwskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// kws: command-line front end for training, evaluating and running
// keyword spotting models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kws/audio.h"
#include "kws/common.h"
#include "kws/config.h"
#include "kws/container.h"
#include "kws/dataio.h"
#include "kws/detector.h"
#include "kws/evalkit.h"
#include "kws/synthetic.h"
#include "kws/trainer.h"

namespace kws {
namespace {

using nlohmann::json;

constexpr int kBadManifestExit = 2;

void Log(json event) { std::cerr << event.dump() << std::endl; }

// Raised for failures that need a specific exit status.
struct ExitError {
  int status;
  ErrorCode code;
  std::string message;
};

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path + ": " + e.what());
  }
}

// Manifest problems get their own exit status in the cmvn command.
std::vector<ManifestEntry> ReadManifestOrExit(const std::string& path) {
  try {
    auto entries = ReadManifest(path);
    if (entries.empty()) {
      throw Error(ErrorCode::kEmptyManifest, "no entries in " + path);
    }
    return entries;
  } catch (const Error& e) {
    throw ExitError{kBadManifestExit, e.code(), e.what()};
  }
}

struct Options {
  uint64_t seed = 777;
  bool seed_given = false;

  // cmvn / train / score / det / detect / quantize / average
  std::string manifest, config, out, train, dev, dir, model, scores, wav;
  std::string cmvn;
  int num = 30;
  int workers = 1;
  bool resume = false;
  int keyword = -1;
  bool int8 = false;
  std::vector<std::string> thresholds;
  double refractory_ms = 1000.0;
  double chunk_ms = 0.0;

  // synth
  std::string prefix = "set";
  int positives = 10;
  int keywords = 2;
  double negative_seconds = 20.0;
  double stream_seconds = 0.0;
};

int CmdCmvn(const Options& o) {
  FeatureConfig feat;
  if (!o.config.empty()) feat = LoadRunConfig(o.config).model.features;
  const auto entries = ReadManifestOrExit(o.manifest);
  Log({{"event", "cmvn"}, {"manifest", o.manifest}, {"utterances", entries.size()}});
  const CmvnStats stats = ComputeCmvn(entries, feat);
  WriteText(o.out, json(stats).dump(2) + "\n");
  Log({{"event", "wrote"}, {"path", o.out}, {"frames", stats.frame_count}});
  return 0;
}

int CmdTrain(const Options& o) {
  RunConfig cfg = LoadRunConfig(o.config);
  if (o.seed_given) {
    cfg.train.seed = o.seed;
    cfg.model.init_seed = o.seed;
  }
  cfg.train.checkpoint_dir = o.dir;
  cfg.train.num_workers = o.workers;
  cfg.train.resume = o.resume;
  const auto train = ReadManifest(o.train);
  const auto dev = ReadManifest(o.dev);

  CmvnStats cmvn;
  if (!o.cmvn.empty()) {
    try {
      cmvn = ReadJsonFile(o.cmvn).get<CmvnStats>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig, o.cmvn + ": " + e.what());
    }
  } else {
    cmvn = ComputeCmvn(train, cfg.model.features);
  }
  auto model = BuildModel<float>(cfg.model, cmvn);
  Log({{"event", "train"},
       {"params", CountParams(model)},
       {"receptive_field", model.ReceptiveField()},
       {"train", train.size()},
       {"dev", dev.size()},
       {"dir", o.dir}});
  std::filesystem::create_directories(o.dir);
  WriteText((std::filesystem::path(o.dir) / "config.json").string(),
            json(cfg).dump(2) + "\n");
  const auto result =
      Train(model, train, dev, cfg.train, nullptr, [](const EpochRecord& r) {
        json j = ToJson(r);
        j["event"] = "epoch";
        Log(j);
      });
  Log({{"event", "done"},
       {"epochs", result.epochs.size()},
       {"min_duration_frames", result.min_duration_frames}});
  return 0;
}

int CmdAverage(const Options& o) {
  const ModelFile avg = AverageCheckpoints(o.dir, o.num);
  SaveModel(o.out, avg);
  Log({{"event", "average"}, {"path", o.out}, {"epochs", avg.extra["averaged_epochs"]}});
  return 0;
}

ModelFile LoadFloatModel(const std::string& path) {
  const Container c = LoadContainer(path);
  if (c.metadata.value("quantized", false)) {
    throw Error(ErrorCode::kBadContainer,
                path + " is quantized; offline scoring needs a float model");
  }
  return ModelFileFromContainer(c);
}

int CmdScore(const Options& o) {
  ModelFile file = LoadFloatModel(o.model);
  const auto entries = ReadManifest(o.manifest);
  const auto scores = ScoreManifest(file.model, entries);
  WriteScores(o.out, scores);
  Log({{"event", "score"}, {"utterances", scores.size()}, {"path", o.out}});
  return 0;
}

json FrrOrNull(const DetCurve& curve, double fah) {
  try {
    return FrrAtFah(curve, fah);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTargetUnreachable) throw;
    return nullptr;
  }
}

// det.csv becomes det.kw0.csv, det.kw1.csv, ... when every keyword is written.
std::string KeywordPath(const std::string& out, int k) {
  std::filesystem::path p(out);
  const std::string name = p.stem().string() + ".kw" + std::to_string(k) +
                           p.extension().string();
  return (p.parent_path() / name).string();
}

int CmdDet(const Options& o) {
  const auto scores = ReadScores(o.scores);
  if (scores.empty()) throw Error(ErrorCode::kEmptyManifest, "no scores in " + o.scores);
  const int num_keywords = static_cast<int>(scores.front().peak_score.size());
  std::vector<int> keywords;
  if (o.keyword >= 0) {
    if (o.keyword >= num_keywords) {
      throw Error(ErrorCode::kInvalidConfig, "keyword index out of range");
    }
    keywords.push_back(o.keyword);
  } else {
    for (int k = 0; k < num_keywords; ++k) keywords.push_back(k);
  }
  json summary = json::array();
  for (int k : keywords) {
    const DetCurve curve = ComputeDetCurve(scores, k);
    const std::string path = keywords.size() == 1 ? o.out : KeywordPath(o.out, k);
    WriteText(path, DetCsv(curve));
    summary.push_back({{"keyword", k},
                       {"mode", curve.mode},
                       {"csv", path},
                       {"frr_at_fah_0.5", FrrOrNull(curve, 0.5)},
                       {"frr_at_fah_1.0", FrrOrNull(curve, 1.0)}});
  }
  for (const auto& line : summary) std::cout << line.dump() << '\n';
  return 0;
}

// "k=v" where k is a keyword index or name.
void ApplyThreshold(const std::string& spec, const ModelConfig& cfg,
                    std::vector<double>* thresholds) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorCode::kInvalidConfig, "threshold must be k=v: " + spec);
  }
  const std::string key = spec.substr(0, eq);
  int k = -1;
  for (size_t i = 0; i < cfg.keywords.size(); ++i) {
    if (cfg.keywords[i] == key) k = static_cast<int>(i);
  }
  if (k < 0) {
    try {
      size_t used = 0;
      k = std::stoi(key, &used);
      if (used != key.size()) k = -1;
    } catch (const std::exception&) {
      k = -1;
    }
  }
  if (k < 0 || k >= cfg.num_keywords) {
    throw Error(ErrorCode::kInvalidConfig, "unknown keyword in threshold " + spec);
  }
  try {
    (*thresholds)[k] = std::stod(spec.substr(eq + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidConfig, "bad threshold value in " + spec);
  }
}

int CmdDetect(const Options& o) {
  const Container c = LoadContainer(o.model);
  std::optional<StreamModel> model;
  std::vector<double> thresholds;
  if (c.metadata.value("quantized", false)) {
    const QuantizedModel q = QuantizedFromContainer(c);
    thresholds = q.thresholds;
    model.emplace(q);
  } else {
    const ModelFile file = ModelFileFromContainer(c);
    thresholds = file.thresholds;
    if (o.int8) {
      model.emplace(Quantize(file.model, thresholds));
    } else {
      model.emplace(file.model);
    }
  }
  for (const auto& spec : o.thresholds) {
    ApplyThreshold(spec, model->config(), &thresholds);
  }
  const int rate = model->config().features.sample_rate;
  const AudioClip clip = Resample(ReadWav(o.wav), rate);
  DetectorConfig dcfg;
  dcfg.thresholds = thresholds;
  dcfg.refractory_ms = o.refractory_ms;
  const auto chunk = static_cast<size_t>(o.chunk_ms * rate / 1000.0);
  const StreamOutput out = StreamClip(*model, clip, chunk, dcfg);
  for (const auto& d : out.detections) {
    std::cout << json{{"keyword", d.keyword}, {"time_ms", d.time_ms}, {"score", d.score}}
                     .dump()
              << '\n';
  }
  Log({{"event", "detect"},
       {"frames", out.posteriors.frames},
       {"detections", out.detections.size()},
       {"int8", o.int8 || c.metadata.value("quantized", false)}});
  return 0;
}

int CmdQuantize(const Options& o) {
  const ModelFile file = LoadFloatModel(o.model);
  const QuantizedModel q = Quantize(file.model, file.thresholds);
  SaveQuantized(o.out, q);
  Log({{"event", "quantize"}, {"weights", q.scales.size()}, {"path", o.out}});
  return 0;
}

int CmdSynth(const Options& o) {
  SyntheticConfig cfg;
  cfg.seed = o.seed;
  cfg.num_keywords = o.keywords;
  cfg.positives_per_keyword = o.positives;
  cfg.negative_seconds = o.negative_seconds;
  std::filesystem::create_directories(o.out);
  const std::filesystem::path root(o.out);
  if (o.stream_seconds > 0.0) {
    const auto stream = MakeSyntheticStream(o.stream_seconds, 5.0, cfg, o.seed);
    const std::string path = (root / (o.prefix + ".wav")).string();
    WriteWav(path, stream.clip);
    Log({{"event", "synth"}, {"stream", path}, {"keywords", stream.keywords.size()}});
    return 0;
  }
  const auto set = GenerateSynthetic(cfg, o.prefix, (root / o.prefix).string());
  const std::string manifest = (root / (o.prefix + ".jsonl")).string();
  WriteSyntheticSet(set, manifest);
  Log({{"event", "synth"}, {"manifest", manifest}, {"utterances", set.entries.size()}});
  return 0;
}

int Run(int argc, char** argv) {
  CLI::App app{"Keyword spotting: training, evaluation and streaming detection"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  auto* seed = app.add_option("--seed", o.seed, "Seed for all randomness")
                   ->capture_default_str();

  auto* cmvn = app.add_subcommand("cmvn", "Global CMVN statistics of a manifest");
  cmvn->add_option("--manifest", o.manifest)->required();
  cmvn->add_option("--config", o.config, "Run config (for feature settings)");
  cmvn->add_option("--out", o.out)->required();

  auto* train = app.add_subcommand("train", "Train a model, one checkpoint per epoch");
  train->add_option("--config", o.config)->required();
  train->add_option("--train", o.train)->required();
  train->add_option("--dev", o.dev)->required();
  train->add_option("--dir", o.dir)->required();
  train->add_option("--cmvn", o.cmvn, "Precomputed CMVN JSON");
  train->add_option("--workers", o.workers)->capture_default_str();
  train->add_flag("--resume", o.resume, "Continue from the latest checkpoint");

  auto* average = app.add_subcommand("average", "Average the best checkpoints");
  average->add_option("--dir", o.dir)->required();
  average->add_option("--num", o.num)->capture_default_str();
  average->add_option("--out", o.out)->required();

  auto* score = app.add_subcommand("score", "Peak scores of every utterance");
  score->add_option("--model", o.model)->required();
  score->add_option("--manifest", o.manifest)->required();
  score->add_option("--out", o.out)->required();

  auto* det = app.add_subcommand("det", "DET curves from a scores file");
  det->add_option("--scores", o.scores)->required();
  det->add_option("--out", o.out)->required();
  det->add_option("--keyword", o.keyword, "Only this keyword index");

  auto* detect = app.add_subcommand("detect", "Streaming detection on a WAV file");
  detect->add_option("--model", o.model)->required();
  detect->add_option("--wav", o.wav)->required();
  detect->add_flag("--int8", o.int8, "Run with int8 weights");
  detect->add_option("--threshold", o.thresholds, "Per-keyword threshold k=v");
  detect->add_option("--refractory-ms", o.refractory_ms)->capture_default_str();
  detect->add_option("--chunk-ms", o.chunk_ms, "Feed audio in chunks (0: whole)");

  auto* quantize = app.add_subcommand("quantize", "Int8 weight quantization");
  quantize->add_option("--model", o.model)->required();
  quantize->add_option("--out", o.out)->required();

  auto* synth = app.add_subcommand("synth", "Synthetic tone-keyword data");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--prefix", o.prefix)->capture_default_str();
  synth->add_option("--positives", o.positives, "Per keyword")->capture_default_str();
  synth->add_option("--keywords", o.keywords)->capture_default_str();
  synth->add_option("--negative-seconds", o.negative_seconds)->capture_default_str();
  synth->add_option("--stream-seconds", o.stream_seconds,
                    "Write one long stream WAV instead of a labelled set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", e.what()}, {"code", "usage"}}.dump() << std::endl;
    return 1;
  }
  o.seed_given = seed->count() > 0;

  try {
    if (cmvn->parsed()) return CmdCmvn(o);
    if (train->parsed()) return CmdTrain(o);
    if (average->parsed()) return CmdAverage(o);
    if (score->parsed()) return CmdScore(o);
    if (det->parsed()) return CmdDet(o);
    if (detect->parsed()) return CmdDetect(o);
    if (quantize->parsed()) return CmdQuantize(o);
    if (synth->parsed()) return CmdSynth(o);
  } catch (const ExitError& e) {
    std::cerr << json{{"error", e.message}, {"code", ErrorCodeName(e.code)}}.dump()
              << std::endl;
    return e.status;
  } catch (const Error& e) {
    std::cerr << json{{"error", e.what()}, {"code", ErrorCodeName(e.code())}}.dump()
              << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"code", "internal"}}.dump() << std::endl;
    return 1;
  }
  return 1;
}

}  // namespace
}  // namespace kws

int main(int argc, char** argv) { return kws::Run(argc, argv); }
