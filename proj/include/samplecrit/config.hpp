#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "samplecrit/eval.hpp"
#include "samplecrit/trainer.hpp"

namespace samplecrit {

struct DataPaths {
  std::string train;
  std::string valid;
  std::string vocab;
  /// Generating MarkovSpec, enables KL-to-truth.
  std::string spec;
  std::string checkpoint;
};

struct EvalOptions {
  Normalization normalization = Normalization::kBoth;
  /// "train_noise", "smoothed_unigram" or "auto". Auto corrects BCE-MCS and
  /// BCE-CPS with the smoothed unigram when scoring without normalization
  /// and uses the training noise everywhere else.
  std::string noise_for_correction = "auto";
  std::size_t batch_size = 256;
};

struct GenerateOptions {
  std::size_t states = 1000;
  std::size_t order = 1;
  std::uint64_t spec_seed = 7;
  std::size_t tokens = 1000000;
  /// 0 means tokens / 10.
  std::size_t valid_tokens = 0;
  std::uint64_t seed = 1;
  double end_prob = 0.05;
  std::size_t rank = 4;
  double strength = 1.0;
  double zipf = 1.0;
  bool write_truth = true;
};

struct OracleOptions {
  std::size_t num_classes = 50;
  std::size_t trials = 20;
  std::vector<std::size_t> num_samples = {5, 50};
  std::vector<std::string> criteria;  // empty = all
  std::uint64_t seed = 1;
  double tol = 1e-8;
};

struct BenchOptions {
  std::vector<std::size_t> num_classes = {50000};
  std::vector<std::string> criteria;  // empty = ce plus every sampled kind
  std::size_t warmup = 3;
  std::size_t iters = 10;
};

struct GradCheckOptions {
  std::size_t points = 50;
  double epsilon = 1e-5;
  std::size_t num_classes = 40;
  std::size_t num_samples = 8;
  std::size_t batch_size = 3;
  /// Denominator floor of the relative error.
  double floor = 1.0;
  std::vector<std::string> criteria;  // empty = all
};

/// Everything a subcommand may read. Keys mirror the JSON layout.
struct ExperimentConfig {
  TrainConfig train;
  EvalOptions eval;
  DataPaths data;
  GenerateOptions generate;
  OracleOptions oracle;
  BenchOptions bench;
  GradCheckOptions grad_check;
  std::string output_dir = "out";
  int threads = 1;
  bool resume = false;
  /// Thresholds for --assert, e.g. {"tv": 1e-3}.
  std::map<std::string, double> asserts;

  /// Throws DataError naming the first unknown or ill-typed key.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Parses a config file; a missing file is a DataError.
nlohmann::json read_config_file(const std::string& path);

}  // namespace samplecrit
