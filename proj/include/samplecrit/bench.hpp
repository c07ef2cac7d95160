#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "samplecrit/criteria.hpp"
#include "samplecrit/model.hpp"
#include "samplecrit/noise.hpp"

namespace samplecrit {

struct BenchSetup {
  std::size_t num_classes = 50000;
  std::size_t batch_size = 64;
  ModelConfig model;
  NoiseKind noise = NoiseKind::kLogUniform;
  std::uint64_t seed = 1;
  std::size_t warmup = 3;
  std::size_t iters = 10;
};

struct BenchEntry {
  CriterionConfig criterion;
  double seconds_per_batch = 0.0;
  /// 1 - t / t_full in percent, when the list contains a full CE entry.
  std::optional<double> speedup_percent;
};

struct BenchReport {
  BenchSetup setup;
  std::vector<BenchEntry> entries;
  std::string machine;
  int threads = 1;
};

/// Times complete training steps (sampling, scoring, loss, backward,
/// clipping, update) for each criterion on random batches, single-threaded,
/// with a monotonic clock. Warmup steps are not timed.
BenchReport bench_step(const BenchSetup& setup, const std::vector<CriterionConfig>& criteria);

/// CPU model, core count and compiler.
std::string machine_descriptor();

std::string bench_json(const BenchReport& report, bool with_timing = true);

/// Columns: criterion, sampling, ms_per_batch, ppl, pseudo_ppl, kl.
void write_bench_tsv(std::ostream& out, const BenchReport& report);

}  // namespace samplecrit
