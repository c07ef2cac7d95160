#include "samplecrit/bench.hpp"

#include <chrono>
#include <fstream>
#include <nlohmann/json.hpp>
#include <thread>

#include "samplecrit/error.hpp"
#include "samplecrit/kernels.hpp"
#include "samplecrit/rng.hpp"
#include "samplecrit/trainer.hpp"

namespace samplecrit {

using nlohmann::json;

namespace {

NoiseDistribution bench_noise(const BenchSetup& s) {
  switch (s.noise) {
    case NoiseKind::kLogUniform: return log_uniform(s.num_classes);
    case NoiseKind::kUniform: return uniform_noise(s.num_classes);
    case NoiseKind::kSmoothedUnigram: {
      // No corpus here; use Zipf counts as a stand-in.
      std::vector<std::uint64_t> counts(s.num_classes);
      for (std::size_t c = 0; c < counts.size(); ++c) counts[c] = 1000000 / (c + 1);
      return smoothed_unigram(counts);
    }
  }
  throw Error("unknown noise kind");
}

// Batches drawn from a Zipf-like distribution so target rows resemble text.
std::vector<TrainingBatch> random_batches(const BenchSetup& s, const NoiseDistribution& noise,
                                          std::size_t count) {
  const AliasTable alias = build_alias(noise);
  Rng rng(s.seed);
  std::vector<TrainingBatch> out(count);
  for (auto& b : out) {
    b.order = s.model.order;
    b.contexts.resize(s.batch_size * s.model.order);
    b.targets.resize(s.batch_size);
    for (auto& c : b.contexts) c = alias.draw(rng);
    for (auto& t : b.targets) t = alias.draw(rng);
  }
  return out;
}

}  // namespace

std::string machine_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      auto pos = line.find(':');
      if (pos != std::string::npos) cpu = line.substr(pos + 2);
      break;
    }
  }
  std::string desc = cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
#if defined(__clang__)
  desc += "; clang " __clang_version__;
#elif defined(__GNUC__)
  desc += "; gcc " __VERSION__;
#endif
  return desc;
}

BenchReport bench_step(const BenchSetup& setup, const std::vector<CriterionConfig>& criteria) {
  if (setup.iters < 10) throw DataError("bench needs at least 10 timed iterations");
  if (setup.warmup < 3) throw DataError("bench needs at least 3 warmup iterations");
  if (criteria.empty()) throw DataError("nothing to benchmark");

  const int saved_threads = kernels::max_threads();
  kernels::set_threads(1);

  BenchReport report;
  report.setup = setup;
  report.machine = machine_descriptor();
  report.threads = 1;

  const NoiseDistribution noise = bench_noise(setup);
  const auto batches = random_batches(setup, noise, setup.warmup + setup.iters);
  const ModelConfig model = [&] {
    ModelConfig m = setup.model;
    m.variant = ModelVariant::kFeedforward;
    m.seed = setup.seed;
    return m;
  }();

  try {
    for (const auto& crit : criteria) {
      ModelParams params = init_params(model, setup.num_classes);
      // lr 0 keeps the parameters fixed so every criterion sees the same model.
      Stepper stepper(crit, noise, 1.0, setup.seed);
      for (std::size_t i = 0; i < setup.warmup; ++i) stepper.step(params, batches[i], 0.0);
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < setup.iters; ++i)
        stepper.step(params, batches[setup.warmup + i], 0.0);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      BenchEntry e;
      e.criterion = stepper.criterion();
      e.seconds_per_batch = secs / static_cast<double>(setup.iters);
      report.entries.push_back(e);
    }
  } catch (...) {
    kernels::set_threads(saved_threads);
    throw;
  }
  kernels::set_threads(saved_threads);

  const BenchEntry* full = nullptr;
  for (const auto& e : report.entries)
    if (e.criterion.kind == CriterionKind::kCe) full = &e;
  if (full) {
    const double t_full = full->seconds_per_batch;
    for (auto& e : report.entries)
      e.speedup_percent = 100.0 * (1.0 - e.seconds_per_batch / t_full);
  }
  return report;
}

std::string bench_json(const BenchReport& r, bool with_timing) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    json j = {{"criterion", to_string(e.criterion.kind)},
              {"sampling", sampling_label(e.criterion.kind)},
              {"K", is_sampled(e.criterion.kind) ? json(e.criterion.num_samples) : json(nullptr)}};
    if (e.criterion.alpha) j["alpha"] = *e.criterion.alpha;
    if (with_timing) {
      j["seconds_per_batch"] = e.seconds_per_batch;
      j["ms_per_batch"] = e.seconds_per_batch * 1e3;
      j["speedup_percent"] = e.speedup_percent ? json(*e.speedup_percent) : json(nullptr);
    }
    entries.push_back(j);
  }
  json out = {{"C", r.setup.num_classes},
              {"batch_size", r.setup.batch_size},
              {"d_emb", r.setup.model.d_emb},
              {"d_hidden", r.setup.model.d_hidden},
              {"order", r.setup.model.order},
              {"noise", to_string(r.setup.noise)},
              {"seed", r.setup.seed},
              {"warmup", r.setup.warmup},
              {"iters", r.setup.iters},
              {"threads", r.threads},
              {"machine", r.machine},
              {"entries", entries}};
  return out.dump(2);
}

void write_bench_tsv(std::ostream& out, const BenchReport& r) {
  out << "criterion\tsampling\tms_per_batch\tppl\tpseudo_ppl\tkl\n";
  for (const auto& e : r.entries)
    out << to_string(e.criterion.kind) << '\t' << sampling_label(e.criterion.kind) << '\t'
        << e.seconds_per_batch * 1e3 << "\t-\t-\t-\n";
}

}  // namespace samplecrit
