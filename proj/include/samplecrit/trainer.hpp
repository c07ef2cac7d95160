#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "samplecrit/batching.hpp"
#include "samplecrit/criteria.hpp"
#include "samplecrit/model.hpp"
#include "samplecrit/noise.hpp"

namespace samplecrit {

struct TrainConfig {
  CriterionConfig criterion;
  ModelConfig model;
  double lr = 1.0;
  double clip_norm = 1.0;
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  NoiseKind noise = NoiseKind::kLogUniform;
  double unigram_smoothing = 1.0;
  /// Multiply lr by 0.1 whenever validation PPL goes up (logged per epoch).
  bool lr_backoff = false;
  /// Stop an epoch after this many batches (0 = full pass).
  std::size_t max_batches_per_epoch = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t batches = 0;
  double lr = 0.0;
  double mean_value = 0.0;
  double valid_ppl = 0.0;
  double valid_pseudo_ppl = 0.0;
  double log_z_mean = 0.0;
  double log_z_var = 0.0;
  double max_grad_norm = 0.0;
  double seconds_per_batch = 0.0;
  /// Free-form remark, e.g. an lr change.
  std::string note;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// One JSON object per line. Timing is left out when `with_timing` is false
  /// so logs of identical runs compare equal.
  void write_jsonl(std::ostream& out, bool with_timing = true) const;
  static std::string to_json_line(const EpochRecord& r, bool with_timing = true);
};

/// Scales `grads` down to `max_norm` when its l2 norm exceeds it. Returns
/// the norm before clipping.
double clip_global_norm(ParamGrads& grads, double max_norm);

/// params += lr * grads (ascent on the criterion). Throws "divergence" when
/// any parameter becomes non-finite.
void sgd_step(ModelParams& params, const ParamGrads& grads, double lr);

/// The noise distribution a config trains with.
NoiseDistribution make_noise(NoiseKind kind, const Corpus& train, std::size_t num_classes,
                             double smoothing = 1.0);

/// One optimisation step: draw a shared sample set, score, evaluate the
/// criterion, backpropagate, clip and update. Owns the scratch space and the
/// sampling stream so repeated steps allocate nothing new.
class Stepper {
 public:
  /// `criterion.alpha` is resolved against the noise size here.
  Stepper(const CriterionConfig& criterion, const NoiseDistribution& noise, double clip_norm,
          std::uint64_t seed);

  struct Result {
    double value = 0.0;
    double grad_norm = 0.0;
  };

  Result step(ModelParams& params, const TrainingBatch& batch, double lr);

  const CriterionConfig& criterion() const { return criterion_; }
  Rng& rng() { return rng_; }

 private:
  CriterionConfig criterion_;
  NoiseDistribution noise_;
  AliasTable alias_;
  double clip_norm_;
  Rng rng_;
  std::optional<ParamGrads> grads_;
  ScoreBundle bundle_;
};

/// Everything needed to continue an interrupted run.
struct TrainState {
  ModelParams params;
  std::size_t epochs_done = 0;
  double lr = 0.0;
  double best_ppl = 0.0;
  std::string sample_rng;
  TrainLog log;
};

struct TrainHooks {
  /// Called after every epoch with the current state (e.g. to checkpoint).
  std::function<void(const TrainState&)> on_epoch;
  /// Receives progress lines.
  std::function<void(const std::string&)> on_message;
};

/// Trains from scratch, or continues `resume` when given. Validation PPL is
/// always computed in corrected and fully normalized mode.
TrainState train(const TrainConfig& config, const Corpus& train_corpus, const Corpus& valid,
                 std::size_t num_classes, const TrainHooks& hooks = {},
                 std::optional<TrainState> resume = std::nullopt);

/// Model of the configured variant; tabular models get one row per context
/// seen in either corpus.
ModelParams make_model(const TrainConfig& config, const Corpus& train_corpus, const Corpus& valid,
                       std::size_t num_classes);

}  // namespace samplecrit
