#include "samplecrit/trainer.hpp"

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "samplecrit/correction.hpp"
#include "samplecrit/error.hpp"
#include "samplecrit/eval.hpp"

namespace samplecrit {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw DataError("lr must be positive");
  if (!(clip_norm > 0.0)) throw DataError("clip_norm must be positive");
  if (batch_size == 0) throw DataError("batch_size must be positive");
  if (is_sampled(criterion.kind) && criterion.num_samples == 0)
    throw DataError("K must be positive");
  if (criterion.alpha && !(*criterion.alpha > 0.0)) throw DataError("alpha must be positive");
}

std::string TrainLog::to_json_line(const EpochRecord& r, bool with_timing) {
  json j = {{"epoch", r.epoch},
            {"batches", r.batches},
            {"lr", r.lr},
            {"mean_value", r.mean_value},
            {"valid_ppl", r.valid_ppl},
            {"valid_pseudo_ppl", r.valid_pseudo_ppl},
            {"log_z_mean", r.log_z_mean},
            {"log_z_var", r.log_z_var},
            {"max_grad_norm", r.max_grad_norm}};
  if (with_timing) j["seconds_per_batch"] = r.seconds_per_batch;
  if (!r.note.empty()) j["note"] = r.note;
  return j.dump();
}

void TrainLog::write_jsonl(std::ostream& out, bool with_timing) const {
  for (const auto& r : epochs) out << to_json_line(r, with_timing) << '\n';
}

double clip_global_norm(ParamGrads& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("max_norm must be positive");
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

void sgd_step(ModelParams& params, const ParamGrads& grads, double lr) {
  apply_update(params, grads, lr);
}

NoiseDistribution make_noise(NoiseKind kind, const Corpus& train, std::size_t num_classes,
                             double smoothing) {
  switch (kind) {
    case NoiseKind::kLogUniform: return log_uniform(num_classes);
    case NoiseKind::kUniform: return uniform_noise(num_classes);
    case NoiseKind::kSmoothedUnigram: return smoothed_unigram(train, num_classes, smoothing);
  }
  throw Error("unknown noise kind");
}

// ---------------------------------------------------------------------------
// Stepper

namespace {

// Scores overflow before any parameter does; treat that as divergence too.
void require_finite_scores(std::span<const double> s) {
  for (double x : s)
    if (!std::isfinite(x)) throw Error("divergence");
}

}  // namespace

Stepper::Stepper(const CriterionConfig& criterion, const NoiseDistribution& noise,
                 double clip_norm, std::uint64_t seed)
    : criterion_(criterion.resolved(noise.size())),
      noise_(noise),
      alias_(build_alias(noise)),
      clip_norm_(clip_norm),
      rng_(seed) {}

Stepper::Result Stepper::step(ModelParams& params, const TrainingBatch& batch, double lr) {
  if (params.num_classes != noise_.size())
    throw Error("model and noise disagree on the number of classes");
  if (!grads_) grads_ = params.make_grads();
  ParamGrads& grads = *grads_;
  grads.clear();

  const ForwardCache cache = encode_contexts(params, batch.contexts);
  LossGrad lg;
  if (is_sampled(criterion_.kind)) {
    const SampleSet samples = draw_shared(alias_, criterion_.num_samples, rng_);
    bundle_.s_samples = forward_subset(params, cache, samples.ids);
    bundle_.s_target = forward_targets(params, cache, batch.targets);
    bundle_.target_noise_logp.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b)
      bundle_.target_noise_logp[b] = noise_.log_pmf(static_cast<std::size_t>(batch.targets[b]));
    bundle_.sample_noise_logp.resize(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j)
      bundle_.sample_noise_logp[j] = noise_.log_pmf(static_cast<std::size_t>(samples.ids[j]));
    require_finite_scores(bundle_.s_samples.data());
    require_finite_scores(bundle_.s_target);
    lg = loss_sampled(criterion_, bundle_);
    backward(params, cache, samples.ids, lg.d_s_samples, batch.targets, lg.d_s_target, grads);
  } else {
    const Matrix scores = forward_all(params, cache);
    require_finite_scores(scores.data());
    lg = loss_full(criterion_.kind, scores, batch.targets, criterion_.mse_rival_scale);
    backward_all(params, cache, lg.d_s_samples, grads);
  }
  if (!std::isfinite(lg.value)) throw Error("divergence");
  Result r;
  r.value = lg.value;
  r.grad_norm = clip_global_norm(grads, clip_norm_);
  if (!std::isfinite(r.grad_norm)) throw Error("divergence");
  sgd_step(params, grads, lr);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return mix(seed ^ mix(static_cast<std::uint64_t>(epoch) + 1));
}

void collect_contexts(const Corpus& corpus, std::size_t order, TokenId bos,
                      std::vector<std::vector<TokenId>>& out) {
  const PositionTable t = flatten(corpus, order, bos);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto c = t.context(i);
    out.emplace_back(c.begin(), c.end());
  }
}

TokenId corpus_bos(const Corpus& corpus) {
  for (const auto& s : corpus.sequences)
    if (!s.empty()) return s[0];
  throw DataError("empty corpus");
}

}  // namespace

ModelParams make_model(const TrainConfig& config, const Corpus& train_corpus, const Corpus& valid,
                       std::size_t num_classes) {
  if (config.model.variant == ModelVariant::kFeedforward)
    return init_params(config.model, num_classes);
  std::vector<std::vector<TokenId>> contexts;
  const TokenId bos = corpus_bos(train_corpus);
  collect_contexts(train_corpus, config.model.order, bos, contexts);
  collect_contexts(valid, config.model.order, bos, contexts);
  return init_tabular(config.model, num_classes, contexts);
}

TrainState train(const TrainConfig& config, const Corpus& train_corpus, const Corpus& valid,
                 std::size_t num_classes, const TrainHooks& hooks,
                 std::optional<TrainState> resume) {
  config.validate();
  if (valid.num_positions() == 0) throw DataError("validation corpus is empty");
  if (train_corpus.num_positions() == 0) throw DataError("training corpus is empty");
  auto say = [&](const std::string& msg) {
    if (hooks.on_message) hooks.on_message(msg);
  };

  const NoiseDistribution noise =
      make_noise(config.noise, train_corpus, num_classes, config.unigram_smoothing);
  Stepper stepper(config.criterion, noise, config.clip_norm, mix(config.seed ^ 0x5A5A5A5Aull));
  const CriterionConfig& crit = stepper.criterion();
  const Corrector corrector(crit.kind, noise, crit.num_samples, crit.alpha.value_or(1.0));

  TrainState state;
  if (resume) {
    state = std::move(*resume);
    if (!state.sample_rng.empty()) stepper.rng().set_state(state.sample_rng);
  } else {
    state.params = make_model(config, train_corpus, valid, num_classes);
    state.lr = config.lr;
  }
  if (state.params.num_classes != num_classes)
    throw DataError("model does not match the vocabulary size");

  {
    std::ostringstream msg;
    msg << "criterion " << to_string(crit.kind);
    if (is_sampled(crit.kind)) msg << " K=" << crit.num_samples << " noise=" << to_string(noise.kind());
    if (crit.alpha && (crit.kind == CriterionKind::kBceCps || crit.kind == CriterionKind::kCeCps))
      msg << " alpha=" << *crit.alpha;
    msg << " params=" << state.params.parameter_count();
    say(msg.str());
  }

  const TokenId bos = corpus_bos(train_corpus);
  const PositionTable positions = flatten(train_corpus, config.model.order, bos);
  TrainingBatch batch;

  for (std::size_t epoch = state.epochs_done + 1; epoch <= config.epochs; ++epoch) {
    BatchIterator it(positions, config.batch_size, epoch_seed(config.seed, epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = state.lr;
    double value_sum = 0.0;
    double seconds = 0.0;
    while (it.next(batch)) {
      const auto t0 = std::chrono::steady_clock::now();
      Stepper::Result r;
      try {
        r = stepper.step(state.params, batch, state.lr);
      } catch (const DivergenceError&) {
        throw;
      } catch (const Error& e) {
        if (std::string(e.what()) != "divergence") throw;
        throw DivergenceError("divergence at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(rec.batches + 1),
                              static_cast<long>(epoch), static_cast<long>(rec.batches + 1));
      }
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      value_sum += r.value;
      rec.max_grad_norm = std::max(rec.max_grad_norm, r.grad_norm);
      ++rec.batches;
      if (config.max_batches_per_epoch && rec.batches >= config.max_batches_per_epoch) break;
    }
    rec.mean_value = value_sum / static_cast<double>(rec.batches);
    rec.seconds_per_batch = seconds / static_cast<double>(rec.batches);

    const EvalReport ev = perplexity(state.params, valid, corrector, Normalization::kBoth);
    rec.valid_ppl = *ev.ppl_normalized;
    rec.valid_pseudo_ppl = *ev.ppl_unnormalized;
    rec.log_z_mean = ev.log_z->mean;
    rec.log_z_var = ev.log_z->variance;
    if (!std::isfinite(rec.valid_ppl))
      throw DivergenceError("divergence at epoch " + std::to_string(epoch) + " (validation)",
                            static_cast<long>(epoch), static_cast<long>(rec.batches));

    if (config.lr_backoff && state.best_ppl > 0.0 && rec.valid_ppl > state.best_ppl) {
      state.lr *= 0.1;
      std::ostringstream note;
      note << "validation PPL rose, lr reduced to " << state.lr;
      rec.note = note.str();
    }
    if (state.best_ppl == 0.0 || rec.valid_ppl < state.best_ppl) state.best_ppl = rec.valid_ppl;

    state.epochs_done = epoch;
    state.sample_rng = stepper.rng().state();
    state.log.epochs.push_back(rec);
    {
      std::ostringstream msg;
      msg << "epoch " << epoch << " value " << rec.mean_value << " valid ppl " << rec.valid_ppl
          << " pseudo " << rec.valid_pseudo_ppl << " ms/batch " << rec.seconds_per_batch * 1e3;
      if (!rec.note.empty()) msg << " (" << rec.note << ")";
      say(msg.str());
    }
    if (hooks.on_epoch) hooks.on_epoch(state);
  }
  return state;
}

}  // namespace samplecrit
