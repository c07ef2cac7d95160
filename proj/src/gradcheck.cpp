#include "samplecrit/gradcheck.hpp"

#include <algorithm>

#include "samplecrit/error.hpp"

namespace samplecrit {

namespace {

ScoreBundle bundle_for(const ModelParams& params, const ForwardCache& cache,
                       const NoiseDistribution& noise, const TrainingBatch& batch,
                       const SampleSet& samples) {
  ScoreBundle b;
  b.s_samples = forward_subset(params, cache, samples.ids);
  b.s_target = forward_targets(params, cache, batch.targets);
  for (auto t : batch.targets) b.target_noise_logp.push_back(noise.log_pmf(static_cast<std::size_t>(t)));
  for (auto id : samples.ids) b.sample_noise_logp.push_back(noise.log_pmf(static_cast<std::size_t>(id)));
  return b;
}

// Parameter blocks as (values, gradient lookup) pairs.
struct Block {
  std::vector<double>* values;
  std::size_t width;
  const SparseRows* sparse;
  const std::vector<double>* dense;
};

double grad_at(const Block& b, std::size_t i) {
  if (b.dense) return (*b.dense)[i];
  const std::size_t row = i / b.width;
  const auto& ids = b.sparse->ids();
  auto it = std::find(ids.begin(), ids.end(), static_cast<std::int32_t>(row));
  if (it == ids.end()) return 0.0;
  return b.sparse->slot(static_cast<std::size_t>(it - ids.begin()))[i % b.width];
}

}  // namespace

double model_objective(const ModelParams& params, const CriterionConfig& criterion,
                       const NoiseDistribution& noise, const TrainingBatch& batch,
                       const SampleSet& samples) {
  const ForwardCache cache = encode_contexts(params, batch.contexts);
  if (is_sampled(criterion.kind))
    return loss_sampled(criterion, bundle_for(params, cache, noise, batch, samples)).value;
  return loss_full(criterion.kind, forward_all(params, cache), batch.targets,
                   criterion.mse_rival_scale)
      .value;
}

ParamGrads model_gradient(const ModelParams& params, const CriterionConfig& criterion,
                          const NoiseDistribution& noise, const TrainingBatch& batch,
                          const SampleSet& samples) {
  ParamGrads grads = params.make_grads();
  const ForwardCache cache = encode_contexts(params, batch.contexts);
  if (is_sampled(criterion.kind)) {
    const auto lg = loss_sampled(criterion, bundle_for(params, cache, noise, batch, samples));
    backward(params, cache, samples.ids, lg.d_s_samples, batch.targets, lg.d_s_target, grads);
  } else {
    const auto lg = loss_full(criterion.kind, forward_all(params, cache), batch.targets,
                              criterion.mse_rival_scale);
    backward_all(params, cache, lg.d_s_samples, grads);
  }
  return grads;
}

GradCheckResult model_grad_check(const ModelParams& params, const CriterionConfig& criterion,
                                 const NoiseDistribution& noise, const TrainingBatch& batch,
                                 const SampleSet& samples, double epsilon, std::size_t per_block,
                                 Rng& rng, double floor) {
  const ParamGrads grads = model_gradient(params, criterion, noise, batch, samples);
  ModelParams probe = params;
  std::vector<Block> blocks;
  if (probe.config.variant == ModelVariant::kTabular) {
    blocks.push_back({&probe.table.data(), probe.table.cols(), &grads.table, nullptr});
  } else {
    blocks.push_back({&probe.embedding.data(), probe.embedding.cols(), &grads.embedding, nullptr});
    blocks.push_back({&probe.hidden_w.data(), probe.hidden_w.cols(), nullptr, &grads.hidden_w.data()});
    blocks.push_back({&probe.hidden_b, 1, nullptr, &grads.hidden_b});
    blocks.push_back({&probe.output_w.data(), probe.output_w.cols(), &grads.output_w, nullptr});
    blocks.push_back({&probe.output_b, 1, &grads.output_b, nullptr});
  }
  GradCheckResult r;
  for (const auto& b : blocks) {
    const std::size_t n = b.values->size();
    std::vector<std::size_t> coords;
    if (n <= per_block) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < per_block; ++k) coords.push_back(rng.below(n));
    }
    for (std::size_t i : coords) {
      double& x = (*b.values)[i];
      const double orig = x;
      x = orig + epsilon;
      const double up = model_objective(probe, criterion, noise, batch, samples);
      x = orig - epsilon;
      const double down = model_objective(probe, criterion, noise, batch, samples);
      x = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(grad_at(b, i), numeric, floor));
      ++r.coordinates;
    }
  }
  return r;
}

ScoreBundle random_bundle(std::size_t batch, std::size_t num_samples,
                          const NoiseDistribution& noise, Rng& rng, double scale) {
  if (batch == 0 || num_samples == 0) throw Error("random_bundle needs B, K >= 1");
  const AliasTable alias = build_alias(noise);
  ScoreBundle b;
  b.s_target.resize(batch);
  b.s_samples = Matrix(batch, num_samples);
  for (double& s : b.s_target) s = scale * rng.normal();
  for (double& s : b.s_samples.data()) s = scale * rng.normal();
  for (std::size_t i = 0; i < batch; ++i)
    b.target_noise_logp.push_back(noise.log_pmf(rng.below(noise.size())));
  for (std::size_t j = 0; j < num_samples; ++j)
    b.sample_noise_logp.push_back(noise.log_pmf(static_cast<std::size_t>(alias.draw(rng))));
  return b;
}

}  // namespace samplecrit
