#pragma once

#include "samplecrit/batching.hpp"
#include "samplecrit/criteria.hpp"
#include "samplecrit/model.hpp"
#include "samplecrit/noise.hpp"
#include "samplecrit/rng.hpp"

namespace samplecrit {

/// Batch criterion value of the model with a fixed sample set (ignored by
/// the full criteria). `criterion` must be resolved.
double model_objective(const ModelParams& params, const CriterionConfig& criterion,
                       const NoiseDistribution& noise, const TrainingBatch& batch,
                       const SampleSet& samples);

/// Analytic parameter gradient of model_objective.
ParamGrads model_gradient(const ModelParams& params, const CriterionConfig& criterion,
                          const NoiseDistribution& noise, const TrainingBatch& batch,
                          const SampleSet& samples);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences of model_objective against model_gradient for up to
/// `per_block` random coordinates of every parameter block (all of them when
/// the block is smaller).
GradCheckResult model_grad_check(const ModelParams& params, const CriterionConfig& criterion,
                                 const NoiseDistribution& noise, const TrainingBatch& batch,
                                 const SampleSet& samples, double epsilon, std::size_t per_block,
                                 Rng& rng, double floor = 1.0);

/// Scores drawn N(0, scale^2) for `batch` positions and K samples from
/// `noise`. Target noise probabilities belong to uniformly drawn classes.
ScoreBundle random_bundle(std::size_t batch, std::size_t num_samples,
                          const NoiseDistribution& noise, Rng& rng, double scale = 2.0);

}  // namespace samplecrit
