#pragma once

#include <span>
#include <vector>

#include "samplecrit/criteria.hpp"
#include "samplecrit/matrix.hpp"
#include "samplecrit/noise.hpp"

namespace samplecrit {

/// Maps a criterion's model output back to the class posterior it encodes.
/// Works on raw scores, where every mapping is a closed-form shift of the
/// log output and needs no saturation guard.
class Corrector {
 public:
  /// `alpha` is only read for CPS kinds.
  Corrector(CriterionKind kind, std::vector<double> log_noise, std::size_t num_samples,
            double alpha);
  Corrector(CriterionKind kind, const NoiseDistribution& noise, std::size_t num_samples,
            double alpha);

  CriterionKind kind() const { return kind_; }
  std::size_t num_classes() const { return log_noise_.size(); }

  /// log u(x, c) for raw score `s` of class `c`.
  double log_u(std::size_t c, double s) const;

  /// Fills `out` with log u for a full row of raw scores.
  void log_u_row(std::span<const double> scores, std::span<double> out) const;

 private:
  CriterionKind kind_;
  std::vector<double> log_noise_;
  double log_k_;
  double log_alpha_k_;
};

struct PosteriorEstimate {
  std::vector<double> log_u;
  double log_z = 0.0;
  std::vector<double> p;
};

/// u for one class from the activated output q (sigmoid and exp kinds) or
/// the raw score s (CE, CE-MCS, CE-IS, CE-CPS). Sigmoid outputs are clamped
/// to [1e-12, 1 - 1e-12]; q >= 1 exactly is rejected as "saturated output".
double unnormalized_score(CriterionKind kind, double value, double noise_p,
                          std::size_t num_samples, double alpha);

/// Full-vocabulary normalization of raw scores, computed in log space.
PosteriorEstimate normalized_posterior(const Corrector& corrector, std::span<const double> scores);

/// Same as above starting from activated outputs (q, or s for CE kinds).
PosteriorEstimate posterior_from_activated(CriterionKind kind, std::span<const double> values,
                                           std::span<const double> noise_pmf,
                                           std::size_t num_samples, double alpha);

struct LogZStats {
  double mean = 0.0;
  double variance = 0.0;
};

/// Moments of log Z over the rows of `scores` (one context per row).
LogZStats self_norm_stats(const Corrector& corrector, const Matrix& scores);

}  // namespace samplecrit
