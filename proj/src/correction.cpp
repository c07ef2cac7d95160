#include "samplecrit/correction.hpp"

#include <algorithm>
#include <cmath>

#include "samplecrit/error.hpp"

namespace samplecrit {

namespace {

constexpr double kQFloor = 1e-12;
constexpr double kQCeil = 1.0 - 1e-12;

PosteriorEstimate normalize_log(std::vector<double> log_u) {
  for (double v : log_u)
    if (!std::isfinite(v)) throw Error("non-finite unnormalized score");
  PosteriorEstimate est;
  est.log_z = log_sum_exp(log_u);
  est.p.resize(log_u.size());
  for (std::size_t c = 0; c < log_u.size(); ++c) est.p[c] = std::exp(log_u[c] - est.log_z);
  est.log_u = std::move(log_u);
  return est;
}

}  // namespace

Corrector::Corrector(CriterionKind kind, std::vector<double> log_noise, std::size_t num_samples,
                     double alpha)
    : kind_(kind), log_noise_(std::move(log_noise)) {
  if (num_samples == 0) throw Error("corrector needs K >= 1");
  log_k_ = std::log(static_cast<double>(num_samples));
  const bool cps = kind == CriterionKind::kBceCps || kind == CriterionKind::kCeCps;
  if (cps && !(alpha > 0.0)) throw Error("CPS correction needs a positive alpha");
  log_alpha_k_ = cps ? std::log(alpha) + log_k_ : log_k_;
}

Corrector::Corrector(CriterionKind kind, const NoiseDistribution& noise, std::size_t num_samples,
                     double alpha)
    : Corrector(kind, noise.log_pmf(), num_samples, alpha) {}

double Corrector::log_u(std::size_t c, double s) const {
  switch (kind_) {
    case CriterionKind::kMse:
    case CriterionKind::kBce: return log_sigmoid(s);
    case CriterionKind::kBceMcs: return s + log_k_ + log_noise_[c];
    case CriterionKind::kBceCps: return s + log_alpha_k_ + log_noise_[c];
    case CriterionKind::kBceIs:
    case CriterionKind::kBceNce:
    case CriterionKind::kCe:
    case CriterionKind::kCeIs: return s;
    case CriterionKind::kCeMcs:
    case CriterionKind::kCeCps: return s + log_noise_[c];
    case CriterionKind::kCeNce: {
      const double g = std::clamp(sigmoid(s - log_k_ - log_noise_[c]), kNceRatioFloor, kNceRatioCeil);
      return log_noise_[c] + g;
    }
  }
  throw Error("unknown criterion");
}

void Corrector::log_u_row(std::span<const double> scores, std::span<double> out) const {
  for (std::size_t c = 0; c < scores.size(); ++c) out[c] = log_u(c, scores[c]);
}

double unnormalized_score(CriterionKind kind, double value, double noise_p,
                          std::size_t num_samples, double alpha) {
  const double k = static_cast<double>(num_samples);
  switch (activation(kind)) {
    case Activation::kSigmoid: {
      if (value >= 1.0) throw Error("saturated output");
      if (!(value > 0.0)) throw Error("output outside (0, 1)");
      const double q = std::clamp(value, kQFloor, kQCeil);
      const double odds = q / (1.0 - q);
      switch (kind) {
        case CriterionKind::kBceMcs: return k * noise_p * odds;
        case CriterionKind::kBceIs: return odds;
        case CriterionKind::kBceCps: return alpha * k * noise_p * odds;
        default: return q;
      }
    }
    case Activation::kExp: {
      if (!(value > 0.0) || !std::isfinite(value)) throw Error("output must be positive");
      if (kind == CriterionKind::kBceNce) return value;
      const double g = std::clamp(value / (value + k * noise_p), kNceRatioFloor, kNceRatioCeil);
      return noise_p * std::exp(g);
    }
    case Activation::kIdentity:
      if (kind == CriterionKind::kCeMcs || kind == CriterionKind::kCeCps)
        return noise_p * std::exp(value);
      return std::exp(value);
  }
  throw Error("unknown criterion");
}

PosteriorEstimate normalized_posterior(const Corrector& corrector, std::span<const double> scores) {
  if (scores.size() != corrector.num_classes())
    throw Error("score row does not cover the vocabulary");
  std::vector<double> log_u(scores.size());
  corrector.log_u_row(scores, log_u);
  return normalize_log(std::move(log_u));
}

PosteriorEstimate posterior_from_activated(CriterionKind kind, std::span<const double> values,
                                           std::span<const double> noise_pmf,
                                           std::size_t num_samples, double alpha) {
  if (values.size() != noise_pmf.size()) throw Error("values do not cover the vocabulary");
  std::vector<double> log_u(values.size());
  for (std::size_t c = 0; c < values.size(); ++c)
    log_u[c] = std::log(unnormalized_score(kind, values[c], noise_pmf[c], num_samples, alpha));
  return normalize_log(std::move(log_u));
}

LogZStats self_norm_stats(const Corrector& corrector, const Matrix& scores) {
  if (scores.rows() < 2) throw Error("self-normalization stats need at least two contexts");
  std::vector<double> log_u(scores.cols());
  std::vector<double> z(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    corrector.log_u_row(scores.row(i), log_u);
    z[i] = log_sum_exp(log_u);
  }
  LogZStats st;
  for (double v : z) st.mean += v;
  st.mean /= static_cast<double>(z.size());
  for (double v : z) st.variance += (v - st.mean) * (v - st.mean);
  st.variance /= static_cast<double>(z.size());
  return st;
}

}  // namespace samplecrit
