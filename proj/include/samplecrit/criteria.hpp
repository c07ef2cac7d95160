#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "samplecrit/matrix.hpp"
#include "samplecrit/vocab.hpp"

namespace samplecrit {

enum class CriterionKind {
  kMse,
  kBce,
  kCe,
  kBceMcs,
  kBceIs,
  kBceCps,
  kBceNce,
  kCeMcs,
  kCeIs,
  kCeCps,
  kCeNce,
};

inline constexpr std::array<CriterionKind, 11> kAllCriteria = {
    CriterionKind::kMse,    CriterionKind::kBce,   CriterionKind::kCe,    CriterionKind::kBceMcs,
    CriterionKind::kBceIs,  CriterionKind::kBceCps, CriterionKind::kBceNce, CriterionKind::kCeMcs,
    CriterionKind::kCeIs,   CriterionKind::kCeCps, CriterionKind::kCeNce};

/// How a raw score s becomes the criterion's model output q.
enum class Activation { kSigmoid, kExp, kIdentity };

std::string to_string(CriterionKind k);
/// Accepts the config spellings: mse, bce, ce, bce-mcs, ..., ce-nce.
CriterionKind parse_criterion(const std::string& s);

bool is_sampled(CriterionKind k);
bool is_ce_family(CriterionKind k);
Activation activation(CriterionKind k);
/// "-", "MCS", "IS", "CPS" or "NCE".
std::string sampling_label(CriterionKind k);

struct CriterionConfig {
  CriterionKind kind = CriterionKind::kCe;
  std::size_t num_samples = 8192;
  /// CPS compensation factor; unset means C / K, filled in by resolved().
  std::optional<double> alpha;
  bool include_target_in_samples = false;
  /// Weight of the rival-class terms in MSE (1 = plain MSE).
  double mse_rival_scale = 1.0;

  /// Copy with alpha set to C / K when it was left unset (CPS kinds only).
  CriterionConfig resolved(std::size_t num_classes) const;
};

/// Raw scores and noise log-probabilities for one batch. The K samples are
/// shared by all B positions, so `sample_noise_logp` has K entries.
struct ScoreBundle {
  std::vector<double> s_target;           // B
  Matrix s_samples;                       // B x K
  std::vector<double> target_noise_logp;  // B
  std::vector<double> sample_noise_logp;  // K

  std::size_t batch() const { return s_target.size(); }
  std::size_t num_samples() const { return s_samples.cols(); }
};

/// Batch-averaged criterion value (to maximize) and its gradient with respect
/// to the raw scores. For the full criteria `d_s_samples` is B x C over all
/// classes and `d_s_target` is empty.
struct LossGrad {
  double value = 0.0;
  std::vector<double> d_s_target;
  Matrix d_s_samples;
};

/// MSE, BCE or CE over the full vocabulary. `scores_all` is B x C.
LossGrad loss_full(CriterionKind kind, const Matrix& scores_all, std::span<const TokenId> targets,
                   double mse_rival_scale = 1.0);

/// One of the eight sampled criteria. `config.alpha` must be resolved for CPS.
LossGrad loss_sampled(const CriterionConfig& config, const ScoreBundle& bundle);

/// |a - n| / max(|a|, floor). Gradients below the floor are compared on an
/// absolute scale, where finite differences lose relative precision.
double relative_error(double analytic, double numeric, double floor = 1.0);

/// Max over coordinates of relative_error between the analytic gradient and
/// central differences with step `epsilon`.
double grad_check(const CriterionConfig& config, const ScoreBundle& bundle, double epsilon,
                  double floor = 1.0);
double grad_check_full(CriterionKind kind, const Matrix& scores_all,
                       std::span<const TokenId> targets, double epsilon,
                       double mse_rival_scale = 1.0, double floor = 1.0);

// Numerically stable helpers shared with the oracle and correction code.
double sigmoid(double x);
/// log(sigmoid(x)).
double log_sigmoid(double x);
double log_sum_exp(std::span<const double> v);

/// Lower/upper clamp for the bounded NCE ratio in CE-NCE.
inline constexpr double kNceRatioFloor = 1e-6;
inline constexpr double kNceRatioCeil = 1.0 - 1e-6;

}  // namespace samplecrit
