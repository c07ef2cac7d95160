#include "samplecrit/criteria.hpp"

#include <algorithm>
#include <cmath>

#include "samplecrit/error.hpp"

namespace samplecrit {

namespace {

struct KindName {
  CriterionKind kind;
  const char* name;
};

constexpr KindName kNames[] = {
    {CriterionKind::kMse, "mse"},         {CriterionKind::kBce, "bce"},
    {CriterionKind::kCe, "ce"},           {CriterionKind::kBceMcs, "bce-mcs"},
    {CriterionKind::kBceIs, "bce-is"},    {CriterionKind::kBceCps, "bce-cps"},
    {CriterionKind::kBceNce, "bce-nce"},  {CriterionKind::kCeMcs, "ce-mcs"},
    {CriterionKind::kCeIs, "ce-is"},      {CriterionKind::kCeCps, "ce-cps"},
    {CriterionKind::kCeNce, "ce-nce"},
};

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw Error(std::string("non-finite ") + what);
}

// Everything a position needs to know about one sampled class.
struct SampledTerm {
  double score;
  double noise_logp;
};

// Value and gradients for a single position. `grads[j]` pairs with terms[j];
// the target gradient is returned separately.
double position_value(const CriterionConfig& cfg, double log_k, double s_n, double logd_n,
                      std::span<const SampledTerm> terms, double& d_target,
                      std::span<double> grads, std::vector<double>& scratch) {
  const auto kind = cfg.kind;
  const std::size_t n = terms.size();
  double value = 0.0;
  switch (kind) {
    case CriterionKind::kBceMcs:
    case CriterionKind::kBceIs:
    case CriterionKind::kBceCps: {
      value = log_sigmoid(s_n);
      d_target = sigmoid(-s_n);
      for (std::size_t j = 0; j < n; ++j) {
        double w = 1.0;
        if (kind == CriterionKind::kBceIs) w = std::exp(-log_k - terms[j].noise_logp);
        if (kind == CriterionKind::kBceCps) w = *cfg.alpha;
        value += w * log_sigmoid(-terms[j].score);
        grads[j] = -w * sigmoid(terms[j].score);
      }
      break;
    }
    case CriterionKind::kBceNce: {
      // q / (q + K D) = sigmoid(s - log(K D)) with q = exp(s).
      const double x_n = s_n - (log_k + logd_n);
      value = log_sigmoid(x_n);
      d_target = sigmoid(-x_n);
      for (std::size_t j = 0; j < n; ++j) {
        const double x = terms[j].score - (log_k + terms[j].noise_logp);
        value += log_sigmoid(-x);
        grads[j] = -sigmoid(x);
      }
      break;
    }
    case CriterionKind::kCeMcs:
    case CriterionKind::kCeIs:
    case CriterionKind::kCeCps: {
      scratch.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        scratch[j] = terms[j].score;
        if (kind == CriterionKind::kCeIs) scratch[j] -= log_k + terms[j].noise_logp;
      }
      const double lse = log_sum_exp(scratch);
      value = s_n - lse;
      if (kind == CriterionKind::kCeCps) value -= std::log(*cfg.alpha);
      d_target = 1.0;
      for (std::size_t j = 0; j < n; ++j) grads[j] = -std::exp(scratch[j] - lse);
      break;
    }
    case CriterionKind::kCeNce: {
      auto ratio = [&](double s, double logd, double& dg) {
        const double g = sigmoid(s - (log_k + logd));
        if (g < kNceRatioFloor || g > kNceRatioCeil) {
          dg = 0.0;
          return std::clamp(g, kNceRatioFloor, kNceRatioCeil);
        }
        dg = g * (1.0 - g);
        return g;
      };
      double dg_n;
      const double g_n = ratio(s_n, logd_n, dg_n);
      scratch.resize(2 * n);
      for (std::size_t j = 0; j < n; ++j)
        scratch[j] = ratio(terms[j].score, terms[j].noise_logp, scratch[n + j]);
      const double lse = log_sum_exp(std::span<const double>(scratch.data(), n));
      value = g_n - lse;
      d_target = dg_n;
      for (std::size_t j = 0; j < n; ++j) grads[j] = -std::exp(scratch[j] - lse) * scratch[n + j];
      break;
    }
    default:
      throw Error("criterion " + to_string(kind) + " is not sampled");
  }
  return value;
}

}  // namespace

std::string to_string(CriterionKind k) {
  for (const auto& e : kNames)
    if (e.kind == k) return e.name;
  return "?";
}

CriterionKind parse_criterion(const std::string& s) {
  std::string norm = s;
  std::replace(norm.begin(), norm.end(), '_', '-');
  std::transform(norm.begin(), norm.end(), norm.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& e : kNames)
    if (norm == e.name) return e.kind;
  throw Error("unknown criterion: " + s);
}

bool is_sampled(CriterionKind k) {
  return !(k == CriterionKind::kMse || k == CriterionKind::kBce || k == CriterionKind::kCe);
}

bool is_ce_family(CriterionKind k) {
  return k == CriterionKind::kCe || k == CriterionKind::kCeMcs || k == CriterionKind::kCeIs ||
         k == CriterionKind::kCeCps || k == CriterionKind::kCeNce;
}

Activation activation(CriterionKind k) {
  switch (k) {
    case CriterionKind::kMse:
    case CriterionKind::kBce:
    case CriterionKind::kBceMcs:
    case CriterionKind::kBceIs:
    case CriterionKind::kBceCps: return Activation::kSigmoid;
    case CriterionKind::kBceNce:
    case CriterionKind::kCeNce: return Activation::kExp;
    default: return Activation::kIdentity;
  }
}

std::string sampling_label(CriterionKind k) {
  switch (k) {
    case CriterionKind::kBceMcs:
    case CriterionKind::kCeMcs: return "MCS";
    case CriterionKind::kBceIs:
    case CriterionKind::kCeIs: return "IS";
    case CriterionKind::kBceCps:
    case CriterionKind::kCeCps: return "CPS";
    case CriterionKind::kBceNce:
    case CriterionKind::kCeNce: return "NCE";
    default: return "-";
  }
}

CriterionConfig CriterionConfig::resolved(std::size_t num_classes) const {
  CriterionConfig c = *this;
  const bool cps = kind == CriterionKind::kBceCps || kind == CriterionKind::kCeCps;
  if (cps && !c.alpha)
    c.alpha = static_cast<double>(num_classes) / static_cast<double>(num_samples);
  return c;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  // -softplus(-x)
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double log_sum_exp(std::span<const double> v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

LossGrad loss_full(CriterionKind kind, const Matrix& scores_all, std::span<const TokenId> targets,
                   double mse_rival_scale) {
  if (is_sampled(kind)) throw Error("loss_full needs an unsampled criterion");
  const std::size_t b = scores_all.rows();
  const std::size_t c = scores_all.cols();
  if (targets.size() != b) throw Error("targets do not match batch size");
  if (b == 0) throw Error("empty batch");
  require_finite(scores_all.data(), "scores");

  LossGrad out;
  out.d_s_samples = Matrix(b, c);
  std::vector<double> values(b);
  const double inv_b = 1.0 / static_cast<double>(b);

#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < b; ++i) {
    const auto s = scores_all.row(i);
    auto g = out.d_s_samples.row(i);
    const auto t = static_cast<std::size_t>(targets[i]);
    double v = 0.0;
    switch (kind) {
      case CriterionKind::kMse:
        for (std::size_t k = 0; k < c; ++k) {
          const double q = sigmoid(s[k]);
          const double dq = q * (1.0 - q);
          if (k == t) {
            v -= (q - 1.0) * (q - 1.0);
            g[k] = -2.0 * (q - 1.0) * dq * inv_b;
          } else {
            v -= mse_rival_scale * q * q;
            g[k] = -2.0 * mse_rival_scale * q * dq * inv_b;
          }
        }
        break;
      case CriterionKind::kBce:
        for (std::size_t k = 0; k < c; ++k) {
          if (k == t) {
            v += log_sigmoid(s[k]);
            g[k] = sigmoid(-s[k]) * inv_b;
          } else {
            v += log_sigmoid(-s[k]);
            g[k] = -sigmoid(s[k]) * inv_b;
          }
        }
        break;
      default: {
        const double lse = log_sum_exp(s);
        v = s[t] - lse;
        for (std::size_t k = 0; k < c; ++k) g[k] = -std::exp(s[k] - lse) * inv_b;
        g[t] += inv_b;
        break;
      }
    }
    values[i] = v;
  }
  double total = 0.0;
  for (double v : values) total += v;
  out.value = total * inv_b;
  return out;
}

LossGrad loss_sampled(const CriterionConfig& config, const ScoreBundle& bundle) {
  if (!is_sampled(config.kind)) throw Error("loss_sampled needs a sampled criterion");
  const std::size_t b = bundle.batch();
  const std::size_t k = bundle.num_samples();
  if (k == 0) throw Error("sampled criterion needs K >= 1");
  if (b == 0) throw Error("empty batch");
  if (bundle.s_samples.rows() != b || bundle.target_noise_logp.size() != b ||
      bundle.sample_noise_logp.size() != k)
    throw Error("score bundle shapes are inconsistent");
  if ((config.kind == CriterionKind::kBceCps || config.kind == CriterionKind::kCeCps) &&
      !(config.alpha && *config.alpha > 0.0))
    throw Error("CPS needs a positive alpha");
  require_finite(bundle.s_target, "scores");
  require_finite(bundle.s_samples.data(), "scores");
  for (double l : bundle.sample_noise_logp)
    if (!std::isfinite(l)) throw Error("noise probability of a drawn sample is zero");
  for (double l : bundle.target_noise_logp)
    if (!std::isfinite(l)) throw Error("noise probability of a target is zero");

  const bool with_target = config.include_target_in_samples;
  const std::size_t terms_per_pos = k + (with_target ? 1 : 0);
  const double log_k = std::log(static_cast<double>(k));
  const double inv_b = 1.0 / static_cast<double>(b);

  LossGrad out;
  out.d_s_target.assign(b, 0.0);
  out.d_s_samples = Matrix(b, k);
  std::vector<double> values(b);

#pragma omp parallel
  {
    std::vector<SampledTerm> terms(terms_per_pos);
    std::vector<double> grads(terms_per_pos);
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (std::size_t i = 0; i < b; ++i) {
      const auto s = bundle.s_samples.row(i);
      for (std::size_t j = 0; j < k; ++j) terms[j] = {s[j], bundle.sample_noise_logp[j]};
      if (with_target) terms[k] = {bundle.s_target[i], bundle.target_noise_logp[i]};
      double d_target = 0.0;
      values[i] = position_value(config, log_k, bundle.s_target[i], bundle.target_noise_logp[i],
                                 terms, d_target, grads, scratch);
      if (with_target) d_target += grads[k];
      out.d_s_target[i] = d_target * inv_b;
      auto g = out.d_s_samples.row(i);
      for (std::size_t j = 0; j < k; ++j) g[j] = grads[j] * inv_b;
    }
  }
  double total = 0.0;
  for (double v : values) total += v;
  out.value = total * inv_b;
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max(std::abs(analytic), floor);
  return std::abs(analytic - numeric) / scale;
}

double grad_check(const CriterionConfig& config, const ScoreBundle& bundle, double epsilon,
                  double floor) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw Error("epsilon must be in [1e-7, 1e-3]");
  const auto analytic = loss_sampled(config, bundle);
  ScoreBundle probe = bundle;
  double worst = 0.0;
  auto check = [&](double& slot, double a) {
    const double orig = slot;
    slot = orig + epsilon;
    const double up = loss_sampled(config, probe).value;
    slot = orig - epsilon;
    const double down = loss_sampled(config, probe).value;
    slot = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, relative_error(a, numeric, floor));
  };
  for (std::size_t i = 0; i < probe.batch(); ++i) check(probe.s_target[i], analytic.d_s_target[i]);
  for (std::size_t i = 0; i < probe.s_samples.size(); ++i)
    check(probe.s_samples.data()[i], analytic.d_s_samples.data()[i]);
  return worst;
}

double grad_check_full(CriterionKind kind, const Matrix& scores_all,
                       std::span<const TokenId> targets, double epsilon, double mse_rival_scale,
                       double floor) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw Error("epsilon must be in [1e-7, 1e-3]");
  const auto analytic = loss_full(kind, scores_all, targets, mse_rival_scale);
  Matrix probe = scores_all;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    double& slot = probe.data()[i];
    const double orig = slot;
    slot = orig + epsilon;
    const double up = loss_full(kind, probe, targets, mse_rival_scale).value;
    slot = orig - epsilon;
    const double down = loss_full(kind, probe, targets, mse_rival_scale).value;
    slot = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic.d_s_samples.data()[i];
    worst = std::max(worst, relative_error(a, numeric, floor));
  }
  return worst;
}

}  // namespace samplecrit
