#include "samplecrit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "samplecrit/correction.hpp"

namespace samplecrit {

namespace {

double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Weight of the rival term log(1 - q_c) in the BCE-type surrogates.
double rival_weight(const SurrogateProblem& pr, std::size_t c) {
  const double kd = static_cast<double>(pr.num_samples) * pr.noise[c];
  switch (pr.kind) {
    case CriterionKind::kBceMcs: return kd;
    case CriterionKind::kBceIs: return 1.0;
    case CriterionKind::kBceCps: return pr.alpha * kd;
    case CriterionKind::kBce: return 1.0 - pr.p[c];
    default: return 0.0;
  }
}

std::vector<double> shifted(const std::vector<double>& s, const SurrogateProblem& pr) {
  std::vector<double> out(s.size());
  for (std::size_t c = 0; c < s.size(); ++c) out[c] = s[c] + std::log(pr.noise[c]);
  return out;
}

// CE-NCE surrogate over the bounded ratio g.
double nce_ratio_value(const SurrogateProblem& pr, const std::vector<double>& g) {
  std::vector<double> a(g.size());
  double lin = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    lin += pr.p[c] * g[c];
    a[c] = g[c] + std::log(pr.noise[c]);
  }
  return lin - std::log(static_cast<double>(pr.num_samples)) - log_sum_exp(a);
}

std::vector<double> nce_ratio_gradient(const SurrogateProblem& pr, const std::vector<double>& g) {
  std::vector<double> a(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) a[c] = g[c] + std::log(pr.noise[c]);
  const double lse = log_sum_exp(a);
  std::vector<double> grad(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) grad[c] = pr.p[c] - std::exp(a[c] - lse);
  return grad;
}

// Ratios recovered from raw scores can miss the box edge by an ulp, hence
// the slack when deciding whether a coordinate sits on a bound.
double projected_residual(const std::vector<double>& g, const std::vector<double>& grad) {
  constexpr double kSlack = 1e-12;
  double r = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    double v = grad[c];
    if (g[c] <= kNceRatioFloor + kSlack) v = std::max(v, 0.0);
    if (g[c] >= kNceRatioCeil - kSlack) v = std::min(v, 0.0);
    r = std::max(r, std::abs(v));
  }
  return r;
}

void fill_activated(const SurrogateProblem& pr, OptimumPoint& pt) {
  pt.activated.resize(pt.raw.size());
  for (std::size_t c = 0; c < pt.raw.size(); ++c) {
    switch (activation(pr.kind)) {
      case Activation::kSigmoid: pt.activated[c] = sigmoid(pt.raw[c]); break;
      case Activation::kExp: pt.activated[c] = std::exp(pt.raw[c]); break;
      case Activation::kIdentity: pt.activated[c] = pt.raw[c]; break;
    }
  }
}

// Raw score and activated output for a bounded NCE ratio g.
void from_ratio(const SurrogateProblem& pr, const std::vector<double>& g, OptimumPoint& pt) {
  const double k = static_cast<double>(pr.num_samples);
  pt.raw.resize(g.size());
  pt.activated.resize(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) {
    const double kd = k * pr.noise[c];
    pt.activated[c] = kd * g[c] / (1.0 - g[c]);
    pt.raw[c] = std::log(kd) + std::log(g[c]) - std::log1p(-g[c]);
  }
}

std::vector<double> ratio_of(const SurrogateProblem& pr, const OptimumPoint& pt) {
  const double k = static_cast<double>(pr.num_samples);
  std::vector<double> g(pt.raw.size());
  for (std::size_t c = 0; c < g.size(); ++c)
    g[c] = sigmoid(pt.raw[c] - std::log(k * pr.noise[c]));
  return g;
}

OptimumPoint solve_nce_ratio(const SurrogateProblem& pr, double tol, long max_iters) {
  const std::size_t n = pr.size();
  std::vector<double> g(n, 0.5);
  auto project = [](std::vector<double>& v) {
    for (double& x : v) x = std::clamp(x, kNceRatioFloor, kNceRatioCeil);
  };
  double f = nce_ratio_value(pr, g);
  auto grad = nce_ratio_gradient(pr, g);
  double step = 1.0;
  double res = projected_residual(g, grad);
  long it = 0;
  for (; it < max_iters && res >= tol; ++it) {
    double t = step;
    std::vector<double> g_new(n), grad_new;
    double f_new = 0.0;
    bool accepted = false;
    while (t > 1e-30) {
      for (std::size_t c = 0; c < n; ++c) g_new[c] = g[c] + t * grad[c];
      project(g_new);
      f_new = nce_ratio_value(pr, g_new);
      double gain = 0.0;
      for (std::size_t c = 0; c < n; ++c) gain += grad[c] * (g_new[c] - g[c]);
      if (f_new >= f + 1e-4 * gain) {
        accepted = true;
        break;
      }
      grad_new = nce_ratio_gradient(pr, g_new);
      if (f_new >= f - 1e-13 * (1.0 + std::abs(f)) && projected_residual(g_new, grad_new) < res) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    grad_new = nce_ratio_gradient(pr, g_new);
    std::vector<double> sd(n), y(n);
    for (std::size_t c = 0; c < n; ++c) {
      sd[c] = g_new[c] - g[c];
      y[c] = grad_new[c] - grad[c];
    }
    const double curv = -dot(sd, y);
    step = curv > 0.0 ? std::clamp(dot(sd, sd) / curv, 1e-12, 1e12) : std::min(4.0 * t, 1e12);
    g.swap(g_new);
    grad.swap(grad_new);
    f = f_new;
    res = projected_residual(g, grad);
  }
  if (res >= tol) throw NonConvergence("CE-NCE oracle did not converge", res);
  OptimumPoint pt;
  from_ratio(pr, g, pt);
  pt.iterations = it;
  return pt;
}

}  // namespace

void SurrogateProblem::validate() const {
  if (p.empty() || p.size() != noise.size()) throw Error("surrogate problem shapes mismatch");
  double sp = 0.0, sd = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (!(p[c] > 0.0) || !(noise[c] > 0.0)) throw Error("surrogate needs strictly positive p and D");
    sp += p[c];
    sd += noise[c];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sd - 1.0) > 1e-9)
    throw Error("surrogate p and D must sum to one");
  if (num_samples == 0) throw Error("surrogate needs K >= 1");
  if (!(alpha > 0.0)) throw Error("surrogate needs alpha > 0");
}

double surrogate_value_raw(const SurrogateProblem& pr, const std::vector<double>& s) {
  const std::size_t n = pr.size();
  if (s.size() != n) throw Error("score vector has wrong size");
  const double k = static_cast<double>(pr.num_samples);
  double v = 0.0;
  switch (pr.kind) {
    case CriterionKind::kMse:
      for (std::size_t c = 0; c < n; ++c) {
        const double q = sigmoid(s[c]);
        v -= q * q - 2.0 * q * pr.p[c] + pr.p[c];
      }
      return v;
    case CriterionKind::kBce:
    case CriterionKind::kBceMcs:
    case CriterionKind::kBceIs:
    case CriterionKind::kBceCps:
      for (std::size_t c = 0; c < n; ++c)
        v += pr.p[c] * log_sigmoid(s[c]) + rival_weight(pr, c) * log_sigmoid(-s[c]);
      return v;
    case CriterionKind::kBceNce:
      for (std::size_t c = 0; c < n; ++c) {
        const double kd = k * pr.noise[c];
        const double x = s[c] - std::log(kd);
        v += pr.p[c] * log_sigmoid(x) + kd * log_sigmoid(-x);
      }
      return v;
    case CriterionKind::kCe:
    case CriterionKind::kCeIs:
      return std::inner_product(pr.p.begin(), pr.p.end(), s.begin(), 0.0) - log_sum_exp(s);
    case CriterionKind::kCeMcs:
    case CriterionKind::kCeCps: {
      const double scale = pr.kind == CriterionKind::kCeCps ? pr.alpha * k : k;
      return std::inner_product(pr.p.begin(), pr.p.end(), s.begin(), 0.0) - std::log(scale) -
             log_sum_exp(shifted(s, pr));
    }
    case CriterionKind::kCeNce: {
      std::vector<double> g(n);
      for (std::size_t c = 0; c < n; ++c) g[c] = sigmoid(s[c] - std::log(k * pr.noise[c]));
      return nce_ratio_value(pr, g);
    }
  }
  throw Error("unknown criterion");
}

std::vector<double> surrogate_gradient_raw(const SurrogateProblem& pr, const std::vector<double>& s) {
  const std::size_t n = pr.size();
  if (s.size() != n) throw Error("score vector has wrong size");
  const double k = static_cast<double>(pr.num_samples);
  std::vector<double> g(n);
  switch (pr.kind) {
    case CriterionKind::kMse:
      for (std::size_t c = 0; c < n; ++c) {
        const double q = sigmoid(s[c]);
        g[c] = -2.0 * (q - pr.p[c]) * q * (1.0 - q);
      }
      return g;
    case CriterionKind::kBce:
    case CriterionKind::kBceMcs:
    case CriterionKind::kBceIs:
    case CriterionKind::kBceCps:
      for (std::size_t c = 0; c < n; ++c)
        g[c] = pr.p[c] * sigmoid(-s[c]) - rival_weight(pr, c) * sigmoid(s[c]);
      return g;
    case CriterionKind::kBceNce:
      for (std::size_t c = 0; c < n; ++c) {
        const double kd = k * pr.noise[c];
        const double x = s[c] - std::log(kd);
        g[c] = pr.p[c] * sigmoid(-x) - kd * sigmoid(x);
      }
      return g;
    case CriterionKind::kCe:
    case CriterionKind::kCeIs: {
      const double lse = log_sum_exp(s);
      for (std::size_t c = 0; c < n; ++c) g[c] = pr.p[c] - std::exp(s[c] - lse);
      return g;
    }
    case CriterionKind::kCeMcs:
    case CriterionKind::kCeCps: {
      const auto a = shifted(s, pr);
      const double lse = log_sum_exp(a);
      for (std::size_t c = 0; c < n; ++c) g[c] = pr.p[c] - std::exp(a[c] - lse);
      return g;
    }
    case CriterionKind::kCeNce: {
      std::vector<double> ratio(n);
      for (std::size_t c = 0; c < n; ++c) ratio[c] = sigmoid(s[c] - std::log(k * pr.noise[c]));
      auto dg = nce_ratio_gradient(pr, ratio);
      for (std::size_t c = 0; c < n; ++c) g[c] = dg[c] * ratio[c] * (1.0 - ratio[c]);
      return g;
    }
  }
  throw Error("unknown criterion");
}

double surrogate_value(const SurrogateProblem& pr, const std::vector<double>& activated) {
  std::vector<double> s(activated.size());
  for (std::size_t c = 0; c < s.size(); ++c) {
    const double q = activated[c];
    switch (activation(pr.kind)) {
      case Activation::kSigmoid:
        if (!(q > 0.0 && q < 1.0)) throw Error("output outside (0, 1)");
        s[c] = std::log(q) - std::log1p(-q);
        break;
      case Activation::kExp:
        if (!(q > 0.0) || !std::isfinite(q)) throw Error("output must be positive");
        s[c] = std::log(q);
        break;
      case Activation::kIdentity:
        if (!std::isfinite(q)) throw Error("score must be finite");
        s[c] = q;
        break;
    }
  }
  return surrogate_value_raw(pr, s);
}

double stationarity_residual(const SurrogateProblem& pr, const OptimumPoint& pt) {
  const std::size_t n = pr.size();
  const double k = static_cast<double>(pr.num_samples);
  switch (pr.kind) {
    case CriterionKind::kCe:
    case CriterionKind::kCeIs:
    case CriterionKind::kCeMcs:
    case CriterionKind::kCeCps: return sup_norm(surrogate_gradient_raw(pr, pt.raw));
    case CriterionKind::kCeNce: {
      const auto g = ratio_of(pr, pt);
      return projected_residual(g, nce_ratio_gradient(pr, g));
    }
    default: break;
  }
  double r = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double q = pt.activated[c];
    const double p = pr.p[c];
    double d = 0.0;
    if (pr.kind == CriterionKind::kMse) {
      d = -2.0 * (q - p);
    } else if (pr.kind == CriterionKind::kBceNce) {
      const double kd = k * pr.noise[c];
      d = p / q - (p + kd) / (q + kd);
    } else {
      d = p / q - rival_weight(pr, c) / (1.0 - q);
    }
    r = std::max(r, std::abs(d));
  }
  return r;
}

OptimumPoint closed_form_optimum(const SurrogateProblem& pr) {
  pr.validate();
  const std::size_t n = pr.size();
  OptimumPoint pt;
  pt.raw.resize(n);
  pt.activated.resize(n);
  switch (pr.kind) {
    case CriterionKind::kMse:
    case CriterionKind::kBce:
      for (std::size_t c = 0; c < n; ++c) {
        pt.activated[c] = pr.p[c];
        pt.raw[c] = std::log(pr.p[c]) - std::log1p(-pr.p[c]);
      }
      return pt;
    case CriterionKind::kBceMcs:
    case CriterionKind::kBceIs:
    case CriterionKind::kBceCps:
      for (std::size_t c = 0; c < n; ++c) {
        // q = p / (p + w) with w the rival weight.
        const double w = rival_weight(pr, c);
        pt.activated[c] = pr.p[c] / (pr.p[c] + w);
        pt.raw[c] = std::log(pr.p[c]) - std::log(w);
      }
      return pt;
    case CriterionKind::kBceNce:
      for (std::size_t c = 0; c < n; ++c) {
        pt.activated[c] = pr.p[c];
        pt.raw[c] = std::log(pr.p[c]);
      }
      return pt;
    case CriterionKind::kCe:
    case CriterionKind::kCeIs:
      for (std::size_t c = 0; c < n; ++c) pt.raw[c] = std::log(pr.p[c]);
      break;
    case CriterionKind::kCeMcs:
    case CriterionKind::kCeCps:
      for (std::size_t c = 0; c < n; ++c) pt.raw[c] = std::log(pr.p[c]) - std::log(pr.noise[c]);
      break;
    case CriterionKind::kCeNce: {
      // Need D e^g proportional to p with every g inside the clamp box.
      std::vector<double> r(n);
      for (std::size_t c = 0; c < n; ++c) r[c] = std::log(pr.p[c]) - std::log(pr.noise[c]);
      const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
      const double spread = *hi - *lo;
      const double center = 0.5 * (*hi + *lo);
      std::vector<double> g(n);
      for (std::size_t c = 0; c < n; ++c)
        g[c] = std::clamp(r[c] - center + 0.5, kNceRatioFloor, kNceRatioCeil);
      from_ratio(pr, g, pt);
      pt.feasible = spread < kNceRatioCeil - kNceRatioFloor;
      return pt;
    }
  }
  pt.activated = pt.raw;
  return pt;
}

OptimumPoint numeric_optimum(const SurrogateProblem& pr, double tol, long max_iters) {
  pr.validate();
  if (!(tol > 0.0)) throw Error("tolerance must be positive");
  if (pr.kind == CriterionKind::kCeNce) {
    auto pt = solve_nce_ratio(pr, tol, max_iters);
    pt.feasible = closed_form_optimum(pr).feasible;
    return pt;
  }
  const std::size_t n = pr.size();
  std::vector<double> s(n, 0.0);
  double f = surrogate_value_raw(pr, s);
  auto grad = surrogate_gradient_raw(pr, s);
  double res = sup_norm(grad);
  double step = 1.0;
  long it = 0;
  for (; it < max_iters && res >= tol; ++it) {
    const double gg = dot(grad, grad);
    double t = step;
    std::vector<double> s_new(n), grad_new;
    double f_new = 0.0;
    bool accepted = false;
    while (t > 1e-30) {
      for (std::size_t c = 0; c < n; ++c) s_new[c] = s[c] + t * grad[c];
      f_new = surrogate_value_raw(pr, s_new);
      if (f_new >= f + 1e-4 * t * gg) {
        accepted = true;
        break;
      }
      // Near the optimum the Armijo gain drowns in rounding; accept steps
      // that keep the value and shrink the residual.
      grad_new = surrogate_gradient_raw(pr, s_new);
      if (f_new >= f - 1e-13 * (1.0 + std::abs(f)) && sup_norm(grad_new) < res) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    grad_new = surrogate_gradient_raw(pr, s_new);
    std::vector<double> sd(n), y(n);
    for (std::size_t c = 0; c < n; ++c) {
      sd[c] = s_new[c] - s[c];
      y[c] = grad_new[c] - grad[c];
    }
    const double curv = -dot(sd, y);
    step = curv > 0.0 ? std::clamp(dot(sd, sd) / curv, 1e-12, 1e12) : std::min(4.0 * t, 1e12);
    s.swap(s_new);
    grad.swap(grad_new);
    f = f_new;
    res = sup_norm(grad);
  }
  if (res >= tol) throw NonConvergence("oracle ascent did not converge", res);
  OptimumPoint pt;
  pt.raw = std::move(s);
  pt.iterations = it;
  fill_activated(pr, pt);
  return pt;
}

SurrogateProblem random_problem(CriterionKind kind, std::size_t num_classes,
                                std::size_t num_samples, Rng& rng, bool nce_feasible) {
  if (num_classes == 0 || num_samples == 0) throw Error("random_problem needs C, K >= 1");
  auto normalize = [](std::vector<double>& v) {
    double z = 0.0;
    for (double x : v) z += x;
    for (double& x : v) x /= z;
  };
  SurrogateProblem pr;
  pr.kind = kind;
  pr.num_samples = num_samples;
  pr.alpha = static_cast<double>(num_classes) / static_cast<double>(num_samples);
  pr.noise.resize(num_classes);
  for (double& d : pr.noise) d = rng.uniform(0.1, 1.0);
  normalize(pr.noise);
  pr.p.resize(num_classes);
  if (kind == CriterionKind::kCeNce && nce_feasible) {
    for (std::size_t c = 0; c < num_classes; ++c)
      pr.p[c] = pr.noise[c] * std::exp(rng.uniform(0.0, 0.8));
  } else {
    for (double& x : pr.p) x = rng.uniform(0.1, 1.0);
  }
  normalize(pr.p);
  return pr;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("distributions differ in size");
  double t = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) t += std::abs(a[i] - b[i]);
  return 0.5 * t;
}

OptimumReport compare_optima(const SurrogateProblem& pr, double tol) {
  OptimumReport rep;
  rep.closed = closed_form_optimum(pr);
  rep.numeric = numeric_optimum(pr, tol);
  Corrector corr(pr.kind, [&] {
    std::vector<double> l(pr.size());
    for (std::size_t c = 0; c < l.size(); ++c) l[c] = std::log(pr.noise[c]);
    return l;
  }(), pr.num_samples, pr.alpha);
  rep.p_closed = normalized_posterior(corr, rep.closed.raw).p;
  rep.p_numeric = normalized_posterior(corr, rep.numeric.raw).p;
  rep.tv_distance = total_variation(rep.p_closed, rep.p_numeric);
  rep.residual_closed = stationarity_residual(pr, rep.closed);
  rep.residual_numeric = stationarity_residual(pr, rep.numeric);
  rep.feasible = rep.closed.feasible;
  return rep;
}

}  // namespace samplecrit
