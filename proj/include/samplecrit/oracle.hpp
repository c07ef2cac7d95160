#pragma once

#include <vector>

#include "samplecrit/criteria.hpp"
#include "samplecrit/error.hpp"
#include "samplecrit/rng.hpp"

namespace samplecrit {

/// Infinite-sample surrogate of a criterion for a single context: every
/// sampled sum over K draws is replaced by its expectation
/// sum_c K D(c) term(c), and for the CE family log E[sum] stands in for
/// E[log sum].
struct SurrogateProblem {
  CriterionKind kind = CriterionKind::kCe;
  std::vector<double> p;      // true posterior, strictly positive
  std::vector<double> noise;  // D, strictly positive
  std::size_t num_samples = 1;
  double alpha = 1.0;

  std::size_t size() const { return p.size(); }
  void validate() const;
};

/// A point in output space: raw scores and the activated outputs q (equal to
/// the raw scores for identity-activated CE kinds).
struct OptimumPoint {
  std::vector<double> raw;
  std::vector<double> activated;
  bool feasible = true;
  long iterations = 0;
};

/// Surrogate value at raw scores `s`.
double surrogate_value_raw(const SurrogateProblem& problem, const std::vector<double>& s);
/// Gradient of the surrogate with respect to the raw scores.
std::vector<double> surrogate_gradient_raw(const SurrogateProblem& problem,
                                           const std::vector<double>& s);

/// Surrogate value at activated outputs (q for sigmoid/exp kinds, s for the
/// identity-activated CE kinds). Throws when q lies outside its range.
double surrogate_value(const SurrogateProblem& problem, const std::vector<double>& activated);

/// Sup-norm of the surrogate gradient in the kind's output space: dF/dq for
/// the sigmoid kinds and BCE-NCE, dF/ds for CE, CE-MCS, CE-IS and CE-CPS,
/// and the box-projected dF/dg for CE-NCE (g the bounded NCE ratio).
double stationarity_residual(const SurrogateProblem& problem, const OptimumPoint& point);

/// Derived optimum. For CE-NCE a solution exists only when the spread of
/// log(p/D) is below one; otherwise `feasible` is false and the point is
/// the clamped best effort.
OptimumPoint closed_form_optimum(const SurrogateProblem& problem);

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Gradient ascent from s = 0 with Barzilai-Borwein steps and Armijo
/// backtracking, stopping once the raw-score gradient sup-norm is below
/// `tol`. CE-NCE is instead solved by projected ascent over the bounded
/// ratio g in [1e-6, 1 - 1e-6], where its surrogate is concave.
OptimumPoint numeric_optimum(const SurrogateProblem& problem, double tol = 1e-8,
                             long max_iters = 100000);

struct OptimumReport {
  OptimumPoint closed;
  OptimumPoint numeric;
  std::vector<double> p_closed;   // corrected, normalized
  std::vector<double> p_numeric;  // corrected, normalized
  double tv_distance = 0.0;
  double residual_closed = 0.0;
  double residual_numeric = 0.0;
  bool feasible = true;
};

OptimumReport compare_optima(const SurrogateProblem& problem, double tol = 1e-8);

/// Random problem with p and D drawn from weights uniform in [0.1, 1]; CPS
/// kinds get alpha = C / K. For CE-NCE `nce_feasible` draws p proportional
/// to D e^u with u uniform in [0, 0.8], which keeps the optimum inside the
/// clamp box.
SurrogateProblem random_problem(CriterionKind kind, std::size_t num_classes,
                                std::size_t num_samples, Rng& rng, bool nce_feasible = true);

double total_variation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace samplecrit
