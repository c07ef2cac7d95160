#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "samplecrit/correction.hpp"
#include "samplecrit/oracle.hpp"
#include "samplecrit/rng.hpp"

using namespace samplecrit;

namespace {

SurrogateProblem problem(CriterionKind kind, std::vector<double> p, std::vector<double> d,
                         std::size_t k, double alpha = 1.0) {
  SurrogateProblem pr;
  pr.kind = kind;
  pr.p = std::move(p);
  pr.noise = std::move(d);
  pr.num_samples = k;
  pr.alpha = alpha;
  return pr;
}

// Largest |dF/ds| estimated by central differences of the raw-score surrogate.
double fd_gradient_norm(const SurrogateProblem& pr, std::vector<double> s) {
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t c = 0; c < s.size(); ++c) {
    const double orig = s[c];
    s[c] = orig + h;
    const double up = surrogate_value_raw(pr, s);
    s[c] = orig - h;
    const double down = surrogate_value_raw(pr, s);
    s[c] = orig;
    worst = std::max(worst, std::abs(up - down) / (2 * h));
  }
  return worst;
}

constexpr CriterionKind kClosedForm[] = {
    CriterionKind::kMse,    CriterionKind::kBce,   CriterionKind::kCe,
    CriterionKind::kBceMcs, CriterionKind::kBceIs, CriterionKind::kBceCps,
    CriterionKind::kBceNce, CriterionKind::kCeMcs, CriterionKind::kCeIs,
    CriterionKind::kCeCps};

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("closed forms for single classes") {
  // BCE-MCS: q = p / (p + K D).
  auto mcs = closed_form_optimum(problem(CriterionKind::kBceMcs, {0.5, 0.5}, {0.01, 0.99}, 100));
  CHECK(mcs.activated[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  // BCE-IS: q = p / (p + 1).
  auto is = closed_form_optimum(problem(CriterionKind::kBceIs, {1.0}, {1.0}, 7));
  CHECK(is.activated[0] == doctest::Approx(0.5).epsilon(1e-14));
  // BCE-CPS with alpha = C / K: q = p / (p + C D).
  auto cps = closed_form_optimum(problem(CriterionKind::kBceCps, {0.3, 0.7}, {0.6, 0.4}, 4, 0.5));
  CHECK(cps.activated[0] == doctest::Approx(0.3 / (0.3 + 2 * 0.6)).epsilon(1e-14));
  CHECK(cps.activated[1] == doctest::Approx(0.7 / (0.7 + 2 * 0.4)).epsilon(1e-14));
}

TEST_CASE("numeric optima of two-class problems") {
  auto bce = numeric_optimum(problem(CriterionKind::kBce, {0.8, 0.2}, {0.5, 0.5}, 1));
  CHECK(std::abs(bce.activated[0] - 0.8) < 1e-6);
  CHECK(std::abs(bce.activated[1] - 0.2) < 1e-6);

  auto mcs = numeric_optimum(problem(CriterionKind::kBceMcs, {0.8, 0.2}, {0.5, 0.5}, 10));
  CHECK(std::abs(mcs.activated[0] - 0.8 / 5.8) < 1e-6);
  CHECK(std::abs(mcs.activated[1] - 0.2 / 5.2) < 1e-6);
}

TEST_CASE("CE-MCS at K = 32 recovers the posterior") {
  Rng rng(3);
  auto pr = random_problem(CriterionKind::kCeMcs, 50, 32, rng);
  CHECK(compare_optima(pr).tv_distance < 1e-4);
}

TEST_CASE("p equal to uniform noise corrects to p for every kind") {
  std::vector<double> u(8, 0.125);
  for (auto kind : kAllCriteria) {
    CAPTURE(to_string(kind));
    auto rep = compare_optima(problem(kind, u, u, 5, 8.0 / 5.0));
    CHECK(rep.tv_distance < 1e-8);
    for (double p : rep.p_closed) CHECK(p == doctest::Approx(0.125).epsilon(1e-9));
  }
}

TEST_CASE("MSE surrogate at q = p") {
  std::vector<double> p = {0.1, 0.6, 0.3};
  double expected = 0.0;
  for (double x : p) expected -= x * (1 - x);
  CHECK(surrogate_value(problem(CriterionKind::kMse, p, {0.2, 0.3, 0.5}, 1), p) ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("closed forms are stationary points of the surrogate") {
  Rng rng(11);
  for (auto kind : kClosedForm) {
    CAPTURE(to_string(kind));
    for (std::size_t k : {5u, 50u}) {
      auto pr = random_problem(kind, 20, k, rng);
      auto closed = closed_form_optimum(pr);
      CHECK(fd_gradient_norm(pr, closed.raw) < 1e-7);
      CHECK(stationarity_residual(pr, closed) < 1e-6);
      auto numeric = numeric_optimum(pr);
      CHECK(surrogate_value_raw(pr, closed.raw) >= surrogate_value_raw(pr, numeric.raw) - 1e-6);
    }
  }
}

TEST_CASE("corrected closed forms equal p where the optimum needs no noise") {
  Rng rng(12);
  for (auto kind : {CriterionKind::kMse, CriterionKind::kBce, CriterionKind::kBceNce}) {
    auto pr = random_problem(kind, 30, 5, rng);
    auto closed = closed_form_optimum(pr);
    for (std::size_t c = 0; c < pr.size(); ++c)
      CHECK(std::abs(closed.activated[c] - pr.p[c]) < 1e-9);
  }
}

TEST_CASE("CE surrogate is shift invariant") {
  Rng rng(13);
  for (auto kind : {CriterionKind::kCe, CriterionKind::kCeMcs, CriterionKind::kCeIs,
                    CriterionKind::kCeCps}) {
    auto pr = random_problem(kind, 10, 5, rng);
    std::vector<double> s(10), t(10);
    for (std::size_t c = 0; c < 10; ++c) t[c] = (s[c] = rng.normal()) - 3.25;
    CHECK(surrogate_value_raw(pr, s) == doctest::Approx(surrogate_value_raw(pr, t)).epsilon(1e-12));
  }
}

TEST_CASE("CE-NCE feasibility follows the spread of p / D") {
  std::vector<double> d = {0.25, 0.25, 0.25, 0.25};
  // Ratio spread 2 < e: feasible.
  auto ok = compare_optima(problem(CriterionKind::kCeNce, {0.2, 0.2, 0.2, 0.4}, d, 5));
  CHECK(ok.feasible);
  CHECK(ok.tv_distance < 1e-3);
  CHECK(ok.residual_numeric < 1e-6);
  // Spread 4 > e: flagged.
  auto bad = compare_optima(problem(CriterionKind::kCeNce, {0.1, 0.2, 0.3, 0.4}, d, 5));
  CHECK_FALSE(bad.feasible);
  CHECK(bad.residual_numeric < 1e-6);

  Rng rng(14);
  for (int i = 0; i < 10; ++i) {
    auto pr = random_problem(CriterionKind::kCeNce, 50, 5, rng, i % 2 == 0);
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t c = 0; c < 50; ++c) {
      lo = std::min(lo, pr.p[c] / pr.noise[c]);
      hi = std::max(hi, pr.p[c] / pr.noise[c]);
    }
    CHECK(closed_form_optimum(pr).feasible == (hi / lo < std::exp(1.0 - 2e-6)));
  }
}

TEST_CASE("ascent that runs out of iterations reports non-convergence") {
  Rng rng(15);
  auto pr = random_problem(CriterionKind::kBceMcs, 50, 5, rng);
  CHECK_THROWS_AS(numeric_optimum(pr, 1e-12, 1), NonConvergence);
}

TEST_CASE("surrogate inputs are validated") {
  auto pr = problem(CriterionKind::kBce, {0.5, 0.5}, {0.5, 0.5}, 1);
  CHECK_THROWS(surrogate_value(pr, {1.0, 0.5}));
  CHECK_THROWS(closed_form_optimum(problem(CriterionKind::kBce, {0.5, 0.6}, {0.5, 0.5}, 1)));
  CHECK_THROWS(closed_form_optimum(problem(CriterionKind::kBce, {1.0, 0.0}, {0.5, 0.5}, 1)));
}

TEST_CASE("total variation") {
  CHECK(total_variation({1.0, 0.0}, {0.0, 1.0}) == 1.0);
  CHECK(total_variation({0.5, 0.5}, {0.25, 0.75}) == 0.25);
}

}
