#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <vector>

#include "samplecrit/criteria.hpp"
#include "samplecrit/error.hpp"
#include "samplecrit/noise.hpp"
#include "samplecrit/rng.hpp"
#include "samplecrit/trainer.hpp"

using namespace samplecrit;

TEST_SUITE("noise") {

TEST_CASE("log-uniform pmf for four classes") {
  auto d = log_uniform(4);
  const double expected[] = {0.43068, 0.25193, 0.17875, 0.13864};
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(d.pmf(c) == doctest::Approx(expected[c]).epsilon(1e-4));
    CHECK(d.pmf(c) == doctest::Approx(std::log1p(1.0 / (c + 1.0)) / std::log(5.0)));
    CHECK(d.log_pmf(c) == doctest::Approx(std::log(d.pmf(c))));
  }
  CHECK(log_uniform(1).pmf(0) == 1.0);
  CHECK_THROWS(log_uniform(0));
}

TEST_CASE("log-uniform is decreasing and sums to one") {
  auto d = log_uniform(50000);
  double sum = 0.0;
  for (std::size_t c = 0; c < d.size(); ++c) {
    sum += d.pmf(c);
    if (c > 0) CHECK(d.pmf(c) < d.pmf(c - 1));
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("smoothed unigram") {
  std::vector<std::uint64_t> counts = {3, 1, 0};
  auto d = smoothed_unigram(counts, 1.0);
  CHECK(d.pmf(0) == doctest::Approx(4.0 / 7.0));
  CHECK(d.pmf(1) == doctest::Approx(2.0 / 7.0));
  CHECK(d.pmf(2) == doctest::Approx(1.0 / 7.0));

  std::vector<std::uint64_t> zeros = {0, 0, 0, 0};
  auto flat = smoothed_unigram(zeros, 1.0);
  for (double p : flat.pmf()) CHECK(p == doctest::Approx(0.25));

  std::vector<std::uint64_t> even = {1, 1};
  auto e = smoothed_unigram(even, 1e-12);
  CHECK(e.pmf(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(e.pmf(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("alias tables") {
  std::vector<double> u4(4, 0.25);
  for (double p : build_alias(u4).prob) CHECK(p == doctest::Approx(1.0).epsilon(1e-15));

  std::vector<double> half = {0.5, 0.5};
  auto h = build_alias(half);
  CHECK(h.prob[0] == 1.0);
  CHECK(h.prob[1] == 1.0);

  std::vector<double> skew = {0.75, 0.25};
  auto r = build_alias(skew).reconstruct();
  CHECK(std::abs(r[0] - 0.75) < 1e-12);
  CHECK(std::abs(r[1] - 0.25) < 1e-12);
}

TEST_CASE("alias reconstruction of random pmfs") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t c = 1 + rng.below(64);
    std::vector<double> pmf(c);
    double z = 0.0;
    for (auto& p : pmf) z += (p = rng.uniform(0.01, 1.0));
    for (auto& p : pmf) p /= z;
    auto back = build_alias(pmf).reconstruct();
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(back[i] - pmf[i]) < 1e-12);
  }
}

TEST_CASE("alias draws pass a chi-square test") {
  constexpr std::size_t C = 100;
  constexpr std::size_t N = 1000000;
  auto d = log_uniform(C);
  auto table = build_alias(d);
  Rng rng(2024);
  auto draws = draw_shared(table, N, rng);
  std::vector<double> counts(C, 0.0);
  for (auto id : draws.ids) counts[static_cast<std::size_t>(id)] += 1.0;
  double chi2 = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    double e = N * d.pmf(c);
    chi2 += (counts[c] - e) * (counts[c] - e) / e;
  }
  boost::math::chi_squared dist(C - 1);
  double critical = boost::math::quantile(boost::math::complement(dist, 0.001));
  CHECK(chi2 < critical);
}

TEST_CASE("top classes of a million draws sit within three standard errors") {
  auto d = log_uniform(1000);
  auto table = build_alias(d);
  Rng rng(7);
  auto draws = draw_shared(table, 1000000, rng);
  std::vector<double> counts(10, 0.0);
  for (auto id : draws.ids)
    if (id < 10) counts[static_cast<std::size_t>(id)] += 1.0;
  for (std::size_t c = 0; c < 10; ++c) {
    double freq = counts[c] / 1e6;
    double se = std::sqrt(d.pmf(c) * (1 - d.pmf(c)) / 1e6);
    CHECK(std::abs(freq - d.pmf(c)) < 3 * se);
  }
}

TEST_CASE("shared draws") {
  auto table = build_alias(log_uniform(50));
  Rng a(5), b(5);
  CHECK(draw_shared(table, 64, a).ids == draw_shared(table, 64, b).ids);
  CHECK_THROWS(draw_shared(table, 0, a));

  auto single = build_alias(log_uniform(1));
  for (auto id : draw_shared(single, 20, a).ids) CHECK(id == 0);
}

TEST_CASE("training defaults: 8192 log-uniform samples") {
  TrainConfig t;
  CHECK(t.criterion.num_samples == 8192);
  CHECK(t.noise == NoiseKind::kLogUniform);
}

TEST_CASE("noise kind names") {
  for (auto k : {NoiseKind::kLogUniform, NoiseKind::kSmoothedUnigram, NoiseKind::kUniform})
    CHECK(parse_noise_kind(to_string(k)) == k);
  CHECK_THROWS(parse_noise_kind("zipf"));
}

}
