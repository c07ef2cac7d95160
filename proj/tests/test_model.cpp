#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include "samplecrit/error.hpp"
#include "samplecrit/model.hpp"
#include "samplecrit/rng.hpp"

using namespace samplecrit;

namespace {

ModelConfig small_config(std::size_t order = 2) {
  ModelConfig c;
  c.order = order;
  c.d_emb = 3;
  c.d_hidden = 4;
  c.init_scale = 0.5;
  c.seed = 5;
  return c;
}

Matrix dense(const SparseRows& rows) {
  Matrix m(rows.num_rows(), rows.width());
  for (std::size_t i = 0; i < rows.touched(); ++i) {
    auto src = rows.slot(i);
    auto dst = m.row(static_cast<std::size_t>(rows.ids()[i]));
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k];
  }
  return m;
}

// sum_b sum_j w(b, j) * score(b, ids[j]) computed by a fresh forward pass.
double weighted_scores(const ModelParams& p, const std::vector<TokenId>& contexts,
                       const std::vector<TokenId>& ids, const Matrix& w) {
  Matrix s = forward_subset(p, contexts, ids);
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) total += s.data()[i] * w.data()[i];
  return total;
}

// Compares every coordinate of `analytic` with central differences of f
// with respect to `values`.
void check_block(std::vector<double>& values, const std::vector<double>& analytic,
                 const std::function<double()>& f, const char* name) {
  CAPTURE(name);
  REQUIRE(values.size() == analytic.size());
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = f();
    values[i] = orig - h;
    const double down = f();
    values[i] = orig;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(analytic[i])));
  }
  CHECK(worst < 1e-7);
}

template <class F>
double best_seconds(F&& f, int reps = 3) {
  double best = INFINITY;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count") {
  ModelConfig c;
  c.order = 2;
  c.d_emb = 8;
  c.d_hidden = 16;
  auto p = init_params(c, 1000);
  const std::size_t C = 1000, e = 8, h = 16, m = 2;
  CHECK(p.parameter_count() == C * e + h * m * e + h + C * h + C);
  CHECK(p.parameter_count() == 25272);
}

TEST_CASE("initialisation") {
  auto a = init_params(small_config(), 30);
  auto b = init_params(small_config(), 30);
  CHECK(a.embedding == b.embedding);
  CHECK(a.hidden_w == b.hidden_w);
  CHECK(a.output_w == b.output_w);
  for (double x : a.embedding.data()) CHECK(std::abs(x) <= 0.5);

  auto other = small_config();
  other.seed = 6;
  CHECK_FALSE(init_params(other, 30).output_w == a.output_w);

  auto zero = small_config();
  zero.init_scale = 0.0;
  auto z = init_params(zero, 30);
  for (double x : z.output_w.data()) CHECK(x == 0.0);
  for (double x : z.hidden_w.data()) CHECK(x == 0.0);
  for (double x : z.output_b) CHECK(x == doctest::Approx(-std::log(30.0)));
  for (double x : z.hidden_b) CHECK(x == 0.0);

  auto biased = small_config();
  biased.output_bias = 0.25;
  for (double x : init_params(biased, 30).output_b) CHECK(x == 0.25);
}

TEST_CASE("subset scores agree with the full forward pass") {
  auto p = init_params(small_config(), 50);
  Rng rng(1);
  std::vector<TokenId> contexts(6 * 2);
  for (auto& t : contexts) t = static_cast<TokenId>(rng.below(50));
  auto cache = encode_contexts(p, contexts);
  Matrix all = forward_all(p, cache);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> ids(1 + rng.below(60));
    for (auto& id : ids) id = static_cast<TokenId>(rng.below(50));
    Matrix sub = forward_subset(p, cache, ids);
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t j = 0; j < ids.size(); ++j)
        CHECK(std::abs(sub(b, j) - all(b, static_cast<std::size_t>(ids[j]))) < 1e-12);
  }
  std::vector<TokenId> targets = {0, 49, 3, 3, 7, 1};
  auto t = forward_targets(p, cache, targets);
  for (std::size_t b = 0; b < 6; ++b)
    CHECK(std::abs(t[b] - all(b, static_cast<std::size_t>(targets[b]))) < 1e-12);

  std::vector<TokenId> bad = {50};
  CHECK_THROWS_WITH(forward_subset(p, cache, bad), doctest::Contains("class id out of range"));
}

TEST_CASE("zero weights score every class with the bias") {
  auto c = small_config();
  c.init_scale = 0.0;
  auto p = init_params(c, 10);
  std::vector<TokenId> ctx = {1, 2};
  Matrix s = forward_all(p, ctx);
  for (double x : s.data()) CHECK(x == doctest::Approx(-std::log(10.0)));
}

TEST_CASE("feedforward backward matches finite differences on every block") {
  auto p = init_params(small_config(), 12);
  Rng rng(2);
  std::vector<TokenId> contexts = {1, 2, 2, 5, 0, 1};
  std::vector<TokenId> ids = {3, 7, 3, 11};
  Matrix w(3, 4);
  for (auto& x : w.data()) x = rng.normal();
  std::vector<TokenId> targets = {4, 3, 9};
  std::vector<double> dt = {0.3, -1.1, 0.7};

  auto grads = p.make_grads();
  auto cache = encode_contexts(p, contexts);
  backward(p, cache, ids, w, targets, dt, grads);

  auto objective = [&] {
    auto c = encode_contexts(p, contexts);
    double total = weighted_scores(p, contexts, ids, w);
    auto ts = forward_targets(p, c, targets);
    for (std::size_t b = 0; b < 3; ++b) total += dt[b] * ts[b];
    return total;
  };
  check_block(p.embedding.data(), dense(grads.embedding).data(), objective, "embedding");
  check_block(p.hidden_w.data(), grads.hidden_w.data(), objective, "hidden_w");
  check_block(p.hidden_b, grads.hidden_b, objective, "hidden_b");
  check_block(p.output_w.data(), dense(grads.output_w).data(), objective, "output_w");
  check_block(p.output_b, dense(grads.output_b).data(), objective, "output_b");
}

TEST_CASE("full backward matches finite differences") {
  auto p = init_params(small_config(1), 7);
  Rng rng(3);
  std::vector<TokenId> contexts = {1, 6};
  Matrix w(2, 7);
  for (auto& x : w.data()) x = rng.normal();
  auto grads = p.make_grads();
  backward_all(p, encode_contexts(p, contexts), w, grads);
  std::vector<TokenId> all = {0, 1, 2, 3, 4, 5, 6};
  auto objective = [&] { return weighted_scores(p, contexts, all, w); };
  check_block(p.output_w.data(), dense(grads.output_w).data(), objective, "output_w");
  check_block(p.embedding.data(), dense(grads.embedding).data(), objective, "embedding");
}

TEST_CASE("zero upstream gives zero gradients") {
  auto p = init_params(small_config(), 12);
  std::vector<TokenId> contexts = {1, 2};
  std::vector<TokenId> ids = {3, 4};
  auto grads = p.make_grads();
  backward(p, encode_contexts(p, contexts), ids, Matrix(1, 2), {}, {}, grads);
  CHECK(grads.squared_norm() == 0.0);
}

TEST_CASE("duplicate ids accumulate") {
  auto p = init_params(small_config(), 12);
  std::vector<TokenId> contexts = {1, 2, 3, 4};
  auto cache = encode_contexts(p, contexts);
  Matrix twice(2, 2);
  twice(0, 0) = 0.5, twice(0, 1) = 0.25, twice(1, 0) = -1.0, twice(1, 1) = 2.0;
  Matrix once(2, 1);
  once(0, 0) = 0.75, once(1, 0) = 1.0;
  std::vector<TokenId> dup = {5, 5}, single = {5};
  auto g1 = p.make_grads(), g2 = p.make_grads();
  backward(p, cache, dup, twice, {}, {}, g1);
  backward(p, cache, single, once, {}, {}, g2);
  Matrix a = dense(g1.output_w), b = dense(g2.output_w);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]));
  for (std::size_t i = 0; i < g1.hidden_w.size(); ++i)
    CHECK(g1.hidden_w.data()[i] == doctest::Approx(g2.hidden_w.data()[i]));
}

TEST_CASE("tabular model looks up its rows") {
  auto c = small_config(1);
  c.variant = ModelVariant::kTabular;
  std::vector<std::vector<TokenId>> contexts = {{0}, {3}};
  auto p = init_tabular(c, 5, contexts);
  p.table(1, 2) = 4.5;
  std::vector<TokenId> ctx = {3, 0};
  Matrix s = forward_all(p, ctx);
  CHECK(s(0, 2) == 4.5);
  CHECK(s(1, 2) == p.table(0, 2));
  std::vector<TokenId> unseen = {4};
  CHECK_THROWS_WITH(forward_all(p, unseen), "unseen context");

  // Gradient lands on the table row of the context.
  auto grads = p.make_grads();
  std::vector<TokenId> ids = {2};
  Matrix w(2, 1, 1.0);
  backward(p, encode_contexts(p, ctx), ids, w, {}, {}, grads);
  Matrix g = dense(grads.table);
  CHECK(g(0, 2) == 1.0);
  CHECK(g(1, 2) == 1.0);
  CHECK(grads.squared_norm() == 2.0);
}

TEST_CASE("checkpoints round-trip") {
  auto p = init_params(small_config(), 20);
  p.output_b[3] = 1.0 / 3.0;
  auto path = std::filesystem::temp_directory_path() / "samplecrit_model_test.bin";
  save_checkpoint(p, path, R"({"note":"x"})");
  std::string extra;
  auto q = load_checkpoint(path, &extra);
  CHECK(extra.find("\"note\"") != std::string::npos);
  CHECK(q.num_classes == 20);
  CHECK(q.config.order == 2);
  CHECK(q.embedding == p.embedding);
  CHECK(q.hidden_w == p.hidden_w);
  CHECK(q.hidden_b == p.hidden_b);
  CHECK(q.output_w == p.output_w);
  CHECK(q.output_b == p.output_b);

  auto tc = small_config(1);
  tc.variant = ModelVariant::kTabular;
  auto t = init_tabular(tc, 6, {{1}, {4}});
  save_checkpoint(t, path);
  auto u = load_checkpoint(path);
  CHECK(u.table == t.table);
  CHECK(u.table_contexts == t.table_contexts);
  std::vector<TokenId> ctx = {4};
  CHECK(u.table_row(ctx) == t.table_row(ctx));

  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("updates reject non-finite parameters") {
  auto p = init_params(small_config(), 8);
  auto g = p.make_grads();
  g.hidden_b[0] = INFINITY;
  CHECK_THROWS_WITH(apply_update(p, g, 1.0), "divergence");
}

TEST_CASE("scoring a subset is cheaper than scoring the vocabulary") {
  ModelConfig c;
  c.order = 2;
  auto p = init_params(c, 50000);
  Rng rng(4);
  std::vector<TokenId> contexts(64 * 2);
  for (auto& t : contexts) t = static_cast<TokenId>(rng.below(50000));
  std::vector<TokenId> ids(8193);
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(50000));
  auto cache = encode_contexts(p, contexts);
  double subset = best_seconds([&] { forward_subset(p, cache, ids); });
  double full = best_seconds([&] { forward_all(p, cache); });
  CHECK(subset < 0.5 * full);
}

}
