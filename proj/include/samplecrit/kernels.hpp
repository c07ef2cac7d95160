#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "samplecrit/matrix.hpp"

// Output-layer kernels. The output layer dominates training cost: scoring a
// batch against n classes and back-propagating through those n rows.
//
// Two implementations share one interface: `reference` is the plain serial
// version used as a test oracle, the top-level functions are blocked and
// OpenMP-parallel. Parallel loops only ever split independent outputs, and
// each output is accumulated in a fixed order, so results do not depend on
// the thread count.

namespace samplecrit::kernels {

/// out(b, j) = <hidden(b), weights(ids[j])> + bias[ids[j]].
void score_rows(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
                std::span<const std::int32_t> ids, Matrix& out);

/// Same with ids = 0..C-1.
void score_all(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
               Matrix& out);

/// out[b] = <hidden(b), weights(ids[b])> + bias[ids[b]] (one class per row).
void score_pairs(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
                 std::span<const std::int32_t> ids, std::span<double> out);

/// d_hidden(b) += sum_j upstream(b, j) * weights(ids[j]).
void backprop_hidden(const Matrix& upstream, const Matrix& weights,
                     std::span<const std::int32_t> ids, Matrix& d_hidden);

/// grad_rows(j) = sum_b upstream(b, j) * hidden(b); grad_bias[j] = sum_b
/// upstream(b, j). One output row per column of `upstream`; callers merge
/// duplicate ids.
void weight_gradients(const Matrix& upstream, const Matrix& hidden, Matrix& grad_rows,
                      std::span<double> grad_bias);

namespace reference {

void score_rows(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
                std::span<const std::int32_t> ids, Matrix& out);
void backprop_hidden(const Matrix& upstream, const Matrix& weights,
                     std::span<const std::int32_t> ids, Matrix& d_hidden);
void weight_gradients(const Matrix& upstream, const Matrix& hidden, Matrix& grad_rows,
                      std::span<double> grad_bias);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace samplecrit::kernels
