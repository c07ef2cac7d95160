#include "samplecrit/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "samplecrit/error.hpp"

namespace samplecrit::kernels {

namespace {

inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Columns per block: one block of weight rows stays hot while the batch of
// hidden vectors streams over it.
constexpr std::size_t kColumnBlock = 64;

void check_dims(const Matrix& hidden, const Matrix& weights) {
  if (hidden.cols() != weights.cols()) throw Error("hidden and weight widths differ");
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void score_rows(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
                std::span<const std::int32_t> ids, Matrix& out) {
  check_dims(hidden, weights);
  const std::size_t batch = hidden.rows();
  const std::size_t n = ids.size();
  const std::size_t d = hidden.cols();
  if (out.rows() != batch || out.cols() != n) out = Matrix(batch, n);
  const auto blocks = static_cast<std::ptrdiff_t>((n + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t j0 = static_cast<std::size_t>(blk) * kColumnBlock;
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* h = hidden.row(b).data();
      double* o = out.row(b).data();
      for (std::size_t j = j0; j < j1; ++j) {
        const auto c = static_cast<std::size_t>(ids[j]);
        o[j] = dot(h, weights.row(c).data(), d) + bias[c];
      }
    }
  }
}

void score_all(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
               Matrix& out) {
  check_dims(hidden, weights);
  const std::size_t batch = hidden.rows();
  const std::size_t n = weights.rows();
  const std::size_t d = hidden.cols();
  if (out.rows() != batch || out.cols() != n) out = Matrix(batch, n);
  const auto blocks = static_cast<std::ptrdiff_t>((n + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t j0 = static_cast<std::size_t>(blk) * kColumnBlock;
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* h = hidden.row(b).data();
      double* o = out.row(b).data();
      for (std::size_t j = j0; j < j1; ++j) o[j] = dot(h, weights.row(j).data(), d) + bias[j];
    }
  }
}

void score_pairs(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
                 std::span<const std::int32_t> ids, std::span<double> out) {
  check_dims(hidden, weights);
  const std::size_t d = hidden.cols();
  const auto batch = static_cast<std::ptrdiff_t>(hidden.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < batch; ++b) {
    const auto c = static_cast<std::size_t>(ids[static_cast<std::size_t>(b)]);
    out[static_cast<std::size_t>(b)] =
        dot(hidden.row(static_cast<std::size_t>(b)).data(), weights.row(c).data(), d) + bias[c];
  }
}

void backprop_hidden(const Matrix& upstream, const Matrix& weights,
                     std::span<const std::int32_t> ids, Matrix& d_hidden) {
  const std::size_t batch = upstream.rows();
  const std::size_t n = ids.size();
  const std::size_t d = weights.cols();
  if (upstream.cols() != n) throw Error("upstream does not match ids");
  if (d_hidden.rows() != batch || d_hidden.cols() != d) d_hidden = Matrix(batch, d);
  // Rows of d_hidden are independent; each thread owns a contiguous range of
  // them and streams the weight rows once. Within a row the sum runs over j
  // in order whatever the split.
#pragma omp parallel
  {
    std::size_t lo = 0, hi = batch;
#ifdef _OPENMP
    const auto t = static_cast<std::size_t>(omp_get_thread_num());
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    lo = batch * t / nt;
    hi = batch * (t + 1) / nt;
#endif
    for (std::size_t j = 0; j < n && lo < hi; ++j) {
      const double* w = weights.row(static_cast<std::size_t>(ids[j])).data();
      for (std::size_t b = lo; b < hi; ++b) {
        const double u = upstream(b, j);
        if (u != 0.0) axpy(u, w, d_hidden.row(b).data(), d);
      }
    }
  }
}

void weight_gradients(const Matrix& upstream, const Matrix& hidden, Matrix& grad_rows,
                      std::span<double> grad_bias) {
  const std::size_t batch = upstream.rows();
  const std::size_t n = upstream.cols();
  const std::size_t d = hidden.cols();
  if (hidden.rows() != batch) throw Error("upstream and hidden batch sizes differ");
  if (grad_rows.rows() != n || grad_rows.cols() != d) grad_rows = Matrix(n, d);
  const auto cols = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ji = 0; ji < cols; ++ji) {
    const auto j = static_cast<std::size_t>(ji);
    double* g = grad_rows.row(j).data();
    std::fill(g, g + d, 0.0);
    double bsum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double u = upstream(b, j);
      bsum += u;
      if (u != 0.0) axpy(u, hidden.row(b).data(), g, d);
    }
    grad_bias[j] = bsum;
  }
}

namespace reference {

void score_rows(const Matrix& hidden, const Matrix& weights, std::span<const double> bias,
                std::span<const std::int32_t> ids, Matrix& out) {
  check_dims(hidden, weights);
  out = Matrix(hidden.rows(), ids.size());
  for (std::size_t b = 0; b < hidden.rows(); ++b) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const auto c = static_cast<std::size_t>(ids[j]);
      double acc = 0.0;
      for (std::size_t k = 0; k < hidden.cols(); ++k) acc += hidden(b, k) * weights(c, k);
      out(b, j) = acc + bias[c];
    }
  }
}

void backprop_hidden(const Matrix& upstream, const Matrix& weights,
                     std::span<const std::int32_t> ids, Matrix& d_hidden) {
  if (d_hidden.rows() != upstream.rows() || d_hidden.cols() != weights.cols())
    d_hidden = Matrix(upstream.rows(), weights.cols());
  for (std::size_t b = 0; b < upstream.rows(); ++b)
    for (std::size_t j = 0; j < ids.size(); ++j)
      for (std::size_t k = 0; k < weights.cols(); ++k)
        d_hidden(b, k) += upstream(b, j) * weights(static_cast<std::size_t>(ids[j]), k);
}

void weight_gradients(const Matrix& upstream, const Matrix& hidden, Matrix& grad_rows,
                      std::span<double> grad_bias) {
  grad_rows = Matrix(upstream.cols(), hidden.cols());
  for (std::size_t j = 0; j < upstream.cols(); ++j) {
    grad_bias[j] = 0.0;
    for (std::size_t b = 0; b < upstream.rows(); ++b) {
      grad_bias[j] += upstream(b, j);
      for (std::size_t k = 0; k < hidden.cols(); ++k) grad_rows(j, k) += upstream(b, j) * hidden(b, k);
    }
  }
}

}  // namespace reference

}  // namespace samplecrit::kernels
