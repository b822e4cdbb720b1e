#pragma once

// Differentiable soft dynamic time warping: smooth minimum, forward DP,
// expected-alignment gradient, pairwise distance matrices, and the
// distance-to-similarity transform.

#include "hgrl/common.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace hgrl {

struct SoftDtwConfig {
  double gamma2 = 1.0;
  std::optional<int> bandwidth;  // Sakoe-Chiba window; nullopt = full DP
};

constexpr double kInf = std::numeric_limits<double>::infinity();

// gamma2 = 0 gives the exact minimum; gamma2 > 0 the smoothed
// -gamma2*log(sum exp(-a_i/gamma2)), computed with a max-shift.
inline double softmin(const std::vector<double>& values, double gamma2) {
  if (values.empty()) throw Error("softmin of empty list");
  double m = kInf;
  for (double v : values) m = std::min(m, v);
  if (gamma2 == 0.0 || std::isinf(m)) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(-(v - m) / gamma2);
  return m - gamma2 * std::log(acc);
}

namespace detail {

inline bool in_band(int i, int j, const SoftDtwConfig& cfg) {
  return !cfg.bandwidth || std::abs(i - j) <= *cfg.bandwidth;
}

// Squared Euclidean costs between time steps (rows) of a and b.
inline Matrix cost_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error("softdtw: dimension mismatch");
  if (a.rows() == 0 || b.rows() == 0) throw Error("softdtw: empty sequence");
  Matrix r(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      r(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return r;
}

inline Matrix forward_dp(const Matrix& r, const SoftDtwConfig& cfg) {
  const int n = static_cast<int>(r.rows()), m = static_cast<int>(r.cols());
  Matrix D = Matrix::Constant(n + 1, m + 1, kInf);
  D(0, 0) = 0.0;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= m; ++j) {
      if (!in_band(i - 1, j - 1, cfg)) continue;
      D(i, j) = r(i - 1, j - 1) +
                softmin({D(i, j - 1), D(i - 1, j), D(i - 1, j - 1)}, cfg.gamma2);
    }
  return D;
}

}  // namespace detail

inline double softdtw(const Matrix& a, const Matrix& b,
                      const SoftDtwConfig& cfg = {}) {
  Matrix r = detail::cost_matrix(a, b);
  Matrix D = detail::forward_dp(r, cfg);
  return D(a.rows(), b.rows());
}

// Gradient of softdtw(a, b) with respect to a, via the reverse recursion that
// yields expected-alignment weights E.
inline Matrix softdtw_grad(const Matrix& a, const Matrix& b,
                           const SoftDtwConfig& cfg = {}) {
  if (cfg.gamma2 <= 0.0)
    throw Error("softdtw_grad requires gamma2 > 0");
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.rows());
  Matrix delta = detail::cost_matrix(a, b);
  Matrix D = detail::forward_dp(delta, cfg);

  // R/Dpad indexed 0..n+1 x 0..m+1 with the sentinel corner.
  Matrix R = Matrix::Constant(n + 2, m + 2, -kInf);
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= m; ++j) R(i, j) = D(i, j);
  R(0, 0) = 0.0;
  R(n + 1, m + 1) = D(n, m);
  Matrix dpad = Matrix::Zero(n + 2, m + 2);
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= m; ++j) dpad(i, j) = delta(i - 1, j - 1);

  Matrix E = Matrix::Zero(n + 2, m + 2);
  E(n + 1, m + 1) = 1.0;
  auto weight = [&](int pi, int pj, int i, int j) {
    if (E(pi, pj) == 0.0 || std::isinf(R(pi, pj)) || std::isinf(R(i, j)))
      return 0.0;
    return E(pi, pj) * std::exp((R(pi, pj) - R(i, j) - dpad(pi, pj)) / cfg.gamma2);
  };
  for (int j = m; j >= 1; --j)
    for (int i = n; i >= 1; --i) {
      if (std::isinf(R(i, j))) continue;
      E(i, j) = weight(i + 1, j, i, j) + weight(i, j + 1, i, j) +
                weight(i + 1, j + 1, i, j);
    }

  Matrix grad = Matrix::Zero(a.rows(), a.cols());
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= m; ++j)
      if (E(i, j) != 0.0)
        grad.row(i - 1) += E(i, j) * 2.0 * (a.row(i - 1) - b.row(j - 1));
  return grad;
}

// Symmetric distance matrix; each unordered pair evaluated once, zero diagonal.
inline Matrix pairwise_matrix(const std::vector<Matrix>& seqs,
                              const SoftDtwConfig& cfg = {}) {
  const int n = static_cast<int>(seqs.size());
  Matrix D = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      D(i, j) = D(j, i) = softdtw(seqs[i], seqs[j], cfg);
  return D;
}

struct SimilarityMatrix {
  Matrix dist;        // raw soft-DTW distances
  Matrix normalized;  // min-max over off-diagonal entries
  Matrix sim;         // exp(-alpha * normalized) + 1, diagonal pinned to 2
  double alpha = 1.0;
};

inline SimilarityMatrix similarity(const Matrix& D, double alpha) {
  if (!D.allFinite()) throw Error("similarity: non-finite distances");
  const int n = static_cast<int>(D.rows());
  SimilarityMatrix out;
  out.dist = D;
  out.alpha = alpha;
  double lo = kInf, hi = -kInf;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) {
        lo = std::min(lo, D(i, j));
        hi = std::max(hi, D(i, j));
      }
  out.normalized = Matrix::Zero(n, n);
  if (n > 1 && hi > lo)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) out.normalized(i, j) = (D(i, j) - lo) / (hi - lo);
  out.sim = (-alpha * out.normalized.array()).exp() + 1.0;
  // Self-similarity is the maximum attainable value.
  for (int i = 0; i < n; ++i) out.sim(i, i) = 2.0;
  return out;
}

}  // namespace hgrl
