#pragma once

// Contrast temporal self-attention: sliding-window tokenization, channel and
// overlap masking, masked token attention with hand-written backprop,
// principal-dimension selection, triplet sampling, and the contrastive
// training loop that produces per-series representation sequences.

#include "hgrl/common.hpp"
#include "hgrl/dataio.hpp"
#include "hgrl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hgrl {

struct Token {
  int channel = 0;
  int start = 0;
};

struct TokenGrid {
  int window_len = 0;  // W
  int stride = 0;      // S
  int n_channels = 0;
  int tokens_per_channel = 0;
  std::vector<Token> tokens;  // channel-major: index = channel*n_tok + pos
  Matrix X;                   // token values, (n_channels*n_tok) x W

  int token_index(int channel, int pos) const {
    return channel * tokens_per_channel + pos;
  }
  int total_tokens() const { return static_cast<int>(tokens.size()); }
};

inline TokenGrid tokenize(const Matrix& series, int W, int S) {
  const int C = static_cast<int>(series.rows());
  const int L = static_cast<int>(series.cols());
  if (W < 1 || W > L) throw Error("tokenize: window must satisfy 1 <= W <= L");
  if (S < 1) throw Error("tokenize: stride must be >= 1");
  TokenGrid g;
  g.window_len = W;
  g.stride = S;
  g.n_channels = C;
  g.tokens_per_channel = (L - W) / S + 1;
  g.X.resize(C * g.tokens_per_channel, W);
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < g.tokens_per_channel; ++p) {
      int start = p * S;
      g.tokens.push_back({c, start});
      g.X.row(g.token_index(c, p)) = series.row(c).segment(start, W);
    }
  return g;
}

struct MaskPair {
  Eigen::MatrixXi m1;  // same-channel indicator
  Eigen::MatrixXi m2;  // overlap fraction < gamma1
  double gamma1 = 0.5;
};

inline double token_overlap(const Token& a, const Token& b, int W) {
  int lo = std::max(a.start, b.start);
  int hi = std::min(a.start + W, b.start + W);
  return std::max(0, hi - lo) / static_cast<double>(W);
}

inline MaskPair build_masks(const TokenGrid& grid, double gamma1) {
  if (gamma1 < 0 || gamma1 > 1) throw Error("gamma1 must lie in [0, 1]");
  const int T = grid.total_tokens();
  MaskPair mp;
  mp.gamma1 = gamma1;
  mp.m1.setZero(T, T);
  mp.m2.setZero(T, T);
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j) {
      mp.m1(i, j) = grid.tokens[i].channel == grid.tokens[j].channel ? 1 : 0;
      mp.m2(i, j) =
          token_overlap(grid.tokens[i], grid.tokens[j], grid.window_len) < gamma1
              ? 1
              : 0;
    }
  return mp;
}

struct CtsaParams {
  Matrix Wq, Wk, Wv;  // each d_k x W
  int d_k = 0;

  Vector flatten() const {
    const Eigen::Index n = Wq.size();
    Vector v(3 * n);
    v.segment(0, n) = Eigen::Map<const Vector>(Wq.data(), n);
    v.segment(n, n) = Eigen::Map<const Vector>(Wk.data(), n);
    v.segment(2 * n, n) = Eigen::Map<const Vector>(Wv.data(), n);
    return v;
  }
  static CtsaParams unflatten(const Vector& v, int d_k, int W) {
    CtsaParams p;
    p.d_k = d_k;
    const Eigen::Index n = static_cast<Eigen::Index>(d_k) * W;
    p.Wq = Eigen::Map<const Matrix>(v.data(), d_k, W);
    p.Wk = Eigen::Map<const Matrix>(v.data() + n, d_k, W);
    p.Wv = Eigen::Map<const Matrix>(v.data() + 2 * n, d_k, W);
    return p;
  }
};

inline CtsaParams init_ctsa_params(int d_k, int W, Rng& rng) {
  CtsaParams p;
  p.d_k = d_k;
  double bound = 1.0 / std::sqrt(static_cast<double>(W));
  auto fill = [&](Matrix& m) {
    m.resize(d_k, W);
    for (int i = 0; i < d_k; ++i)
      for (int j = 0; j < W; ++j) m(i, j) = uniform(rng, -bound, bound);
  };
  fill(p.Wq);
  fill(p.Wk);
  fill(p.Wv);
  return p;
}

struct AttentionCache {
  Matrix Q, K, V;  // T x d_k
  Matrix A;        // T x T row-softmax weights (zero rows where fully masked)
  Matrix O;        // T x d_k
};

// Joint mask m1 AND m2 applied as additive -inf before the row softmax; a
// fully masked row yields the zero vector.
inline AttentionCache attention_forward_cache(const TokenGrid& grid,
                                              const CtsaParams& params,
                                              const MaskPair& masks) {
  const int T = grid.total_tokens();
  if (masks.m1.rows() != T || masks.m2.rows() != T)
    throw Error("attention_forward: mask size does not match grid");
  AttentionCache c;
  c.Q = grid.X * params.Wq.transpose();
  c.K = grid.X * params.Wk.transpose();
  c.V = grid.X * params.Wv.transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.d_k));
  Matrix scores = c.Q * c.K.transpose() * scale;
  c.A.setZero(T, T);
  for (int i = 0; i < T; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < T; ++j)
      if (masks.m1(i, j) && masks.m2(i, j)) mx = std::max(mx, scores(i, j));
    if (std::isinf(mx)) continue;  // fully masked row
    double z = 0.0;
    for (int j = 0; j < T; ++j)
      if (masks.m1(i, j) && masks.m2(i, j)) {
        c.A(i, j) = std::exp(scores(i, j) - mx);
        z += c.A(i, j);
      }
    c.A.row(i) /= z;
  }
  c.O = c.A * c.V;
  return c;
}

inline Matrix attention_forward(const TokenGrid& grid, const CtsaParams& params,
                                const MaskPair& masks) {
  return attention_forward_cache(grid, params, masks).O;
}

// Backprop through the masked attention; accumulates into dWq/dWk/dWv.
inline void attention_backward(const TokenGrid& grid, const CtsaParams& params,
                               const AttentionCache& c, const Matrix& dO,
                               Matrix& dWq, Matrix& dWk, Matrix& dWv) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.d_k));
  Matrix dV = c.A.transpose() * dO;
  Matrix dA = dO * c.V.transpose();
  Matrix dS(c.A.rows(), c.A.cols());
  for (Eigen::Index i = 0; i < c.A.rows(); ++i) {
    double dot = c.A.row(i).dot(dA.row(i));
    dS.row(i) = c.A.row(i).array() * (dA.row(i).array() - dot);
  }
  Matrix dQ = dS * c.K * scale;
  Matrix dK = dS.transpose() * c.Q * scale;
  dWq += dQ.transpose() * grid.X;
  dWk += dK.transpose() * grid.X;
  dWv += dV.transpose() * grid.X;
}

struct PcaResult {
  Vector mean;               // length C
  Matrix covariance;         // C x C across time points
  Vector eigenvalues;        // descending
  Matrix eigenvectors;       // orthonormal columns matching eigenvalues
  Vector channel_scores;     // sum_i lambda_i * v_{i,c}^2
  std::vector<int> principal_dims;
};

inline PcaResult principal_dimensions(const Matrix& series, int m) {
  const int C = static_cast<int>(series.rows());
  const int L = static_cast<int>(series.cols());
  if (m < 1 || m > C) throw Error("principal_dimensions: need 1 <= m <= C");
  if (L < 2) throw Error("principal_dimensions: need L >= 2");
  PcaResult r;
  r.mean = series.rowwise().mean();
  Matrix centered = series.colwise() - r.mean;
  r.covariance = centered * centered.transpose() / static_cast<double>(L - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> es(r.covariance);
  if (es.info() != Eigen::Success)
    throw Error("principal_dimensions: eigendecomposition failed");
  r.eigenvalues = es.eigenvalues().reverse();
  r.eigenvectors = es.eigenvectors().rowwise().reverse();

  r.channel_scores.setZero(C);
  for (int i = 0; i < C; ++i)
    for (int c = 0; c < C; ++c)
      r.channel_scores[c] += r.eigenvalues[i] * r.eigenvectors(c, i) *
                             r.eigenvectors(c, i);

  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (r.channel_scores[a] != r.channel_scores[b])
      return r.channel_scores[a] > r.channel_scores[b];
    return a < b;
  });
  r.principal_dims.assign(order.begin(), order.begin() + m);
  return r;
}

inline int default_principal_count(int C) { return std::max(1, C / 3); }

struct Triplet {
  int channel = 0;                       // anchor/positive channel
  std::vector<int> anchor;               // token indices into the grid
  std::vector<int> positive;
  std::vector<std::vector<int>> negatives;
};

// Anchor: N_a consecutive tokens from one principal channel. Positive: same
// channel, shifted by a token offset that keeps the spans overlapping.
// Negatives: consecutive runs from non-principal channels.
inline Triplet sample_triplet(const TokenGrid& grid, const PcaResult& pca,
                              int N_a, int K, Rng& rng) {
  const int n_tok = grid.tokens_per_channel;
  if (N_a < 1 || N_a > n_tok)
    throw Error("sample_triplet: N_a exceeds tokens per channel");
  std::vector<char> is_principal(grid.n_channels, 0);
  for (int d : pca.principal_dims) is_principal[d] = 1;
  std::vector<int> non_principal;
  for (int c = 0; c < grid.n_channels; ++c)
    if (!is_principal[c]) non_principal.push_back(c);
  if (non_principal.empty())
    throw Error("sample_triplet: no non-principal channel for negatives");

  // Largest token offset o with o*S < (N_a-1)*S + W keeps spans overlapping.
  const int o_overlap =
      ((N_a - 1) * grid.stride + grid.window_len - 1) / grid.stride;
  if (o_overlap < 1 || n_tok < N_a + 1)
    throw Error("sample_triplet: no valid positive offset (series too short)");

  Triplet t;
  t.channel =
      pca.principal_dims[uniform_int(rng, 0, static_cast<int>(pca.principal_dims.size()) - 1)];
  int t1 = uniform_int(rng, 0, n_tok - N_a - 1);
  int o = uniform_int(rng, 1, std::min(o_overlap, n_tok - N_a - t1));
  for (int k = 0; k < N_a; ++k) {
    t.anchor.push_back(grid.token_index(t.channel, t1 + k));
    t.positive.push_back(grid.token_index(t.channel, t1 + o + k));
  }
  for (int k = 0; k < K; ++k) {
    int ch = non_principal[uniform_int(rng, 0, static_cast<int>(non_principal.size()) - 1)];
    int start = uniform_int(rng, 0, n_tok - N_a);
    std::vector<int> neg;
    for (int q = 0; q < N_a; ++q) neg.push_back(grid.token_index(ch, start + q));
    t.negatives.push_back(std::move(neg));
  }
  return t;
}

inline std::vector<Triplet> sample_triplets(const TokenGrid& grid,
                                            const PcaResult& pca, int N_a,
                                            int K, int count, Rng& rng) {
  std::vector<Triplet> out;
  for (int i = 0; i < count; ++i)
    out.push_back(sample_triplet(grid, pca, N_a, K, rng));
  return out;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) {  // log(1 + e^x), stable
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// cos(u, v) with its partials; a near-zero norm degenerates to cos = 0 with
// zero gradient.
struct CosineResult {
  double value = 0.0;
  Vector du, dv;
  bool degenerate = false;
};

inline CosineResult cosine(const Vector& u, const Vector& v) {
  CosineResult r;
  double nu = u.norm(), nv = v.norm();
  r.du = Vector::Zero(u.size());
  r.dv = Vector::Zero(v.size());
  if (nu < 1e-12 || nv < 1e-12) {
    r.degenerate = true;
    return r;
  }
  r.value = u.dot(v) / (nu * nv);
  r.du = v / (nu * nv) - r.value * u / (nu * nu);
  r.dv = u / (nu * nv) - r.value * v / (nv * nv);
  return r;
}

}  // namespace detail

// Loss on pooled embeddings: -log s(cos(ref,pos)) - sum_k log s(-cos(ref,neg_k)).
inline double contrast_loss_from_embeddings(const Vector& ref, const Vector& pos,
                                            const std::vector<Vector>& negs) {
  double loss = detail::softplus(-detail::cosine(ref, pos).value);
  for (const auto& ng : negs) loss += detail::softplus(detail::cosine(ref, ng).value);
  return loss;
}

struct ContrastLossResult {
  double loss = 0.0;
  Vector grad;  // d loss / d flatten(params)
};

// f(token list) is the mean of the attention outputs over that list; the
// gradient is backpropagated through the shared attention pass.
inline ContrastLossResult contrast_loss(const CtsaParams& params,
                                        const Triplet& triplet,
                                        const TokenGrid& grid,
                                        const MaskPair& masks) {
  AttentionCache cache = attention_forward_cache(grid, params, masks);
  auto pool = [&](const std::vector<int>& idx) {
    Vector f = Vector::Zero(params.d_k);
    for (int i : idx) f += cache.O.row(i).transpose();
    return Vector(f / static_cast<double>(idx.size()));
  };
  Vector f_ref = pool(triplet.anchor);
  Vector f_pos = pool(triplet.positive);
  std::vector<Vector> f_negs;
  for (const auto& ng : triplet.negatives) f_negs.push_back(pool(ng));

  Matrix dO = Matrix::Zero(cache.O.rows(), cache.O.cols());
  auto scatter = [&](const std::vector<int>& idx, const Vector& df) {
    for (int i : idx)
      dO.row(i) += df.transpose() / static_cast<double>(idx.size());
  };

  double loss = 0.0;
  {
    auto cp = detail::cosine(f_ref, f_pos);
    loss += detail::softplus(-cp.value);
    double dc = detail::sigmoid(cp.value) - 1.0;  // d/dc of -log sigmoid(c)
    if (!cp.degenerate) {
      scatter(triplet.anchor, dc * cp.du);
      scatter(triplet.positive, dc * cp.dv);
    }
  }
  for (std::size_t k = 0; k < f_negs.size(); ++k) {
    auto cn = detail::cosine(f_ref, f_negs[k]);
    loss += detail::softplus(cn.value);
    double dc = detail::sigmoid(cn.value);  // d/dc of -log sigmoid(-c)
    if (!cn.degenerate) {
      scatter(triplet.anchor, dc * cn.du);
      scatter(triplet.negatives[k], dc * cn.dv);
    }
  }

  Matrix dWq = Matrix::Zero(params.d_k, grid.window_len);
  Matrix dWk = dWq, dWv = dWq;
  attention_backward(grid, params, cache, dO, dWq, dWk, dWv);

  ContrastLossResult out;
  out.loss = loss;
  CtsaParams g;
  g.d_k = params.d_k;
  g.Wq = dWq;
  g.Wk = dWk;
  g.Wv = dWv;
  out.grad = g.flatten();
  return out;
}

struct Representation {
  int series_id = 0;
  Matrix embedding_seq;  // n_tok x d_k, token outputs averaged over channels
};

struct CtsaConfig {
  int W = 8;
  int S = 4;
  double gamma1 = 0.5;
  int d_k = 8;
  int N_a = 3;
  int K_neg = 2;
  int epochs = 50;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct CtsaTrainResult {
  CtsaParams params;
  std::vector<double> loss_trace;  // mean contrast loss per epoch
};

inline CtsaTrainResult train_ctsa(const MtsDataset& ds, const CtsaConfig& cfg) {
  Rng rng(cfg.seed);
  CtsaTrainResult res;
  res.params = init_ctsa_params(cfg.d_k, cfg.W, rng);
  if (cfg.epochs <= 0) return res;

  const int m = default_principal_count(ds.meta.n_channels);
  std::vector<TokenGrid> grids;
  std::vector<PcaResult> pcas;
  for (const auto& series : ds.values) {
    grids.push_back(tokenize(series, cfg.W, cfg.S));
    pcas.push_back(principal_dimensions(series, m));
  }
  MaskPair masks = build_masks(grids[0], cfg.gamma1);

  Vector theta = res.params.flatten();
  AdamState adam(theta.size(), {.lr = cfg.lr});
  const int n = ds.meta.n_samples;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    CtsaParams p = CtsaParams::unflatten(theta, cfg.d_k, cfg.W);
    Vector grad = Vector::Zero(theta.size());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      Triplet t = sample_triplet(grids[i], pcas[i], cfg.N_a, cfg.K_neg, rng);
      auto r = contrast_loss(p, t, grids[i], masks);
      loss += r.loss;
      grad += r.grad;
    }
    loss /= n;
    grad /= n;
    adam_step(adam, theta, grad);
    res.loss_trace.push_back(loss);
  }
  res.params = CtsaParams::unflatten(theta, cfg.d_k, cfg.W);
  return res;
}

// Attention outputs averaged over channels at each token time-position.
inline std::vector<Representation> encode(const MtsDataset& ds,
                                          const CtsaParams& params,
                                          const CtsaConfig& cfg) {
  std::vector<Representation> reps;
  for (int i = 0; i < ds.meta.n_samples; ++i) {
    TokenGrid grid = tokenize(ds.values[i], cfg.W, cfg.S);
    MaskPair masks = build_masks(grid, cfg.gamma1);
    Matrix O = attention_forward(grid, params, masks);
    Representation r;
    r.series_id = i;
    r.embedding_seq.setZero(grid.tokens_per_channel, params.d_k);
    for (int p = 0; p < grid.tokens_per_channel; ++p) {
      for (int c = 0; c < grid.n_channels; ++c)
        r.embedding_seq.row(p) += O.row(grid.token_index(c, p));
      r.embedding_seq.row(p) /= grid.n_channels;
    }
    reps.push_back(std::move(r));
  }
  return reps;
}

}  // namespace hgrl
