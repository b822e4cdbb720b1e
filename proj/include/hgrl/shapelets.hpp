#pragma once

// Multi-scale learnable shapelets: soft-minimum distance profiles, the
// sample/subject multi-task heads, redundancy pruning via soft-DTW, and
// convolutional positioning against series.

#include "hgrl/common.hpp"
#include "hgrl/dataio.hpp"
#include "hgrl/optim.hpp"
#include "hgrl/softdtw.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hgrl {

struct Shapelet {
  int id = 0;
  int scale = 0;  // index into the bank's scale_lengths
  Vector values;
};

struct ShapeletBank {
  std::vector<int> scale_lengths;
  std::vector<Shapelet> shapelets;
  Matrix sample_head;   // (K_total+1) x n_classes, row 0 is the bias
  Matrix subject_head;  // (K_total+1) x n_subjects
  double delta1 = -5.0;
  double lambda = 0.5;

  int size() const { return static_cast<int>(shapelets.size()); }
};

// Each shapelet starts as a subsequence sampled from a random series/channel.
inline ShapeletBank init_bank(const MtsDataset& ds,
                              const std::vector<int>& scale_lengths, int K,
                              Rng& rng) {
  ShapeletBank bank;
  bank.scale_lengths = scale_lengths;
  int id = 0;
  for (std::size_t s = 0; s < scale_lengths.size(); ++s) {
    int len = scale_lengths[s];
    if (len < 2 || len >= ds.meta.length)
      throw Error("shapelet scale must satisfy 2 <= length < L");
    for (int k = 0; k < K; ++k) {
      int series = uniform_int(rng, 0, ds.meta.n_samples - 1);
      int channel = uniform_int(rng, 0, ds.meta.n_channels - 1);
      int start = uniform_int(rng, 0, ds.meta.length - len);
      Shapelet sh;
      sh.id = id++;
      sh.scale = static_cast<int>(s);
      sh.values = ds.values[series].row(channel).segment(start, len).transpose();
      bank.shapelets.push_back(std::move(sh));
    }
  }
  bank.sample_head = Matrix::Zero(bank.size() + 1, ds.meta.n_classes);
  bank.subject_head = Matrix::Zero(bank.size() + 1, ds.meta.n_subjects);
  return bank;
}

inline double sub_distance(const Shapelet& sh, const Matrix& series,
                           int channel, int phi) {
  const int len = static_cast<int>(sh.values.size());
  if (phi < 0 || phi + len > series.cols())
    throw Error("sub_distance: position out of range");
  return std::sqrt((series.row(channel).segment(phi, len).transpose() -
                    sh.values)
                       .squaredNorm());
}

// Soft-minimum over positions of one channel; caches what the backward pass
// needs.
struct SoftMinCache {
  int channel = 0;
  Vector dists;    // per-position Euclidean distance
  Vector weights;  // exp(delta1*d)/Z, max-shifted
  double value = 0.0;
};

inline SoftMinCache series_distance_channel(const Shapelet& sh,
                                            const Matrix& series, int channel,
                                            double delta1) {
  const int len = static_cast<int>(sh.values.size());
  const int n_pos = static_cast<int>(series.cols()) - len + 1;
  if (n_pos < 1) throw Error("series_distance: shapelet longer than series");
  SoftMinCache c;
  c.channel = channel;
  c.dists.resize(n_pos);
  for (int z = 0; z < n_pos; ++z) c.dists[z] = sub_distance(sh, series, channel, z);
  double shift = (delta1 * c.dists.array()).maxCoeff();
  Vector e = (delta1 * c.dists.array() - shift).exp();
  c.weights = e / e.sum();
  c.value = c.weights.dot(c.dists);
  return c;
}

// Multivariate series: minimum of the per-channel soft-minimum distances.
inline SoftMinCache series_distance_min(const Shapelet& sh, const Matrix& series,
                                        double delta1) {
  SoftMinCache best;
  bool first = true;
  for (int ch = 0; ch < series.rows(); ++ch) {
    SoftMinCache c = series_distance_channel(sh, series, ch, delta1);
    if (first || c.value < best.value) {
      best = std::move(c);
      first = false;
    }
  }
  return best;
}

inline double series_distance(const Shapelet& sh, const Matrix& series,
                              int channel, double delta1) {
  return series_distance_channel(sh, series, channel, delta1).value;
}

// d value / d shapelet values, through the soft-minimum of the cached channel.
inline Vector series_distance_grad(const Shapelet& sh, const Matrix& series,
                                   double delta1, const SoftMinCache& c) {
  const int len = static_cast<int>(sh.values.size());
  Vector grad = Vector::Zero(len);
  for (int z = 0; z < c.dists.size(); ++z) {
    double d = c.dists[z];
    if (d < 1e-12) continue;
    double dv = c.weights[z] * (1.0 + delta1 * (d - c.value));
    grad += dv / d *
            (sh.values - series.row(c.channel).segment(z, len).transpose());
  }
  return grad;
}

// Affine map over the distance vector followed by a class softmax.
inline Vector predict(const Vector& distances, const Matrix& head) {
  if (distances.size() + 1 != head.rows())
    throw Error("predict: distance length does not match head");
  Vector logits = head.row(0).transpose() +
                  head.bottomRows(head.rows() - 1).transpose() * distances;
  Vector p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

struct MultitaskLossResult {
  double loss = 0.0;
  std::vector<Vector> d_shapelets;
  Matrix d_sample_head;
  Matrix d_subject_head;
};

// L = lambda * L_sam (cross-entropy over labeled series) +
//     (1-lambda) * L_sub (same form, subject ids as targets, all series).
inline MultitaskLossResult multitask_loss(const MtsDataset& ds,
                                          const ShapeletBank& bank) {
  const int n = ds.meta.n_samples;
  const int K = bank.size();
  int n_labeled = 0;
  for (char m : ds.labeled_mask) n_labeled += m;
  if (n_labeled == 0) throw Error("multitask_loss: no labeled series");

  std::vector<std::vector<SoftMinCache>> caches(n);
  Matrix dist(n, K);
  for (int m = 0; m < n; ++m) {
    caches[m].reserve(K);
    for (int k = 0; k < K; ++k) {
      caches[m].push_back(
          series_distance_min(bank.shapelets[k], ds.values[m], bank.delta1));
      dist(m, k) = caches[m][k].value;
    }
  }

  MultitaskLossResult res;
  res.d_sample_head = Matrix::Zero(bank.sample_head.rows(), bank.sample_head.cols());
  res.d_subject_head = Matrix::Zero(bank.subject_head.rows(), bank.subject_head.cols());
  res.d_shapelets.resize(K);
  for (int k = 0; k < K; ++k)
    res.d_shapelets[k] = Vector::Zero(bank.shapelets[k].values.size());
  Matrix d_dist = Matrix::Zero(n, K);

  auto accumulate_task = [&](const Matrix& head, Matrix& d_head,
                             const std::vector<int>& targets, bool labeled_only,
                             int count, double weight) {
    double task_loss = 0.0;
    for (int m = 0; m < n; ++m) {
      if (labeled_only && !ds.labeled_mask[m]) continue;
      Vector p = predict(dist.row(m).transpose(), head);
      task_loss += -std::log(std::max(p[targets[m]], 1e-300));
      Vector dlogits = p;
      dlogits[targets[m]] -= 1.0;
      dlogits *= weight / count;
      d_head.row(0) += dlogits.transpose();
      d_head.bottomRows(K) += dist.row(m).transpose() * dlogits.transpose();
      d_dist.row(m) += (head.bottomRows(K) * dlogits).transpose();
    }
    return task_loss / count;
  };

  double l_sam = accumulate_task(bank.sample_head, res.d_sample_head, ds.labels,
                                 true, n_labeled, bank.lambda);
  double l_sub = accumulate_task(bank.subject_head, res.d_subject_head,
                                 ds.subject_ids, false, n, 1.0 - bank.lambda);
  res.loss = bank.lambda * l_sam + (1.0 - bank.lambda) * l_sub;

  for (int m = 0; m < n; ++m)
    for (int k = 0; k < K; ++k)
      if (d_dist(m, k) != 0.0)
        res.d_shapelets[k] += d_dist(m, k) * series_distance_grad(
                                                 bank.shapelets[k], ds.values[m],
                                                 bank.delta1, caches[m][k]);
  return res;
}

namespace detail {

inline Vector flatten_bank(const ShapeletBank& b) {
  Eigen::Index total = 0;
  for (const auto& sh : b.shapelets) total += sh.values.size();
  total += b.sample_head.size() + b.subject_head.size();
  Vector v(total);
  Eigen::Index off = 0;
  for (const auto& sh : b.shapelets) {
    v.segment(off, sh.values.size()) = sh.values;
    off += sh.values.size();
  }
  v.segment(off, b.sample_head.size()) =
      Eigen::Map<const Vector>(b.sample_head.data(), b.sample_head.size());
  off += b.sample_head.size();
  v.segment(off, b.subject_head.size()) =
      Eigen::Map<const Vector>(b.subject_head.data(), b.subject_head.size());
  return v;
}

inline void unflatten_bank(const Vector& v, ShapeletBank& b) {
  Eigen::Index off = 0;
  for (auto& sh : b.shapelets) {
    sh.values = v.segment(off, sh.values.size());
    off += sh.values.size();
  }
  b.sample_head = Eigen::Map<const Matrix>(v.data() + off, b.sample_head.rows(),
                                           b.sample_head.cols());
  off += b.sample_head.size();
  b.subject_head = Eigen::Map<const Matrix>(
      v.data() + off, b.subject_head.rows(), b.subject_head.cols());
}

}  // namespace detail

struct ShapeletTrainConfig {
  std::vector<int> scale_lengths;
  int K = 64;  // shapelets per scale
  double delta1 = -5.0;
  double lambda = 0.5;
  int epochs = 50;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct ShapeletTrainResult {
  ShapeletBank bank;
  std::vector<double> loss_trace;
};

inline ShapeletTrainResult train_shapelets(const MtsDataset& ds,
                                           const ShapeletTrainConfig& cfg) {
  Rng rng(cfg.seed);
  ShapeletTrainResult res;
  res.bank = init_bank(ds, cfg.scale_lengths, cfg.K, rng);
  res.bank.delta1 = cfg.delta1;
  res.bank.lambda = cfg.lambda;
  if (cfg.epochs <= 0) return res;

  Vector theta = detail::flatten_bank(res.bank);
  AdamState adam(theta.size(), {.lr = cfg.lr});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::unflatten_bank(theta, res.bank);
    auto r = multitask_loss(ds, res.bank);
    ShapeletBank gbank = res.bank;
    for (int k = 0; k < gbank.size(); ++k) gbank.shapelets[k].values = r.d_shapelets[k];
    gbank.sample_head = r.d_sample_head;
    gbank.subject_head = r.d_subject_head;
    Vector grad = detail::flatten_bank(gbank);
    adam_step(adam, theta, grad);
    res.loss_trace.push_back(r.loss);
  }
  detail::unflatten_bank(theta, res.bank);
  return res;
}

// Drop the less important member (smaller sample-head weight norm, ties to
// the higher id) of any pair closer than tau_sim under soft-DTW, until no
// pair violates.
inline ShapeletBank prune(const ShapeletBank& bank, double tau_sim,
                          double gamma2) {
  if (tau_sim < 0) throw Error("prune: tau_sim must be >= 0");
  ShapeletBank cur = bank;
  SoftDtwConfig cfg{.gamma2 = gamma2};
  bool changed = true;
  while (changed) {
    changed = false;
    const int K = cur.size();
    for (int i = 0; i < K && !changed; ++i)
      for (int j = i + 1; j < K && !changed; ++j) {
        Matrix a = cur.shapelets[i].values;
        Matrix b = cur.shapelets[j].values;
        double d = softdtw(a, b, cfg);
        if (d < tau_sim) {
          double ni = cur.sample_head.row(i + 1).norm();
          double nj = cur.sample_head.row(j + 1).norm();
          int drop = (ni < nj || (ni == nj && cur.shapelets[i].id >
                                                  cur.shapelets[j].id))
                         ? i
                         : j;
          ShapeletBank next;
          next.scale_lengths = cur.scale_lengths;
          next.delta1 = cur.delta1;
          next.lambda = cur.lambda;
          next.sample_head.resize(K, cur.sample_head.cols());
          next.subject_head.resize(K, cur.subject_head.cols());
          next.sample_head.row(0) = cur.sample_head.row(0);
          next.subject_head.row(0) = cur.subject_head.row(0);
          int out = 0;
          for (int k = 0; k < K; ++k) {
            if (k == drop) continue;
            next.shapelets.push_back(cur.shapelets[k]);
            next.sample_head.row(out + 1) = cur.sample_head.row(k + 1);
            next.subject_head.row(out + 1) = cur.subject_head.row(k + 1);
            ++out;
          }
          cur = std::move(next);
          changed = true;
        }
      }
  }
  return cur;
}

struct PositionMatch {
  int shapelet_idx = 0;  // index into the (pruned) bank
  int shapelet_id = 0;
  int series_id = 0;
  int channel = 0;
  int position = 0;
  double response = 0.0;  // max sliding dot product
};

struct PositioningResult {
  double epsilon = 0.0;
  std::vector<PositionMatch> matches;  // one per matched (shapelet, series)
  std::set<std::pair<int, int>> shapelet_subject_edges;  // (shapelet_idx, subject)
};

// Sliding dot product of the shapelet against one channel.
inline Vector convolve_responses(const Shapelet& sh, const Matrix& series,
                                 int channel) {
  const int len = static_cast<int>(sh.values.size());
  const int n_pos = static_cast<int>(series.cols()) - len + 1;
  Vector out(n_pos);
  for (int i = 0; i < n_pos; ++i)
    out[i] = series.row(channel).segment(i, len) * sh.values;
  return out;
}

inline PositionMatch best_response(const ShapeletBank& bank, int k,
                                   const MtsDataset& ds, int series_id) {
  PositionMatch best;
  best.shapelet_idx = k;
  best.shapelet_id = bank.shapelets[k].id;
  best.series_id = series_id;
  best.response = -std::numeric_limits<double>::infinity();
  for (int ch = 0; ch < ds.meta.n_channels; ++ch) {
    Vector r = convolve_responses(bank.shapelets[k], ds.values[series_id], ch);
    for (int i = 0; i < r.size(); ++i)
      if (r[i] > best.response) {
        best.response = r[i];
        best.channel = ch;
        best.position = i;
      }
  }
  return best;
}

// A (shapelet, series) pair matches iff its max response exceeds epsilon; a
// shapelet-subject edge exists iff the shapelet matches a series of that
// subject.
inline PositioningResult position(const ShapeletBank& bank, const MtsDataset& ds,
                                  double epsilon) {
  PositioningResult res;
  res.epsilon = epsilon;
  for (int k = 0; k < bank.size(); ++k)
    for (int m = 0; m < ds.meta.n_samples; ++m) {
      PositionMatch pm = best_response(bank, k, ds, m);
      if (pm.response > epsilon) {
        res.shapelet_subject_edges.insert({k, ds.subject_ids[m]});
        res.matches.push_back(pm);
      }
    }
  return res;
}

// Default epsilon: a percentile of all per-(shapelet, series) max responses.
inline double epsilon_from_percentile(const ShapeletBank& bank,
                                      const MtsDataset& ds, double pct) {
  std::vector<double> responses;
  for (int k = 0; k < bank.size(); ++k)
    for (int m = 0; m < ds.meta.n_samples; ++m)
      responses.push_back(best_response(bank, k, ds, m).response);
  if (responses.empty()) return 0.0;
  std::sort(responses.begin(), responses.end());
  double idx = pct / 100.0 * (responses.size() - 1);
  std::size_t lo = static_cast<std::size_t>(idx);
  std::size_t hi = std::min(lo + 1, responses.size() - 1);
  double frac = idx - lo;
  return responses[lo] * (1 - frac) + responses[hi] * frac;
}

}  // namespace hgrl
