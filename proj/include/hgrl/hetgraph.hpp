#pragma once

// Heterogeneous graph assembly over {series, subject, shapelet} nodes: node
// layout, per-type features, the six block relations, symmetric adjacency,
// and degree normalization.

#include "hgrl/common.hpp"
#include "hgrl/ctsa.hpp"
#include "hgrl/dataio.hpp"
#include "hgrl/shapelets.hpp"
#include "hgrl/softdtw.hpp"

#include <algorithm>

namespace hgrl {

enum class NodeType { mts = 0, subject = 1, shapelet = 2 };

struct NodeLayout {
  int n_mts = 0;
  int n_sub = 0;
  int n_shp = 0;

  int total() const { return n_mts + n_sub + n_shp; }
  int sub_begin() const { return n_mts; }
  int shp_begin() const { return n_mts + n_sub; }
  NodeType type_of(int v) const {
    if (v < n_mts) return NodeType::mts;
    if (v < shp_begin()) return NodeType::subject;
    return NodeType::shapelet;
  }
};

struct HeteroGraph {
  NodeLayout layout;
  Matrix adjacency;   // total x total, exactly symmetric
  Matrix normalized;  // M^{-1/2} A M^{-1/2}
  Matrix x_mts;       // n x d_k
  Matrix x_sub;       // n_sub x n_sub one-hot
  Matrix x_shp;       // n_shp x (max_len + n_scales)
};

inline Matrix subject_features(const MtsDataset& ds) {
  return Matrix::Identity(ds.meta.n_subjects, ds.meta.n_subjects);
}

inline Matrix mts_node_features(const std::vector<Representation>& reps) {
  if (reps.empty()) throw Error("mts_node_features: no representations");
  const Eigen::Index d = reps[0].embedding_seq.cols();
  Matrix x(static_cast<Eigen::Index>(reps.size()), d);
  for (std::size_t i = 0; i < reps.size(); ++i) {
    if (reps[i].embedding_seq.cols() != d)
      throw Error("mts_node_features: inconsistent embedding dimension");
    x.row(static_cast<Eigen::Index>(i)) = reps[i].embedding_seq.colwise().mean();
  }
  return x;
}

// Raw values zero-padded to the longest shapelet, plus a one-hot scale tag.
inline Matrix shapelet_node_features(const ShapeletBank& bank) {
  const int n_scales = static_cast<int>(bank.scale_lengths.size());
  int max_len = 0;
  for (const auto& sh : bank.shapelets)
    max_len = std::max<int>(max_len, static_cast<int>(sh.values.size()));
  Matrix x = Matrix::Zero(bank.size(), max_len + n_scales);
  for (int k = 0; k < bank.size(); ++k) {
    x.row(k).segment(0, bank.shapelets[k].values.size()) =
        bank.shapelets[k].values.transpose();
    x(k, max_len + bank.shapelets[k].scale) = 1.0;
  }
  return x;
}

struct AssembleConfig {
  int topk = 5;        // <= 0 keeps the MTS-MTS block dense
  double alpha = 1.0;  // similarity decay for the shapelet-shapelet block
  double gamma2 = 1.0; // soft-DTW smoothing for shapelet distances
};

namespace detail {

// Keep the k largest off-diagonal entries per row, then re-symmetrize by max.
inline Matrix topk_sparsify(const Matrix& sim, int k) {
  const int n = static_cast<int>(sim.rows());
  if (k <= 0 || k >= n - 1) return sim;
  Matrix kept = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return sim(i, a) > sim(i, b); });
    for (int t = 0; t < k; ++t) kept(i, idx[t]) = sim(i, idx[t]);
  }
  return kept.cwiseMax(kept.transpose().eval());
}

}  // namespace detail

inline HeteroGraph assemble(const SimilarityMatrix& sim, const MtsDataset& ds,
                            const ShapeletBank& bank,
                            const PositioningResult& pos,
                            const AssembleConfig& cfg = {}) {
  const int n = ds.meta.n_samples;
  if (sim.sim.rows() != n) throw Error("assemble: similarity size mismatch");
  HeteroGraph g;
  g.layout = {n, ds.meta.n_subjects, bank.size()};
  const int total = g.layout.total();
  g.adjacency = Matrix::Zero(total, total);

  // MTS-MTS: similarity weights, optionally top-k sparsified, unit self-loops.
  Matrix mtt = detail::topk_sparsify(sim.sim, cfg.topk);
  for (int i = 0; i < n; ++i) mtt(i, i) = 1.0;
  g.adjacency.topLeftCorner(n, n) = mtt;

  const int sb = g.layout.sub_begin();
  const int pb = g.layout.shp_begin();

  // MTS-subject: membership.
  for (int i = 0; i < n; ++i) {
    g.adjacency(i, sb + ds.subject_ids[i]) = 1.0;
    g.adjacency(sb + ds.subject_ids[i], i) = 1.0;
  }

  // MTS-shapelet: positioning matches.
  for (const auto& m : pos.matches) {
    g.adjacency(m.series_id, pb + m.shapelet_idx) = 1.0;
    g.adjacency(pb + m.shapelet_idx, m.series_id) = 1.0;
  }

  // Subject-subject: self-loops only.
  g.adjacency.block(sb, sb, g.layout.n_sub, g.layout.n_sub) =
      Matrix::Identity(g.layout.n_sub, g.layout.n_sub);

  // Subject-shapelet: provenance edges.
  for (const auto& [shp, sub] : pos.shapelet_subject_edges) {
    g.adjacency(sb + sub, pb + shp) = 1.0;
    g.adjacency(pb + shp, sb + sub) = 1.0;
  }

  // Shapelet-shapelet: soft-DTW similarity, unit self-loops.
  if (bank.size() > 0) {
    std::vector<Matrix> seqs;
    for (const auto& sh : bank.shapelets) seqs.push_back(sh.values);
    Matrix dist = pairwise_matrix(seqs, {.gamma2 = cfg.gamma2});
    Matrix ss = similarity(dist, cfg.alpha).sim;
    for (int k = 0; k < bank.size(); ++k) ss(k, k) = 1.0;
    g.adjacency.block(pb, pb, bank.size(), bank.size()) = ss;
  }

  g.x_sub = subject_features(ds);
  g.x_shp = shapelet_node_features(bank);
  return g;
}

// Symmetric normalization with the diagonal degree matrix of A.
inline void normalize(HeteroGraph& g) {
  const int total = g.layout.total();
  Vector deg = g.adjacency.rowwise().sum();
  for (int i = 0; i < total; ++i)
    if (deg[i] <= 0) throw Error("normalize: node with zero degree");
  Vector inv_sqrt = deg.array().rsqrt();
  g.normalized = inv_sqrt.asDiagonal() * g.adjacency * inv_sqrt.asDiagonal();
}

struct ValidationItem {
  std::string name;
  bool ok = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationItem> items;
  bool all_ok() const {
    for (const auto& it : items)
      if (!it.ok) return false;
    return true;
  }
};

inline ValidationReport validate(const HeteroGraph& g) {
  ValidationReport rep;
  auto check = [&](const std::string& name, bool ok, std::string detail = "") {
    rep.items.push_back({name, ok, std::move(detail)});
  };
  const int total = g.layout.total();
  check("dimensions", g.adjacency.rows() == total && g.adjacency.cols() == total);
  check("symmetry",
        (g.adjacency.array() == g.adjacency.transpose().array()).all());
  check("nonnegative", (g.adjacency.array() >= 0).all());
  Matrix sub_block = g.adjacency.block(g.layout.sub_begin(), g.layout.sub_begin(),
                                       g.layout.n_sub, g.layout.n_sub);
  check("subject_block_identity",
        (sub_block.array() ==
         Matrix::Identity(g.layout.n_sub, g.layout.n_sub).array())
            .all());
  bool degrees_ok = true;
  for (int i = 0; i < total; ++i)
    if (g.adjacency.row(i).sum() <= 0) degrees_ok = false;
  check("positive_degrees", degrees_ok);
  return rep;
}

}  // namespace hgrl
