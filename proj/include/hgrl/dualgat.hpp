#pragma once

// Dual-level graph attention network over the heterogeneous graph: per-type
// projections, type-level and node-level attention, layer-wise propagation,
// masked negative log likelihood, and training. The node_only / type_only /
// gcn variants mirror the ablation switches.

#include "hgrl/common.hpp"
#include "hgrl/hetgraph.hpp"
#include "hgrl/optim.hpp"

#include <array>
#include <cmath>

namespace hgrl {

enum class GatVariant { full, node_only, type_only, gcn };

inline GatVariant parse_variant(const std::string& s) {
  if (s == "full") return GatVariant::full;
  if (s == "node_only") return GatVariant::node_only;
  if (s == "type_only") return GatVariant::type_only;
  if (s == "gcn") return GatVariant::gcn;
  throw Error("unknown GAT variant: " + s);
}

inline std::string variant_name(GatVariant v) {
  switch (v) {
    case GatVariant::full: return "full";
    case GatVariant::node_only: return "node_only";
    case GatVariant::type_only: return "type_only";
    case GatVariant::gcn: return "gcn";
  }
  throw Error("bad variant");
}

struct GatConfig {
  int n_layers = 2;
  int hidden = 64;
  GatVariant variant = GatVariant::full;
  int epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct GatParams {
  int n_layers = 0;
  int hidden = 0;
  int n_classes = 0;
  std::array<int, 3> in_dims{};  // per-type feature dims at layer 0
  GatVariant variant = GatVariant::full;
  std::vector<std::array<Matrix, 3>> proj;  // layer, type: d_in x q
  std::vector<std::array<Vector, 3>> xi;    // layer, type: 2q
  std::vector<Vector> eta;                  // layer: 2q
  Matrix W;                                 // q x n_classes

  Vector flatten() const {
    Eigen::Index total = W.size();
    for (int k = 0; k < n_layers; ++k) {
      for (int t = 0; t < 3; ++t) total += proj[k][t].size() + xi[k][t].size();
      total += eta[k].size();
    }
    Vector v(total);
    Eigen::Index off = 0;
    auto put_m = [&](const Matrix& m) {
      v.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      off += m.size();
    };
    auto put_v = [&](const Vector& x) {
      v.segment(off, x.size()) = x;
      off += x.size();
    };
    for (int k = 0; k < n_layers; ++k) {
      for (int t = 0; t < 3; ++t) put_m(proj[k][t]);
      for (int t = 0; t < 3; ++t) put_v(xi[k][t]);
      put_v(eta[k]);
    }
    put_m(W);
    return v;
  }

  void unflatten(const Vector& v) {
    Eigen::Index off = 0;
    auto get_m = [&](Matrix& m) {
      m = Eigen::Map<const Matrix>(v.data() + off, m.rows(), m.cols());
      off += m.size();
    };
    auto get_v = [&](Vector& x) {
      x = v.segment(off, x.size());
      off += x.size();
    };
    for (int k = 0; k < n_layers; ++k) {
      for (int t = 0; t < 3; ++t) get_m(proj[k][t]);
      for (int t = 0; t < 3; ++t) get_v(xi[k][t]);
      get_v(eta[k]);
    }
    get_m(W);
  }
};

inline GatParams init_gat_params(const std::array<int, 3>& in_dims,
                                 int n_classes, const GatConfig& cfg,
                                 Rng& rng) {
  GatParams p;
  p.n_layers = cfg.n_layers;
  p.hidden = cfg.hidden;
  p.n_classes = n_classes;
  p.in_dims = in_dims;
  p.variant = cfg.variant;
  auto init_m = [&](int rows, int cols) {
    Matrix m(rows, cols);
    double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = uniform(rng, -bound, bound);
    return m;
  };
  const int q = cfg.hidden;
  for (int k = 0; k < cfg.n_layers; ++k) {
    std::array<Matrix, 3> pr;
    std::array<Vector, 3> x;
    for (int t = 0; t < 3; ++t) {
      int d_in = k == 0 ? in_dims[static_cast<std::size_t>(t)] : q;
      pr[t] = init_m(d_in, q);
      x[t] = init_m(2 * q, 1).col(0);
    }
    p.proj.push_back(std::move(pr));
    p.xi.push_back(std::move(x));
    p.eta.push_back(init_m(2 * q, 1).col(0));
  }
  p.W = init_m(q, n_classes);
  return p;
}

// Adjacency view: per-node neighbor lists over the nonzeros of the
// normalized adjacency.
struct GraphView {
  NodeLayout layout;
  Matrix weights;  // normalized adjacency
  std::vector<std::vector<int>> nbrs;
  std::array<Matrix, 3> features;  // layer-0 inputs per type

  int type_of(int v) const { return static_cast<int>(layout.type_of(v)); }
  int local_index(int v) const {
    switch (layout.type_of(v)) {
      case NodeType::mts: return v;
      case NodeType::subject: return v - layout.sub_begin();
      default: return v - layout.shp_begin();
    }
  }
};

inline GraphView make_view(const HeteroGraph& g) {
  if (g.normalized.rows() != g.layout.total())
    throw Error("make_view: graph not normalized");
  GraphView v;
  v.layout = g.layout;
  v.weights = g.normalized;
  v.nbrs.resize(g.layout.total());
  for (int i = 0; i < g.layout.total(); ++i)
    for (int j = 0; j < g.layout.total(); ++j)
      if (v.weights(i, j) != 0.0) v.nbrs[i].push_back(j);
  v.features = {g.x_mts, g.x_sub, g.x_shp};
  return v;
}

namespace gat_detail {

struct NodeAttn {
  std::array<bool, 3> present{false, false, false};
  std::array<Vector, 3> type_sum;       // s_kappa
  std::array<double, 3> score{};        // a_kappa (pre-softmax, post-tanh)
  std::array<double, 3> alpha{};        // type attention
  std::vector<double> b;                // node scores per neighbor
  std::vector<double> beta;             // node attention per neighbor
};

struct LayerCache {
  std::array<Matrix, 3> inputs;  // per-type inputs to this layer
  Matrix H;                      // projected embeddings, total x q
  Matrix Z;                      // pre-activation aggregate
  Matrix G;                      // layer output
  std::vector<NodeAttn> nodes;
};

inline std::array<Matrix, 3> slice_by_type(const GraphView& view,
                                           const Matrix& G) {
  return {G.topRows(view.layout.n_mts),
          G.middleRows(view.layout.sub_begin(), view.layout.n_sub),
          G.bottomRows(view.layout.n_shp)};
}

inline LayerCache layer_forward(const GraphView& view, const GatParams& p,
                                int k, const std::array<Matrix, 3>& inputs,
                                bool last) {
  LayerCache c;
  c.inputs = inputs;
  const int total = view.layout.total();
  const int q = p.hidden;
  c.H.resize(total, q);
  for (int v = 0; v < total; ++v)
    c.H.row(v) =
        inputs[view.type_of(v)].row(view.local_index(v)) * p.proj[k][view.type_of(v)];

  c.Z.setZero(total, q);
  c.nodes.resize(total);
  for (int v = 0; v < total; ++v) {
    NodeAttn& na = c.nodes[v];
    const auto& nbrs = view.nbrs[v];
    if (nbrs.empty()) throw Error("gat: isolated node");

    if (p.variant == GatVariant::gcn) {
      for (int j : nbrs) c.Z.row(v) += view.weights(v, j) * c.H.row(j);
      continue;
    }

    for (int t = 0; t < 3; ++t) na.type_sum[t] = Vector::Zero(q);
    int n_present = 0;
    for (int j : nbrs) {
      int t = view.type_of(j);
      if (!na.present[t]) {
        na.present[t] = true;
        ++n_present;
      }
      na.type_sum[t] += view.weights(v, j) * c.H.row(j).transpose();
    }

    if (p.variant == GatVariant::node_only) {
      for (int t = 0; t < 3; ++t)
        na.alpha[t] = na.present[t] ? 1.0 / n_present : 0.0;
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (int t = 0; t < 3; ++t) {
        if (!na.present[t]) continue;
        const Vector& xi = p.xi[k][t];
        double raw = xi.head(q).dot(c.H.row(v)) + xi.tail(q).dot(na.type_sum[t]);
        na.score[t] = std::tanh(raw);
        mx = std::max(mx, na.score[t]);
      }
      double z = 0.0;
      for (int t = 0; t < 3; ++t)
        if (na.present[t]) z += std::exp(na.score[t] - mx);
      for (int t = 0; t < 3; ++t)
        na.alpha[t] = na.present[t] ? std::exp(na.score[t] - mx) / z : 0.0;
    }

    na.b.resize(nbrs.size());
    na.beta.resize(nbrs.size());
    if (p.variant == GatVariant::type_only) {
      double z = 0.0;
      for (std::size_t e = 0; e < nbrs.size(); ++e) {
        int j = nbrs[e];
        na.b[e] = na.alpha[view.type_of(j)] * view.weights(v, j);
        z += na.b[e];
      }
      for (std::size_t e = 0; e < nbrs.size(); ++e) na.beta[e] = na.b[e] / z;
    } else {
      const Vector& eta = p.eta[k];
      double hs = eta.head(q).dot(c.H.row(v));
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < nbrs.size(); ++e) {
        int j = nbrs[e];
        double cval = hs + eta.tail(q).dot(c.H.row(j));
        na.b[e] = std::tanh(na.alpha[view.type_of(j)] * cval);
        mx = std::max(mx, na.b[e]);
      }
      double z = 0.0;
      for (std::size_t e = 0; e < nbrs.size(); ++e) {
        na.beta[e] = std::exp(na.b[e] - mx);
        z += na.beta[e];
      }
      for (std::size_t e = 0; e < nbrs.size(); ++e) na.beta[e] /= z;
    }

    for (std::size_t e = 0; e < nbrs.size(); ++e)
      c.Z.row(v) += na.beta[e] * c.H.row(nbrs[e]);
  }

  c.G = last ? c.Z : c.Z.cwiseMax(0.0);
  return c;
}

// Backward through one layer; returns the gradient w.r.t. the layer inputs
// and accumulates parameter gradients.
inline std::array<Matrix, 3> layer_backward(const GraphView& view,
                                            const GatParams& p, int k,
                                            const LayerCache& c, bool last,
                                            const Matrix& dG, GatParams& grad) {
  const int total = view.layout.total();
  const int q = p.hidden;
  Matrix dZ = dG;
  if (!last)
    dZ = dZ.cwiseProduct((c.Z.array() > 0.0).cast<double>().matrix());

  Matrix dH = Matrix::Zero(total, q);
  for (int v = 0; v < total; ++v) {
    const auto& nbrs = view.nbrs[v];
    const NodeAttn& na = c.nodes[v];
    const Vector dz = dZ.row(v).transpose();
    if (dz.isZero(0.0) ) {
      // Entire row contributes nothing downstream.
      continue;
    }

    if (p.variant == GatVariant::gcn) {
      for (int j : nbrs) dH.row(j) += view.weights(v, j) * dz.transpose();
      continue;
    }

    std::vector<double> dbeta(nbrs.size());
    double beta_dot = 0.0;
    for (std::size_t e = 0; e < nbrs.size(); ++e) {
      dbeta[e] = dz.dot(c.H.row(nbrs[e]).transpose());
      dH.row(nbrs[e]) += na.beta[e] * dz.transpose();
      beta_dot += na.beta[e] * dbeta[e];
    }

    std::array<double, 3> dalpha{0.0, 0.0, 0.0};
    if (p.variant == GatVariant::type_only) {
      double z = 0.0;
      for (double u : na.b) z += u;
      for (std::size_t e = 0; e < nbrs.size(); ++e) {
        double du = (dbeta[e] - beta_dot) / z;  // u_e = alpha_t * w
        dalpha[view.type_of(nbrs[e])] += view.weights(v, nbrs[e]) * du;
      }
    } else {
      const Vector& eta = p.eta[k];
      double hs = eta.head(q).dot(c.H.row(v));
      for (std::size_t e = 0; e < nbrs.size(); ++e) {
        int j = nbrs[e];
        double db = na.beta[e] * (dbeta[e] - beta_dot);
        double cval = hs + eta.tail(q).dot(c.H.row(j));
        double a = na.alpha[view.type_of(j)];
        double du = db * (1.0 - na.b[e] * na.b[e]);  // through tanh
        dalpha[view.type_of(j)] += du * cval;
        double dc = du * a;
        grad.eta[k].head(q) += dc * c.H.row(v).transpose();
        grad.eta[k].tail(q) += dc * c.H.row(j).transpose();
        dH.row(v) += dc * eta.head(q).transpose();
        dH.row(j) += dc * eta.tail(q).transpose();
      }
    }

    if (p.variant != GatVariant::node_only) {
      double adot = 0.0;
      for (int t = 0; t < 3; ++t)
        if (na.present[t]) adot += na.alpha[t] * dalpha[t];
      for (int t = 0; t < 3; ++t) {
        if (!na.present[t]) continue;
        double da = na.alpha[t] * (dalpha[t] - adot);
        double dt = da * (1.0 - na.score[t] * na.score[t]);
        if (dt == 0.0) continue;
        grad.xi[k][t].head(q) += dt * c.H.row(v).transpose();
        grad.xi[k][t].tail(q) += dt * na.type_sum[t];
        dH.row(v) += dt * p.xi[k][t].head(q).transpose();
        const Vector ds = dt * p.xi[k][t].tail(q);
        for (int j : nbrs)
          if (view.type_of(j) == t)
            dH.row(j) += view.weights(v, j) * ds.transpose();
      }
    }
  }

  std::array<Matrix, 3> dinputs;
  std::array<Matrix, 3> dH_by_type = slice_by_type(view, dH);
  for (int t = 0; t < 3; ++t) {
    grad.proj[k][t] += c.inputs[t].transpose() * dH_by_type[t];
    dinputs[t] = dH_by_type[t] * p.proj[k][t].transpose();
  }
  return dinputs;
}

}  // namespace gat_detail

struct GatForward {
  std::vector<gat_detail::LayerCache> layers;
  Matrix logits;  // total x n_classes
  Matrix probs;   // row softmax
};

inline GatForward gat_forward(const GraphView& view, const GatParams& p) {
  GatForward f;
  std::array<Matrix, 3> inputs = view.features;
  for (int k = 0; k < p.n_layers; ++k) {
    bool last = k == p.n_layers - 1;
    f.layers.push_back(gat_detail::layer_forward(view, p, k, inputs, last));
    inputs = gat_detail::slice_by_type(view, f.layers.back().G);
  }
  const Matrix& G = f.layers.back().G;
  f.logits = G * p.W;
  f.probs.resizeLike(f.logits);
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) {
    Vector row = f.logits.row(i).transpose();
    Vector e = (row.array() - row.maxCoeff()).exp();
    f.probs.row(i) = (e / e.sum()).transpose();
  }
  return f;
}

// Mean NLL over labeled MTS nodes only.
inline double masked_nll(const Matrix& probs, const std::vector<int>& labels,
                         const std::vector<char>& labeled_mask,
                         const NodeLayout& layout) {
  int count = 0;
  double loss = 0.0;
  for (int v = 0; v < layout.n_mts; ++v) {
    if (!labeled_mask[v]) continue;
    loss += -std::log(std::max(probs(v, labels[v]), 1e-300));
    ++count;
  }
  if (count == 0) throw Error("masked_nll: empty label mask");
  return loss / count;
}

struct GatLossResult {
  double loss = 0.0;
  Vector grad;
};

inline GatParams zero_like(const GatParams& p) {
  GatParams g = p;
  for (int k = 0; k < g.n_layers; ++k) {
    for (int t = 0; t < 3; ++t) {
      g.proj[k][t].setZero();
      g.xi[k][t].setZero();
    }
    g.eta[k].setZero();
  }
  g.W.setZero();
  return g;
}

inline GatLossResult gat_loss(const GraphView& view, const GatParams& p,
                              const std::vector<int>& labels,
                              const std::vector<char>& labeled_mask) {
  GatForward f = gat_forward(view, p);
  GatLossResult out;
  out.loss = masked_nll(f.probs, labels, labeled_mask, view.layout);

  int count = 0;
  for (int v = 0; v < view.layout.n_mts; ++v) count += labeled_mask[v] ? 1 : 0;
  Matrix dlogits = Matrix::Zero(f.logits.rows(), f.logits.cols());
  for (int v = 0; v < view.layout.n_mts; ++v) {
    if (!labeled_mask[v]) continue;
    dlogits.row(v) = f.probs.row(v) / count;
    dlogits(v, labels[v]) -= 1.0 / count;
  }

  GatParams grad = zero_like(p);
  const Matrix& G = f.layers.back().G;
  grad.W = G.transpose() * dlogits;
  Matrix dG = dlogits * p.W.transpose();
  for (int k = p.n_layers - 1; k >= 0; --k) {
    bool last = k == p.n_layers - 1;
    auto dinputs =
        gat_detail::layer_backward(view, p, k, f.layers[k], last, dG, grad);
    if (k > 0) {
      dG.resize(view.layout.total(), p.hidden);
      dG.topRows(view.layout.n_mts) = dinputs[0];
      dG.middleRows(view.layout.sub_begin(), view.layout.n_sub) = dinputs[1];
      dG.bottomRows(view.layout.n_shp) = dinputs[2];
    }
  }
  out.grad = grad.flatten();
  return out;
}

struct GatTrainResult {
  GatParams params;
  std::vector<double> loss_trace;
};

inline GatTrainResult train_gat(const HeteroGraph& graph,
                                const std::vector<int>& labels,
                                const std::vector<char>& labeled_mask,
                                int n_classes, const GatConfig& cfg) {
  GraphView view = make_view(graph);
  std::array<int, 3> in_dims = {static_cast<int>(graph.x_mts.cols()),
                                static_cast<int>(graph.x_sub.cols()),
                                static_cast<int>(graph.x_shp.cols())};
  Rng rng(cfg.seed);
  GatTrainResult res;
  res.params = init_gat_params(in_dims, n_classes, cfg, rng);
  if (cfg.epochs <= 0) return res;

  Vector theta = res.params.flatten();
  AdamState adam(theta.size(), {.lr = cfg.lr});
  PlateauState plateau;
  plateau.current_lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    res.params.unflatten(theta);
    auto r = gat_loss(view, res.params, labels, labeled_mask);
    adam.cfg.lr = plateau.current_lr;
    adam_step(adam, theta, r.grad);
    plateau_step(plateau, r.loss);
    res.loss_trace.push_back(r.loss);
  }
  res.params.unflatten(theta);
  return res;
}

// Argmax class per MTS node, ties to the lower class index.
inline std::vector<int> gat_predict(const HeteroGraph& graph,
                                    const GatParams& params) {
  GraphView view = make_view(graph);
  GatForward f = gat_forward(view, params);
  std::vector<int> pred(graph.layout.n_mts);
  for (int v = 0; v < graph.layout.n_mts; ++v) {
    int best = 0;
    for (int c = 1; c < params.n_classes; ++c)
      if (f.probs(v, c) > f.probs(v, best)) best = c;
    pred[v] = best;
  }
  return pred;
}

}  // namespace hgrl
