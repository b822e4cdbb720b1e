#include <hgrl/dualgat.hpp>

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace hgrl;

namespace {

// A random small heterogeneous graph with guaranteed self-loops.
HeteroGraph random_graph(Rng& rng, int n_mts, int n_sub, int n_shp, int d_mts,
                         int d_shp) {
  HeteroGraph g;
  g.layout = {n_mts, n_sub, n_shp};
  const int total = g.layout.total();
  g.adjacency = Matrix::Zero(total, total);
  for (int i = 0; i < total; ++i)
    for (int j = i; j < total; ++j) {
      double w = i == j ? 1.0 : (uniform(rng, 0, 1) < 0.4 ? uniform(rng, 0.2, 2.0) : 0.0);
      g.adjacency(i, j) = g.adjacency(j, i) = w;
    }
  normalize(g);
  g.x_mts = oracle::random_matrix(rng, n_mts, d_mts);
  g.x_sub = Matrix::Identity(n_sub, n_sub);
  g.x_shp = oracle::random_matrix(rng, n_shp, d_shp);
  return g;
}

GatParams small_params(const HeteroGraph& g, int n_classes, GatConfig cfg,
                       std::uint64_t seed) {
  std::array<int, 3> dims = {static_cast<int>(g.x_mts.cols()),
                             static_cast<int>(g.x_sub.cols()),
                             static_cast<int>(g.x_shp.cols())};
  Rng rng(seed);
  return init_gat_params(dims, n_classes, cfg, rng);
}

}  // namespace

TEST_CASE("variant parsing round-trips") {
  for (const std::string& name : {"full", "node_only", "type_only", "gcn"})
    REQUIRE(variant_name(parse_variant(name)) == name);
  REQUIRE_THROWS_AS(parse_variant("bogus"), Error);
}

TEST_CASE("attention weights are normalized on 100 random graphs") {
  Rng rng(71);
  for (int trial = 0; trial < 100; ++trial) {
    HeteroGraph g = random_graph(rng, uniform_int(rng, 2, 5), 2,
                                 uniform_int(rng, 1, 4), 3, 2);
    GatConfig cfg;
    cfg.hidden = 4;
    cfg.n_layers = 1;
    GatParams p = small_params(g, 2, cfg, trial);
    GraphView view = make_view(g);
    auto layer = gat_detail::layer_forward(view, p, 0, view.features, true);
    for (int v = 0; v < g.layout.total(); ++v) {
      const auto& na = layer.nodes[v];
      double alpha_sum = 0.0;
      for (int t = 0; t < 3; ++t)
        if (na.present[t]) alpha_sum += na.alpha[t];
      REQUIRE(std::abs(alpha_sum - 1.0) < 1e-6);
      double beta_sum = 0.0;
      for (double b : na.beta) beta_sum += b;
      REQUIRE(std::abs(beta_sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("single neighbor type and single neighbor give unit attention") {
  // A 1-MTS 1-subject pair graph: each node's only neighbors are itself and
  // the other node.
  Rng rng(5);
  HeteroGraph g;
  g.layout = {1, 1, 0};
  g.adjacency = Matrix::Ones(2, 2);
  normalize(g);
  g.x_mts = oracle::random_matrix(rng, 1, 3);
  g.x_sub = Matrix::Identity(1, 1);
  g.x_shp = Matrix::Zero(0, 2);
  GatConfig cfg;
  cfg.hidden = 3;
  cfg.n_layers = 1;
  GatParams p = small_params(g, 2, cfg, 1);
  GraphView view = make_view(g);
  auto layer = gat_detail::layer_forward(view, p, 0, view.features, true);
  // Node 0 sees one MTS neighbor (itself) and one subject neighbor.
  REQUIRE(layer.nodes[0].present[0]);
  REQUIRE(layer.nodes[0].present[1]);
  REQUIRE(layer.nodes[0].beta.size() == 2);
}

TEST_CASE("zero attention parameters give uniform weights") {
  Rng rng(6);
  HeteroGraph g = random_graph(rng, 3, 2, 2, 3, 2);
  GatConfig cfg;
  cfg.hidden = 4;
  cfg.n_layers = 1;
  GatParams p = small_params(g, 2, cfg, 3);
  for (int t = 0; t < 3; ++t) p.xi[0][t].setZero();
  p.eta[0].setZero();
  GraphView view = make_view(g);
  auto layer = gat_detail::layer_forward(view, p, 0, view.features, true);
  for (int v = 0; v < g.layout.total(); ++v) {
    const auto& na = layer.nodes[v];
    int n_present = 0;
    for (int t = 0; t < 3; ++t) n_present += na.present[t] ? 1 : 0;
    for (int t = 0; t < 3; ++t)
      if (na.present[t])
        REQUIRE(na.alpha[t] == Catch::Approx(1.0 / n_present));
    for (double b : na.beta)
      REQUIRE(b == Catch::Approx(1.0 / na.beta.size()));
  }
}

TEST_CASE("gcn variant aggregates with normalized weights directly") {
  Rng rng(7);
  HeteroGraph g;
  g.layout = {2, 1, 0};
  g.adjacency = Matrix::Identity(3, 3);
  normalize(g);
  g.x_mts = oracle::random_matrix(rng, 2, 4);
  g.x_sub = Matrix::Identity(1, 1);
  g.x_shp = Matrix::Zero(0, 1);
  GatConfig cfg;
  cfg.hidden = 4;
  cfg.n_layers = 1;
  cfg.variant = GatVariant::gcn;
  GatParams p = small_params(g, 2, cfg, 4);
  GraphView view = make_view(g);
  auto layer = gat_detail::layer_forward(view, p, 0, view.features, true);
  // A = I: each output row is exactly its own projected input.
  for (int v = 0; v < 2; ++v)
    REQUIRE((layer.G.row(v) - g.x_mts.row(v) * p.proj[0][0])
                .cwiseAbs()
                .maxCoeff() < 1e-12);
}

TEST_CASE("gcn on a 4-cycle gives automorphic nodes identical embeddings") {
  HeteroGraph g;
  g.layout = {4, 0, 0};
  g.adjacency = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    g.adjacency(i, i) = 1.0;
    g.adjacency(i, (i + 1) % 4) = 1.0;
    g.adjacency((i + 1) % 4, i) = 1.0;
  }
  normalize(g);
  g.x_mts = Matrix::Ones(4, 2);  // uniform features
  g.x_sub = Matrix::Zero(0, 1);
  g.x_shp = Matrix::Zero(0, 1);
  GatConfig cfg;
  cfg.hidden = 3;
  cfg.n_layers = 2;
  cfg.variant = GatVariant::gcn;
  GatParams p = small_params(g, 2, cfg, 5);
  GraphView view = make_view(g);
  GatForward f = gat_forward(view, p);
  for (int v = 1; v < 4; ++v)
    REQUIRE((f.layers.back().G.row(v) - f.layers.back().G.row(0))
                .cwiseAbs()
                .maxCoeff() < 1e-9);
}

TEST_CASE("classifier softmax properties") {
  Rng rng(8);
  HeteroGraph g = random_graph(rng, 3, 2, 2, 3, 2);
  GatConfig cfg;
  cfg.hidden = 4;
  cfg.n_layers = 1;
  GatParams p = small_params(g, 3, cfg, 6);
  p.W.setZero();
  GraphView view = make_view(g);
  GatForward f = gat_forward(view, p);
  for (Eigen::Index i = 0; i < f.probs.rows(); ++i) {
    REQUIRE(f.probs.row(i).sum() == Catch::Approx(1.0).margin(1e-9));
    for (Eigen::Index c = 0; c < 3; ++c)
      REQUIRE(f.probs(i, c) == Catch::Approx(1.0 / 3.0));  // W = 0 -> uniform
  }

  // Argmax is invariant under adding a per-row constant to the logits.
  p = small_params(g, 3, cfg, 7);
  GatForward f2 = gat_forward(view, p);
  Matrix shifted = f2.logits;
  shifted.array().colwise() += Vector::LinSpaced(shifted.rows(), 0.5, 3.0).array();
  for (Eigen::Index i = 0; i < shifted.rows(); ++i) {
    Eigen::Index a, b;
    f2.logits.row(i).maxCoeff(&a);
    shifted.row(i).maxCoeff(&b);
    REQUIRE(a == b);
  }
}

TEST_CASE("masked_nll values and masking") {
  NodeLayout layout{3, 1, 1};
  Matrix probs = Matrix::Constant(5, 3, 1.0 / 3.0);
  std::vector<int> labels = {0, 1, 2};
  std::vector<char> mask = {1, 1, 1};
  REQUIRE(masked_nll(probs, labels, mask, layout) ==
          Catch::Approx(std::log(3.0)));

  Matrix perfect = Matrix::Zero(5, 3);
  perfect(0, 0) = perfect(1, 1) = perfect(2, 2) = 1.0;
  REQUIRE(masked_nll(perfect, labels, mask, layout) ==
          Catch::Approx(0.0).margin(1e-12));

  // Unlabeled rows do not contribute.
  Matrix mixed = perfect;
  mixed.row(2).setConstant(1.0 / 3.0);
  std::vector<char> partial = {1, 1, 0};
  REQUIRE(masked_nll(mixed, labels, partial, layout) ==
          Catch::Approx(0.0).margin(1e-12));

  std::vector<char> empty = {0, 0, 0};
  REQUIRE_THROWS_AS(masked_nll(probs, labels, empty, layout), Error);
}

TEST_CASE("gat_loss gradient matches finite differences for every variant") {
  Rng rng(9);
  HeteroGraph g = random_graph(rng, 4, 2, 2, 3, 2);  // 8 nodes total
  std::vector<int> labels = {0, 1, 0, 1};
  std::vector<char> mask = {1, 0, 1, 1};
  for (GatVariant variant : {GatVariant::full, GatVariant::node_only,
                             GatVariant::type_only, GatVariant::gcn}) {
    GatConfig cfg;
    cfg.hidden = 3;
    cfg.n_layers = 2;
    cfg.variant = variant;
    GatParams p = small_params(g, 2, cfg, 10 + static_cast<int>(variant));
    GraphView view = make_view(g);
    auto res = gat_loss(view, p, labels, mask);
    GatParams probe = p;
    auto f = [&](const Vector& v) {
      probe.unflatten(v);
      return gat_loss(view, probe, labels, mask).loss;
    };
    Vector fd = finite_diff_grad(f, p.flatten(), 1e-4);
    INFO("variant " << variant_name(variant));
    REQUIRE(relative_grad_error(res.grad, fd) < 1e-3);
  }
}

TEST_CASE("an edge-isolated unlabeled node never affects the loss") {
  // Node 2 keeps only its self-loop; changing its features must leave the
  // masked loss untouched because no labeled node can see it.
  Rng rng(11);
  HeteroGraph g = random_graph(rng, 4, 2, 1, 3, 2);
  for (int j = 0; j < g.layout.total(); ++j)
    if (j != 2) g.adjacency(2, j) = g.adjacency(j, 2) = 0.0;
  g.adjacency(2, 2) = 1.0;
  normalize(g);
  std::vector<int> labels = {0, 1, 0, 1};
  std::vector<char> mask = {1, 1, 0, 1};  // node 2 unlabeled

  GatConfig cfg;
  cfg.hidden = 3;
  cfg.n_layers = 2;
  GatParams p = small_params(g, 2, cfg, 12);
  double before = gat_loss(make_view(g), p, labels, mask).loss;
  g.x_mts.row(2).setConstant(42.0);
  double after = gat_loss(make_view(g), p, labels, mask).loss;
  REQUIRE(before == after);
}

TEST_CASE("train_gat determinism, epochs=0, and loss decrease") {
  Rng rng(13);
  HeteroGraph g = random_graph(rng, 6, 2, 2, 3, 2);
  std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  std::vector<char> mask = {1, 1, 1, 1, 0, 0};
  GatConfig cfg;
  cfg.hidden = 4;
  cfg.n_layers = 2;
  cfg.epochs = 0;
  cfg.seed = 14;

  auto r0 = train_gat(g, labels, mask, 2, cfg);
  GatParams init = small_params(g, 2, cfg, 14);
  REQUIRE((r0.params.W - init.W).cwiseAbs().maxCoeff() == 0.0);

  cfg.epochs = 50;
  cfg.lr = 1e-2;
  auto a = train_gat(g, labels, mask, 2, cfg);
  auto b = train_gat(g, labels, mask, 2, cfg);
  REQUIRE(a.loss_trace == b.loss_trace);
  REQUIRE((a.params.flatten() - b.params.flatten()).cwiseAbs().maxCoeff() ==
          0.0);
  REQUIRE(a.loss_trace.back() < a.loss_trace.front());
}

TEST_CASE("gat_predict returns one class per MTS node with low-index ties") {
  Rng rng(15);
  HeteroGraph g = random_graph(rng, 3, 1, 1, 3, 2);
  GatConfig cfg;
  cfg.hidden = 3;
  cfg.n_layers = 1;
  GatParams p = small_params(g, 4, cfg, 16);
  p.W.setZero();  // uniform probabilities -> ties -> class 0
  auto pred = gat_predict(g, p);
  REQUIRE(pred.size() == 3);
  for (int y : pred) REQUIRE(y == 0);
}
