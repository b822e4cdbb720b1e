#include <hgrl/shapelets.hpp>

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace hgrl;

namespace {

MtsDataset small_synth(std::uint64_t seed, int per_class = 3, int L = 32,
                       double noise = 0.3) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.per_class = per_class;
  spec.L = L;
  spec.template_len = 8;
  spec.noise_sigma = noise;
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("init_bank shape, determinism, and subsequence sourcing") {
  MtsDataset ds = small_synth(1);
  Rng rng(4);
  ShapeletBank bank = init_bank(ds, {6}, 1, rng);
  REQUIRE(bank.size() == 1);
  REQUIRE(bank.shapelets[0].values.size() == 6);
  REQUIRE(bank.sample_head.rows() == 2);
  REQUIRE(bank.subject_head.cols() == ds.meta.n_subjects);

  Rng r1(4), r2(4);
  ShapeletBank a = init_bank(ds, {6, 10}, 3, r1);
  ShapeletBank b = init_bank(ds, {6, 10}, 3, r2);
  for (int k = 0; k < a.size(); ++k)
    REQUIRE((a.shapelets[k].values - b.shapelets[k].values)
                .cwiseAbs()
                .maxCoeff() == 0.0);

  // Every initial shapelet is bit-equal to some dataset subsequence.
  for (const auto& sh : a.shapelets) {
    bool found = false;
    int len = static_cast<int>(sh.values.size());
    for (int s = 0; s < ds.meta.n_samples && !found; ++s)
      for (int c = 0; c < ds.meta.n_channels && !found; ++c)
        for (int t = 0; t + len <= ds.meta.length && !found; ++t)
          if ((ds.values[s].row(c).segment(t, len).transpose() - sh.values)
                  .isZero(0.0))
            found = true;
    REQUIRE(found);
  }

  Rng r3(4);
  REQUIRE_THROWS_AS(init_bank(ds, {1}, 1, r3), Error);
  REQUIRE_THROWS_AS(init_bank(ds, {32}, 1, r3), Error);
}

TEST_CASE("sub_distance hand values") {
  Matrix series(1, 4);
  series << 3, 4, 0, 0;
  Shapelet sh;
  sh.values = Vector::Zero(2);
  REQUIRE(sub_distance(sh, series, 0, 0) == Catch::Approx(5.0));  // sqrt(9+16)
  sh.values << 0, 0;
  REQUIRE(sub_distance(sh, series, 0, 2) == 0.0);  // equal subsequence
  REQUIRE_THROWS_AS(sub_distance(sh, series, 0, 3), Error);

  // Symmetric under swapping shapelet and subsequence values.
  Shapelet swapped;
  swapped.values = Vector(2);
  swapped.values << 3, 4;
  Matrix zeros = Matrix::Zero(1, 2);
  REQUIRE(sub_distance(swapped, zeros, 0, 0) == Catch::Approx(5.0));
}

TEST_CASE("series_distance soft-minimum behavior") {
  Matrix series(1, 5);
  series << 0, 1, 5, 1, 0;
  Shapelet sh;
  sh.values = Vector(2);
  sh.values << 0, 1;

  // delta1 = 0 -> arithmetic mean of the four position distances.
  Vector d(4);
  for (int z = 0; z < 4; ++z) d[z] = sub_distance(sh, series, 0, z);
  REQUIRE(series_distance(sh, series, 0, 0.0) == Catch::Approx(d.mean()));

  // delta1 = -50 -> hard minimum.
  REQUIRE(series_distance(sh, series, 0, -50.0) ==
          Catch::Approx(d.minCoeff()).margin(1e-6));

  // Convex-combination bound.
  double mid = series_distance(sh, series, 0, -5.0);
  REQUIRE(mid >= d.minCoeff());
  REQUIRE(mid <= d.maxCoeff());

  // Single valid position equals sub_distance there.
  Matrix tiny(1, 2);
  tiny << 3, 7;
  REQUIRE(series_distance(sh, tiny, 0, -5.0) ==
          Catch::Approx(sub_distance(sh, tiny, 0, 0)));
}

TEST_CASE("series_distance_min picks the closest channel") {
  Matrix series(2, 4);
  series << 9, 9, 9, 9,
            0, 1, 0, 1;
  Shapelet sh;
  sh.values = Vector(2);
  sh.values << 0, 1;
  SoftMinCache c = series_distance_min(sh, series, -50.0);
  REQUIRE(c.channel == 1);
  REQUIRE(c.value == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("predict softmax head") {
  Matrix head = Matrix::Zero(3, 4);  // 2 distances, 4 classes
  Vector dist(2);
  dist << 1.0, 2.0;
  Vector p = predict(dist, head);
  REQUIRE(p.size() == 4);
  for (int c = 0; c < 4; ++c) REQUIRE(p[c] == Catch::Approx(0.25));
  REQUIRE(p.sum() == Catch::Approx(1.0).margin(1e-9));

  head(0, 2) = 10.0;  // bias pushes class 2
  Vector p2 = predict(dist, head);
  REQUIRE(p2[2] > 0.999);

  REQUIRE_THROWS_AS(predict(Vector::Zero(5), head), Error);
}

TEST_CASE("multitask_loss values and gradient") {
  MtsDataset ds = small_synth(7, 2, 24);
  ds.labeled_mask.assign(ds.meta.n_samples, 1);
  Rng rng(5);
  ShapeletBank bank = init_bank(ds, {4}, 2, rng);
  bank.delta1 = -2.0;

  // lambda = 1 -> total equals L_sam exactly.
  bank.lambda = 1.0;
  auto only_sam = multitask_loss(ds, bank);
  bank.lambda = 0.0;
  auto only_sub = multitask_loss(ds, bank);
  bank.lambda = 0.25;
  auto mixed = multitask_loss(ds, bank);
  REQUIRE(mixed.loss ==
          Catch::Approx(0.25 * only_sam.loss + 0.75 * only_sub.loss));

  // Gradient check over shapelet values and both heads.
  bank.sample_head = oracle::random_matrix(rng, bank.sample_head.rows(),
                                           bank.sample_head.cols(), -0.3, 0.3);
  bank.subject_head = oracle::random_matrix(rng, bank.subject_head.rows(),
                                            bank.subject_head.cols(), -0.3, 0.3);
  auto res = multitask_loss(ds, bank);
  ShapeletBank gbank = bank;
  for (int k = 0; k < gbank.size(); ++k)
    gbank.shapelets[k].values = res.d_shapelets[k];
  gbank.sample_head = res.d_sample_head;
  gbank.subject_head = res.d_subject_head;
  Vector analytic = hgrl::detail::flatten_bank(gbank);
  ShapeletBank probe = bank;
  auto f = [&](const Vector& v) {
    hgrl::detail::unflatten_bank(v, probe);
    return multitask_loss(ds, probe).loss;
  };
  Vector fd = finite_diff_grad(f, hgrl::detail::flatten_bank(bank), 1e-4);
  REQUIRE(relative_grad_error(analytic, fd) < 1e-3);

  MtsDataset unlabeled = ds;
  unlabeled.labeled_mask.assign(ds.meta.n_samples, 0);
  REQUIRE_THROWS_AS(multitask_loss(unlabeled, bank), Error);
}

TEST_CASE("perfect sample predictions give zero L_sam") {
  MtsDataset ds = small_synth(8, 2, 24);
  ds.labeled_mask.assign(ds.meta.n_samples, 1);
  Rng rng(6);
  ShapeletBank bank = init_bank(ds, {4}, 1, rng);
  bank.lambda = 1.0;
  // A dominant class-0 bias gives near-one-hot predictions; restrict the
  // labeled mask to class-0 series so those predictions are all correct.
  for (int m = 0; m < ds.meta.n_samples; ++m)
    ds.labeled_mask[m] = ds.labels[m] == 0 ? 1 : 0;
  bank.sample_head(0, 0) = 700.0;
  auto res = multitask_loss(ds, bank);
  REQUIRE(res.loss == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("train_shapelets determinism, epochs=0, and loss decrease") {
  MtsDataset ds = znormalize(small_synth(13, 3, 32, 0.0));
  ShapeletTrainConfig cfg;
  cfg.scale_lengths = {4, 6};
  cfg.K = 2;
  cfg.epochs = 0;
  cfg.seed = 13;
  auto r0 = train_shapelets(ds, cfg);
  Rng rng(13);
  ShapeletBank init = init_bank(ds, cfg.scale_lengths, cfg.K, rng);
  for (int k = 0; k < init.size(); ++k)
    REQUIRE((r0.bank.shapelets[k].values - init.shapelets[k].values)
                .cwiseAbs()
                .maxCoeff() == 0.0);
  REQUIRE(r0.bank.delta1 == cfg.delta1);
  REQUIRE(r0.bank.lambda == cfg.lambda);

  cfg.epochs = 30;
  cfg.lr = 1e-2;
  auto a = train_shapelets(ds, cfg);
  auto b = train_shapelets(ds, cfg);
  REQUIRE(a.loss_trace == b.loss_trace);
  for (int k = 0; k < a.bank.size(); ++k)
    REQUIRE((a.bank.shapelets[k].values - b.bank.shapelets[k].values)
                .cwiseAbs()
                .maxCoeff() == 0.0);
  REQUIRE(a.loss_trace.back() < a.loss_trace.front());
}

TEST_CASE("prune drops exactly one of a duplicated pair and is idempotent") {
  MtsDataset ds = small_synth(2);
  Rng rng(3);
  ShapeletBank bank = init_bank(ds, {4}, 3, rng);
  bank.shapelets[1].values = bank.shapelets[0].values;  // exact duplicate
  bank.sample_head = oracle::random_matrix(rng, bank.sample_head.rows(),
                                           bank.sample_head.cols());

  // Near-exact DTW (tiny gamma2) keeps distances of distinct shapelets
  // strictly positive; smoothing at gamma2=1 can push them below zero.
  ShapeletBank pruned = prune(bank, 1e-9, 1e-3);
  REQUIRE(pruned.size() == 2);
  // Survivor of the duplicate pair is the larger sample-head norm.
  double n0 = bank.sample_head.row(1).norm();
  double n1 = bank.sample_head.row(2).norm();
  int kept_id = n0 >= n1 ? 0 : 1;
  bool found = false;
  for (const auto& sh : pruned.shapelets) found = found || sh.id == kept_id;
  REQUIRE(found);
  REQUIRE(pruned.sample_head.rows() == pruned.size() + 1);

  ShapeletBank again = prune(pruned, 1e-9, 1e-3);
  REQUIRE(again.size() == pruned.size());
  for (int k = 0; k < again.size(); ++k)
    REQUIRE(again.shapelets[k].id == pruned.shapelets[k].id);

  // tau_sim = 0 removes nothing from a duplicate-free bank (strict
  // inequality against nonnegative near-exact distances).
  Rng rng2(3);
  ShapeletBank distinct = init_bank(ds, {4}, 3, rng2);
  REQUIRE(prune(distinct, 0.0, 1e-3).size() == distinct.size());
  REQUIRE_THROWS_AS(prune(bank, -1.0, 1.0), Error);
}

TEST_CASE("prune keeps the max-importance member of a near cluster") {
  MtsDataset ds;
  ds.meta = {1, 1, 8, 2, 1, {"a", "b"}, {"s"}};
  ds.values = {Matrix::Zero(1, 8)};
  ds.labels = {0};
  ds.subject_ids = {0};
  ds.labeled_mask = {1};
  ShapeletBank bank;
  bank.scale_lengths = {3};
  for (int k = 0; k < 3; ++k) {
    Shapelet sh;
    sh.id = k;
    sh.scale = 0;
    sh.values = Vector::Constant(3, 1e-4 * k);  // mutually near
    bank.shapelets.push_back(sh);
  }
  bank.sample_head = Matrix::Zero(4, 2);
  bank.sample_head(1, 0) = 0.1;  // id 0
  bank.sample_head(2, 0) = 0.9;  // id 1: most important
  bank.sample_head(3, 0) = 0.5;  // id 2
  bank.subject_head = Matrix::Zero(4, 1);
  ShapeletBank pruned = prune(bank, 0.1, 1.0);
  REQUIRE(pruned.size() == 1);
  REQUIRE(pruned.shapelets[0].id == 1);
}

TEST_CASE("positioning matches the naive oracle") {
  Rng rng(41);
  MtsDataset ds = small_synth(41, 3, 64);
  ShapeletBank bank = init_bank(ds, {5, 9}, 2, rng);
  for (int k = 0; k < bank.size(); ++k)
    for (int m = 0; m < ds.meta.n_samples; ++m) {
      PositionMatch pm = best_response(bank, k, ds, m);
      auto nb = oracle::naive_best_response(bank.shapelets[k].values,
                                            ds.values[m]);
      REQUIRE(pm.response == nb.response);
      REQUIRE(pm.channel == nb.channel);
      REQUIRE(pm.position == nb.position);
    }

  // Every C(i) equals the naive sliding dot product exactly.
  for (int ch = 0; ch < ds.meta.n_channels; ++ch) {
    Vector r = convolve_responses(bank.shapelets[0], ds.values[0], ch);
    const auto& sh = bank.shapelets[0].values;
    for (int i = 0; i < r.size(); ++i) {
      double dot = 0.0;
      for (int t = 0; t < sh.size(); ++t) dot += sh[t] * ds.values[0](ch, i + t);
      REQUIRE(r[i] == dot);
    }
  }
}

TEST_CASE("position thresholding and subject edges") {
  MtsDataset ds = znormalize(small_synth(51, 3, 32));
  Rng rng(51);
  ShapeletBank bank = init_bank(ds, {4}, 2, rng);

  PositioningResult none = position(bank, ds, kInf);
  REQUIRE(none.matches.empty());
  REQUIRE(none.shapelet_subject_edges.empty());

  double eps = epsilon_from_percentile(bank, ds, 50.0);
  PositioningResult res = position(bank, ds, eps);
  for (const auto& m : res.matches) {
    REQUIRE(m.response > eps);
    REQUIRE(res.shapelet_subject_edges.count(
                {m.shapelet_idx, ds.subject_ids[m.series_id]}) == 1);
  }
  // Every subject edge is backed by at least one match.
  for (const auto& [shp, sub] : res.shapelet_subject_edges) {
    bool backed = false;
    for (const auto& m : res.matches)
      backed = backed ||
               (m.shapelet_idx == shp && ds.subject_ids[m.series_id] == sub);
    REQUIRE(backed);
  }
}

TEST_CASE("shapelet matching its normalized source peaks at the source") {
  MtsDataset ds = znormalize(small_synth(61, 2, 32, 0.0));
  Shapelet sh;
  sh.id = 0;
  sh.scale = 0;
  sh.values = ds.values[0].row(1).segment(10, 6).transpose();
  ShapeletBank bank;
  bank.scale_lengths = {6};
  bank.shapelets = {sh};
  bank.sample_head = Matrix::Zero(2, 3);
  bank.subject_head = Matrix::Zero(2, 2);
  PositionMatch pm = best_response(bank, 0, ds, 0);
  auto nb = oracle::naive_best_response(sh.values, ds.values[0]);
  REQUIRE(pm.position == nb.position);
  REQUIRE(pm.channel == nb.channel);
}
