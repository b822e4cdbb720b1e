#pragma once

// End-to-end orchestration: flat dotted-key configuration, the five-stage
// training pipeline, artifact persistence, evaluation, inspection, and the
// linear sweep harness.

#include "hgrl/ctsa.hpp"
#include "hgrl/dataio.hpp"
#include "hgrl/dualgat.hpp"
#include "hgrl/hetgraph.hpp"
#include "hgrl/shapelets.hpp"
#include "hgrl/softdtw.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <map>

namespace hgrl {

struct PipelineConfig {
  std::string dataset_dir;
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  double label_fraction = 0.1;

  struct Ctsa {
    int W = 8, S = 4;
    double gamma1 = 0.5;
    int d_k = 8, N_a = 3, K_neg = 2, epochs = 50;
    double lr = 1e-3;
  } ctsa;

  struct SoftDtw {
    double gamma2 = 1.0;
    double alpha = 1.0;
    int topk = 5;
  } softdtw;

  struct Shapelets {
    std::vector<double> scales{0.1, 0.2, 0.3};  // fractions of L
    int K = 64;
    double delta1 = -5.0;
    double lambda = 0.5;
    double tau_sim = 0.1;
    double epsilon_percentile = 90.0;
    int epochs = 50;
    double lr = 1e-3;
  } shapelets;

  struct Gat {
    int layers = 2;
    int hidden = 64;
    std::string variant = "full";
    int epochs = 200;
    double lr = 1e-3;
  } gat;
};

namespace cfg_detail {

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_csv_line(s))
    out.push_back(parse_double(part, "list value"));
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

}  // namespace cfg_detail

// All recognized dotted keys; anything else is rejected.
inline void set_config_key(PipelineConfig& c, const std::string& key,
                           const std::string& value) {
  auto as_int = [&] { return static_cast<int>(parse_long(value, key)); };
  auto as_double = [&] { return parse_double(value, key); };
  if (key == "dataset_dir") c.dataset_dir = value;
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_long(value, key));
  else if (key == "label_fraction") c.label_fraction = as_double();
  else if (key == "ctsa.W") c.ctsa.W = as_int();
  else if (key == "ctsa.S") c.ctsa.S = as_int();
  else if (key == "ctsa.gamma1") c.ctsa.gamma1 = as_double();
  else if (key == "ctsa.d_k") c.ctsa.d_k = as_int();
  else if (key == "ctsa.N_a") c.ctsa.N_a = as_int();
  else if (key == "ctsa.K_neg") c.ctsa.K_neg = as_int();
  else if (key == "ctsa.epochs") c.ctsa.epochs = as_int();
  else if (key == "ctsa.lr") c.ctsa.lr = as_double();
  else if (key == "softdtw.gamma2") c.softdtw.gamma2 = as_double();
  else if (key == "softdtw.alpha") c.softdtw.alpha = as_double();
  else if (key == "softdtw.topk") c.softdtw.topk = as_int();
  else if (key == "shapelets.scales") c.shapelets.scales = cfg_detail::parse_double_list(value);
  else if (key == "shapelets.K") c.shapelets.K = as_int();
  else if (key == "shapelets.delta1") c.shapelets.delta1 = as_double();
  else if (key == "shapelets.lambda") c.shapelets.lambda = as_double();
  else if (key == "shapelets.tau_sim") c.shapelets.tau_sim = as_double();
  else if (key == "shapelets.epsilon_percentile") c.shapelets.epsilon_percentile = as_double();
  else if (key == "shapelets.epochs") c.shapelets.epochs = as_int();
  else if (key == "shapelets.lr") c.shapelets.lr = as_double();
  else if (key == "gat.layers") c.gat.layers = as_int();
  else if (key == "gat.hidden") c.gat.hidden = as_int();
  else if (key == "gat.variant") c.gat.variant = (parse_variant(value), value);
  else if (key == "gat.epochs") c.gat.epochs = as_int();
  else if (key == "gat.lr") c.gat.lr = as_double();
  else throw Error("unknown config key: " + key);
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["dataset_dir"] = c.dataset_dir;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["label_fraction"] = c.label_fraction;
  j["ctsa.W"] = c.ctsa.W;
  j["ctsa.S"] = c.ctsa.S;
  j["ctsa.gamma1"] = c.ctsa.gamma1;
  j["ctsa.d_k"] = c.ctsa.d_k;
  j["ctsa.N_a"] = c.ctsa.N_a;
  j["ctsa.K_neg"] = c.ctsa.K_neg;
  j["ctsa.epochs"] = c.ctsa.epochs;
  j["ctsa.lr"] = c.ctsa.lr;
  j["softdtw.gamma2"] = c.softdtw.gamma2;
  j["softdtw.alpha"] = c.softdtw.alpha;
  j["softdtw.topk"] = c.softdtw.topk;
  j["shapelets.scales"] = cfg_detail::join(c.shapelets.scales);
  j["shapelets.K"] = c.shapelets.K;
  j["shapelets.delta1"] = c.shapelets.delta1;
  j["shapelets.lambda"] = c.shapelets.lambda;
  j["shapelets.tau_sim"] = c.shapelets.tau_sim;
  j["shapelets.epsilon_percentile"] = c.shapelets.epsilon_percentile;
  j["shapelets.epochs"] = c.shapelets.epochs;
  j["shapelets.lr"] = c.shapelets.lr;
  j["gat.layers"] = c.gat.layers;
  j["gat.hidden"] = c.gat.hidden;
  j["gat.variant"] = c.gat.variant;
  j["gat.epochs"] = c.gat.epochs;
  j["gat.lr"] = c.gat.lr;
  return j;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  if (!j.is_object()) throw Error("config must be a JSON object");
  PipelineConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string value;
    if (it.value().is_string())
      value = it.value().get<std::string>();
    else if (it.value().is_array()) {
      for (std::size_t i = 0; i < it.value().size(); ++i) {
        if (i) value += ',';
        value += it.value()[i].dump();
      }
    } else
      value = it.value().dump();
    set_config_key(c, it.key(), value);
  }
  return c;
}

struct RunMetrics {
  double accuracy = 0.0;
  int n_labeled = 0;
  int n_unlabeled = 0;
  std::map<std::string, double> per_stage_seconds;
  std::vector<int> predictions;
};

namespace detail {

inline void write_loss_trace(const std::string& path,
                             const std::vector<double>& trace) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < trace.size(); ++i)
    out << i << ',' << format_double(trace[i]) << '\n';
}

inline void write_representations(const std::string& path,
                                  const std::vector<Representation>& reps) {
  std::ofstream out(path);
  for (const auto& r : reps)
    for (Eigen::Index t = 0; t < r.embedding_seq.rows(); ++t) {
      out << r.series_id << ',' << t;
      for (Eigen::Index d = 0; d < r.embedding_seq.cols(); ++d)
        out << ',' << format_double(r.embedding_seq(t, d));
      out << '\n';
    }
}

inline void write_shapelets(const std::string& path, const ShapeletBank& bank) {
  std::ofstream out(path);
  for (const auto& sh : bank.shapelets) {
    out << sh.id << ',' << sh.scale << ',' << sh.values.size();
    for (Eigen::Index i = 0; i < sh.values.size(); ++i)
      out << ',' << format_double(sh.values[i]);
    out << '\n';
  }
}

inline void write_positioning(const std::string& path,
                              const PositioningResult& pos) {
  std::ofstream out(path);
  for (const auto& m : pos.matches)
    out << m.shapelet_id << ',' << m.series_id << ',' << m.position << ','
        << format_double(m.response) << '\n';
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.size(), j.empty() ? 0 : j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i)
    for (std::size_t k = 0; k < j[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          j[i][k].get<double>();
  return m;
}

inline void save_checkpoint(const std::string& path, const GatParams& p) {
  nlohmann::json j;
  j["n_layers"] = p.n_layers;
  j["hidden"] = p.hidden;
  j["n_classes"] = p.n_classes;
  j["in_dims"] = p.in_dims;
  j["variant"] = variant_name(p.variant);
  for (int k = 0; k < p.n_layers; ++k) {
    for (int t = 0; t < 3; ++t) {
      j["proj"][k][t] = matrix_to_json(p.proj[k][t]);
      j["xi"][k][t] = std::vector<double>(p.xi[k][t].begin(), p.xi[k][t].end());
    }
    j["eta"][k] = std::vector<double>(p.eta[k].begin(), p.eta[k].end());
  }
  j["W"] = matrix_to_json(p.W);
  std::ofstream out(path);
  out << j.dump() << '\n';
}

inline GatParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error(std::string("corrupt checkpoint: ") + e.what());
  }
  GatParams p;
  try {
    p.n_layers = j.at("n_layers").get<int>();
    p.hidden = j.at("hidden").get<int>();
    p.n_classes = j.at("n_classes").get<int>();
    auto dims = j.at("in_dims").get<std::vector<int>>();
    for (int t = 0; t < 3; ++t) p.in_dims[t] = dims.at(t);
    p.variant = parse_variant(j.at("variant").get<std::string>());
    for (int k = 0; k < p.n_layers; ++k) {
      std::array<Matrix, 3> pr;
      std::array<Vector, 3> xi;
      for (int t = 0; t < 3; ++t) {
        pr[t] = matrix_from_json(j.at("proj").at(k).at(t));
        auto xv = j.at("xi").at(k).at(t).get<std::vector<double>>();
        xi[t] = Eigen::Map<const Vector>(xv.data(), xv.size());
      }
      auto ev = j.at("eta").at(k).get<std::vector<double>>();
      p.proj.push_back(std::move(pr));
      p.xi.push_back(std::move(xi));
      p.eta.push_back(Eigen::Map<const Vector>(ev.data(), ev.size()));
    }
    p.W = matrix_from_json(j.at("W"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint: ") + e.what());
  }
  return p;
}

inline std::vector<int> resolve_scale_lengths(const std::vector<double>& fracs,
                                              int L) {
  std::vector<int> lengths;
  for (double f : fracs) {
    int len = std::max(2, static_cast<int>(std::lround(f * L)));
    len = std::min(len, L - 1);
    lengths.push_back(len);
  }
  return lengths;
}

}  // namespace detail

// Runs the five stages in order and persists every stage artifact under
// cfg.out_dir.
inline RunMetrics run_train(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  if (cfg.dataset_dir.empty()) throw Error("dataset_dir not set");
  fs::create_directories(cfg.out_dir);
  SeedPlan plan{cfg.seed};
  RunMetrics metrics;
  auto timed = [&](const std::string& stage, auto&& fn) {
    auto t0 = clock::now();
    fn();
    metrics.per_stage_seconds[stage] =
        std::chrono::duration<double>(clock::now() - t0).count();
  };

  MtsDataset ds = znormalize(load_dataset(cfg.dataset_dir));
  ds.labeled_mask = make_label_mask(ds, cfg.label_fraction, plan.mask());
  {
    std::ofstream out(cfg.out_dir + "/label_mask.csv");
    for (int i = 0; i < ds.meta.n_samples; ++i)
      out << i << ',' << static_cast<int>(ds.labeled_mask[i]) << '\n';
  }

  // Step 1a: contrastive representations.
  std::vector<Representation> reps;
  CtsaConfig ctsa_cfg{cfg.ctsa.W,     cfg.ctsa.S,      cfg.ctsa.gamma1,
                      cfg.ctsa.d_k,   cfg.ctsa.N_a,    cfg.ctsa.K_neg,
                      cfg.ctsa.epochs, cfg.ctsa.lr,    plan.ctsa()};
  timed("ctsa", [&] {
    auto r = train_ctsa(ds, ctsa_cfg);
    detail::write_loss_trace(cfg.out_dir + "/ctsa_loss.csv", r.loss_trace);
    reps = encode(ds, r.params, ctsa_cfg);
    detail::write_representations(cfg.out_dir + "/representations.csv", reps);
  });

  // Step 1b: soft-DTW similarity graph.
  SimilarityMatrix sim;
  timed("softdtw", [&] {
    std::vector<Matrix> seqs;
    for (const auto& r : reps) seqs.push_back(r.embedding_seq);
    Matrix D = pairwise_matrix(seqs, {.gamma2 = cfg.softdtw.gamma2});
    sim = similarity(D, cfg.softdtw.alpha);
    write_matrix_csv(cfg.out_dir + "/distance.csv", sim.dist);
    write_matrix_csv(cfg.out_dir + "/similarity.csv", sim.sim);
  });

  // Step 2: subject shapelets, pruning, positioning.
  ShapeletBank bank;
  PositioningResult pos;
  timed("shapelets", [&] {
    ShapeletTrainConfig scfg;
    scfg.scale_lengths =
        detail::resolve_scale_lengths(cfg.shapelets.scales, ds.meta.length);
    scfg.K = cfg.shapelets.K;
    scfg.delta1 = cfg.shapelets.delta1;
    scfg.lambda = cfg.shapelets.lambda;
    scfg.epochs = cfg.shapelets.epochs;
    scfg.lr = cfg.shapelets.lr;
    scfg.seed = plan.shapelets();
    auto r = train_shapelets(ds, scfg);
    detail::write_loss_trace(cfg.out_dir + "/shapelet_loss.csv", r.loss_trace);
    bank = prune(r.bank, cfg.shapelets.tau_sim, cfg.softdtw.gamma2);
    double eps =
        epsilon_from_percentile(bank, ds, cfg.shapelets.epsilon_percentile);
    pos = position(bank, ds, eps);
    detail::write_shapelets(cfg.out_dir + "/shapelets.csv", bank);
    detail::write_positioning(cfg.out_dir + "/positioning.csv", pos);
  });

  // Steps 3-4: features and heterogeneous graph.
  HeteroGraph graph;
  timed("graph", [&] {
    AssembleConfig acfg{cfg.softdtw.topk, cfg.softdtw.alpha, cfg.softdtw.gamma2};
    graph = assemble(sim, ds, bank, pos, acfg);
    graph.x_mts = mts_node_features(reps);
    normalize(graph);
    auto report = validate(graph);
    if (!report.all_ok()) {
      std::string bad;
      for (const auto& it : report.items)
        if (!it.ok) bad += " " + it.name;
      throw Error("graph validation failed:" + bad);
    }
    write_matrix_csv(cfg.out_dir + "/adjacency.csv", graph.adjacency);
    write_matrix_csv(cfg.out_dir + "/features_mts.csv", graph.x_mts);
    write_matrix_csv(cfg.out_dir + "/features_sub.csv", graph.x_sub);
    write_matrix_csv(cfg.out_dir + "/features_shp.csv", graph.x_shp);
    nlohmann::json lay;
    lay["n_mts"] = graph.layout.n_mts;
    lay["n_sub"] = graph.layout.n_sub;
    lay["n_shp"] = graph.layout.n_shp;
    std::ofstream out(cfg.out_dir + "/layout.json");
    out << lay.dump(2) << '\n';
  });

  // Step 5: dual-level GAT training and prediction.
  timed("gat", [&] {
    GatConfig gcfg{cfg.gat.layers, cfg.gat.hidden, parse_variant(cfg.gat.variant),
                   cfg.gat.epochs, cfg.gat.lr, plan.gat()};
    auto r = train_gat(graph, ds.labels, ds.labeled_mask, ds.meta.n_classes, gcfg);
    detail::write_loss_trace(cfg.out_dir + "/gat_loss.csv", r.loss_trace);
    detail::save_checkpoint(cfg.out_dir + "/gat_checkpoint.json", r.params);
    metrics.predictions = gat_predict(graph, r.params);
  });

  int correct = 0;
  for (int i = 0; i < ds.meta.n_samples; ++i) {
    if (ds.labeled_mask[i]) {
      ++metrics.n_labeled;
      continue;
    }
    ++metrics.n_unlabeled;
    if (metrics.predictions[i] == ds.labels[i]) ++correct;
  }
  metrics.accuracy =
      metrics.n_unlabeled ? static_cast<double>(correct) / metrics.n_unlabeled
                          : 1.0;

  {
    std::ofstream out(cfg.out_dir + "/predictions.csv");
    for (std::size_t i = 0; i < metrics.predictions.size(); ++i)
      out << i << ',' << metrics.predictions[i] << '\n';
  }
  {
    nlohmann::json j;
    j["accuracy"] = metrics.accuracy;
    j["n_labeled"] = metrics.n_labeled;
    j["n_unlabeled"] = metrics.n_unlabeled;
    j["loss"] = "nll";
    for (const auto& [k, v] : metrics.per_stage_seconds)
      j["per_stage_seconds"][k] = v;
    j["config_echo"] = config_to_json(cfg);
    std::ofstream out(cfg.out_dir + "/metrics.json");
    out << j.dump(2) << '\n';
  }
  return metrics;
}

inline HeteroGraph load_graph_artifacts(const std::string& dir) {
  std::ifstream in(dir + "/layout.json");
  if (!in) throw Error("missing " + dir + "/layout.json");
  nlohmann::json lay;
  in >> lay;
  HeteroGraph g;
  g.layout.n_mts = lay.at("n_mts").get<int>();
  g.layout.n_sub = lay.at("n_sub").get<int>();
  g.layout.n_shp = lay.at("n_shp").get<int>();
  g.adjacency = read_matrix_csv(dir + "/adjacency.csv");
  if (g.adjacency.rows() != g.layout.total())
    throw Error("adjacency size does not match layout");
  g.x_mts = read_matrix_csv(dir + "/features_mts.csv");
  g.x_sub = read_matrix_csv(dir + "/features_sub.csv");
  g.x_shp = read_matrix_csv(dir + "/features_shp.csv");
  normalize(g);
  return g;
}

// Accuracy over series whose labels are known but were masked as unlabeled
// during training.
inline RunMetrics run_eval(const std::string& artifacts_dir,
                           const std::string& dataset_dir) {
  HeteroGraph graph = load_graph_artifacts(artifacts_dir);
  GatParams params =
      detail::load_checkpoint(artifacts_dir + "/gat_checkpoint.json");
  MtsDataset ds = load_dataset(dataset_dir);

  std::vector<char> mask(ds.meta.n_samples, 0);
  auto rows = read_csv(artifacts_dir + "/label_mask.csv");
  for (const auto& row : rows)
    mask[parse_long(row[0], "label_mask.csv")] =
        static_cast<char>(parse_long(row[1], "label_mask.csv"));

  RunMetrics m;
  m.predictions = gat_predict(graph, params);
  int correct = 0;
  for (int i = 0; i < ds.meta.n_samples; ++i) {
    if (mask[i]) {
      ++m.n_labeled;
      continue;
    }
    ++m.n_unlabeled;
    if (m.predictions[i] == ds.labels[i]) ++correct;
  }
  m.accuracy = m.n_unlabeled ? static_cast<double>(correct) / m.n_unlabeled : 1.0;
  return m;
}

// Re-derives plot-ready exports from persisted artifacts.
inline void run_inspect(const std::string& artifacts_dir,
                        const std::string& what) {
  namespace fs = std::filesystem;
  auto require = [&](const std::string& name) {
    if (!fs::exists(artifacts_dir + "/" + name))
      throw Error("missing artifact " + name + "; run train first");
  };
  if (what == "graph") {
    require("adjacency.csv");
    require("layout.json");
  } else if (what == "shapelets") {
    require("shapelets.csv");
    require("positioning.csv");
  } else if (what == "similarity") {
    require("similarity.csv");
  } else if (what == "attention") {
    HeteroGraph graph = load_graph_artifacts(artifacts_dir);
    GatParams params =
        detail::load_checkpoint(artifacts_dir + "/gat_checkpoint.json");
    GraphView view = make_view(graph);
    GatForward f = gat_forward(view, params);
    const auto& last = f.layers.back();
    std::ofstream alpha_out(artifacts_dir + "/attention_alpha.csv");
    std::ofstream beta_out(artifacts_dir + "/attention_beta.csv");
    for (int v = 0; v < graph.layout.total(); ++v) {
      if (params.variant != GatVariant::gcn)
        for (int t = 0; t < 3; ++t)
          if (last.nodes[v].present[t])
            alpha_out << v << ',' << t << ','
                      << format_double(last.nodes[v].alpha[t]) << '\n';
      for (std::size_t e = 0; e < view.nbrs[v].size(); ++e) {
        double beta = params.variant == GatVariant::gcn
                          ? view.weights(v, view.nbrs[v][e])
                          : last.nodes[v].beta[e];
        beta_out << v << ',' << view.nbrs[v][e] << ',' << format_double(beta)
                 << '\n';
      }
    }
  } else {
    throw Error("unknown inspect target: " + what +
                " (expected graph|shapelets|attention|similarity)");
  }
}

struct SweepRow {
  std::string value;
  double accuracy = 0.0;
};

// Runs cmd_train once per value of a single config key, with derived seeds.
inline std::vector<SweepRow> run_sweep(const PipelineConfig& base,
                                       const std::string& key,
                                       const std::vector<std::string>& values) {
  if (values.empty()) throw Error("sweep: empty values list");
  std::vector<SweepRow> rows;
  std::filesystem::create_directories(base.out_dir);
  std::ofstream out(base.out_dir + "/sweep.csv");
  out << "value,accuracy\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    PipelineConfig cfg = base;
    set_config_key(cfg, key, values[i]);
    cfg.seed = base.seed + 1000 * (i + 1);
    std::string tag = values[i];
    for (char& ch : tag)
      if (ch == '/' || ch == ',' || ch == ' ') ch = '_';
    cfg.out_dir = base.out_dir + "/sweep_" + tag;
    RunMetrics m = run_train(cfg);
    rows.push_back({values[i], m.accuracy});
    out << values[i] << ',' << format_double(m.accuracy) << '\n';
  }
  return rows;
}

}  // namespace hgrl
