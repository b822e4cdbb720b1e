#pragma once

// Dataset loading/saving, z-normalization, stratified label masks, and the
// synthetic generator used by the desk-scale pipeline runs.
//
// On-disk layout of a dataset directory:
//   meta.json     keys: n_samples, n_channels, length, n_classes, n_subjects,
//                 class_names, subject_names
//   data.csv      n_samples*n_channels rows: sample_idx,channel_idx,v_0..v_{L-1}
//   labels.csv    rows: sample_idx,class_idx
//   subjects.csv  rows: sample_idx,subject_idx
//   mask.csv      optional rows: sample_idx,0|1

#include "hgrl/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace hgrl {

struct DatasetMeta {
  int n_samples = 0;
  int n_channels = 0;
  int length = 0;
  int n_classes = 0;
  int n_subjects = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> subject_names;
};

struct MtsDataset {
  DatasetMeta meta;
  std::vector<Matrix> values;  // n_samples entries, each C x L
  std::vector<int> labels;
  std::vector<int> subject_ids;
  std::vector<char> labeled_mask;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int per_class = 20;
  int n_classes = 3;
  int n_subjects = 2;
  int C = 3;
  int L = 64;
  int template_len = 16;
  double noise_sigma = 0.3;
  double subject_offset = 0.5;
};

inline void validate_dataset(const MtsDataset& ds) {
  const auto& m = ds.meta;
  if (m.n_samples < 1 || m.n_channels < 1 || m.length < 1 || m.n_classes < 1 ||
      m.n_subjects < 1)
    throw Error("meta counts must all be >= 1");
  if (static_cast<int>(m.class_names.size()) != m.n_classes)
    throw Error("class_names length does not match n_classes");
  if (static_cast<int>(m.subject_names.size()) != m.n_subjects)
    throw Error("subject_names length does not match n_subjects");
  if (static_cast<int>(ds.values.size()) != m.n_samples)
    throw Error("values count does not match n_samples");
  for (const auto& v : ds.values)
    if (v.rows() != m.n_channels || v.cols() != m.length)
      throw Error("series shape does not match meta");
  if (static_cast<int>(ds.labels.size()) != m.n_samples ||
      static_cast<int>(ds.subject_ids.size()) != m.n_samples ||
      static_cast<int>(ds.labeled_mask.size()) != m.n_samples)
    throw Error("per-series arrays do not match n_samples");
  for (int y : ds.labels)
    if (y < 0 || y >= m.n_classes) throw Error("label index out of range");
  for (int s : ds.subject_ids)
    if (s < 0 || s >= m.n_subjects) throw Error("subject index out of range");
}

inline MtsDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = dir + "/meta.json";
  if (!fs::exists(meta_path)) throw Error("missing " + meta_path);
  std::ifstream min(meta_path);
  nlohmann::json j;
  min >> j;

  MtsDataset ds;
  ds.meta.n_samples = j.at("n_samples").get<int>();
  ds.meta.n_channels = j.at("n_channels").get<int>();
  ds.meta.length = j.at("length").get<int>();
  ds.meta.n_classes = j.at("n_classes").get<int>();
  ds.meta.n_subjects = j.at("n_subjects").get<int>();
  ds.meta.class_names = j.at("class_names").get<std::vector<std::string>>();
  ds.meta.subject_names = j.at("subject_names").get<std::vector<std::string>>();

  const int n = ds.meta.n_samples, C = ds.meta.n_channels, L = ds.meta.length;
  ds.values.assign(n, Matrix::Zero(C, L));

  const std::string data_path = dir + "/data.csv";
  auto rows = read_csv(data_path);
  if (static_cast<int>(rows.size()) != n * C)
    throw Error("data.csv row count does not match n_samples*n_channels");
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != L + 2)
      throw Error("data.csv row width does not match length");
    int s = static_cast<int>(parse_long(row[0], data_path));
    int c = static_cast<int>(parse_long(row[1], data_path));
    if (s < 0 || s >= n || c < 0 || c >= C)
      throw Error("data.csv sample/channel index out of range");
    for (int t = 0; t < L; ++t)
      ds.values[s](c, t) = parse_double(row[t + 2], data_path);
  }

  auto read_index_file = [&](const std::string& name, int bound,
                             const char* what) {
    std::vector<int> out(n, -1);
    auto r = read_csv(dir + "/" + name);
    if (static_cast<int>(r.size()) != n)
      throw Error(name + " row count does not match n_samples");
    for (const auto& row : r) {
      if (row.size() != 2) throw Error("bad row in " + name);
      int s = static_cast<int>(parse_long(row[0], name));
      int v = static_cast<int>(parse_long(row[1], name));
      if (s < 0 || s >= n) throw Error(name + " sample index out of range");
      if (v < 0 || v >= bound)
        throw Error(std::string(what) + " index out of range in " + name);
      out[s] = v;
    }
    return out;
  };
  ds.labels = read_index_file("labels.csv", ds.meta.n_classes, "class");
  ds.subject_ids = read_index_file("subjects.csv", ds.meta.n_subjects, "subject");

  ds.labeled_mask.assign(n, 1);
  if (fs::exists(dir + "/mask.csv")) {
    auto r = read_csv(dir + "/mask.csv");
    if (static_cast<int>(r.size()) != n)
      throw Error("mask.csv row count does not match n_samples");
    for (const auto& row : r) {
      if (row.size() != 2) throw Error("bad row in mask.csv");
      int s = static_cast<int>(parse_long(row[0], "mask.csv"));
      int v = static_cast<int>(parse_long(row[1], "mask.csv"));
      if (s < 0 || s >= n || (v != 0 && v != 1)) throw Error("bad mask entry");
      ds.labeled_mask[s] = static_cast<char>(v);
    }
  }
  validate_dataset(ds);
  return ds;
}

inline void save_dataset(const MtsDataset& ds, const std::string& dir) {
  validate_dataset(ds);
  std::filesystem::create_directories(dir);
  {
    nlohmann::json j;
    j["n_samples"] = ds.meta.n_samples;
    j["n_channels"] = ds.meta.n_channels;
    j["length"] = ds.meta.length;
    j["n_classes"] = ds.meta.n_classes;
    j["n_subjects"] = ds.meta.n_subjects;
    j["class_names"] = ds.meta.class_names;
    j["subject_names"] = ds.meta.subject_names;
    std::ofstream out(dir + "/meta.json");
    out << j.dump(2) << '\n';
  }
  {
    std::ofstream out(dir + "/data.csv");
    for (int s = 0; s < ds.meta.n_samples; ++s)
      for (int c = 0; c < ds.meta.n_channels; ++c) {
        out << s << ',' << c;
        for (int t = 0; t < ds.meta.length; ++t)
          out << ',' << format_double(ds.values[s](c, t));
        out << '\n';
      }
  }
  auto write_index_file = [&](const std::string& name,
                              const std::vector<int>& v) {
    std::ofstream out(dir + "/" + name);
    for (int s = 0; s < ds.meta.n_samples; ++s)
      out << s << ',' << v[s] << '\n';
  };
  write_index_file("labels.csv", ds.labels);
  write_index_file("subjects.csv", ds.subject_ids);
  {
    std::ofstream out(dir + "/mask.csv");
    for (int s = 0; s < ds.meta.n_samples; ++s)
      out << s << ',' << static_cast<int>(ds.labeled_mask[s]) << '\n';
  }
}

// Per-(sample, channel) z-normalization; a constant trace maps to zeros.
inline MtsDataset znormalize(const MtsDataset& ds) {
  MtsDataset out = ds;
  const int L = ds.meta.length;
  for (auto& series : out.values) {
    for (int c = 0; c < series.rows(); ++c) {
      double mean = series.row(c).mean();
      double var = (series.row(c).array() - mean).square().sum() / L;
      double sd = std::sqrt(var);
      if (sd < 1e-12)
        series.row(c).setZero();
      else
        series.row(c) = (series.row(c).array() - mean) / sd;
    }
  }
  return out;
}

// Stratified: ceil(fraction * n_c) labeled series per class, seeded shuffle.
inline std::vector<char> make_label_mask(const MtsDataset& ds, double fraction,
                                         std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw Error("label fraction must be in (0, 1]");
  std::vector<char> mask(ds.meta.n_samples, 0);
  Rng rng(seed);
  for (int c = 0; c < ds.meta.n_classes; ++c) {
    std::vector<int> members;
    for (int i = 0; i < ds.meta.n_samples; ++i)
      if (ds.labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    int take = static_cast<int>(
        std::ceil(fraction * static_cast<double>(members.size())));
    take = std::min<int>(take, static_cast<int>(members.size()));
    for (int k = 0; k < take; ++k) mask[members[k]] = 1;
  }
  return mask;
}

// Each class gets a fixed random template planted at a random position in a
// random channel of each of its series; subjects shift channel 0; Gaussian
// noise everywhere.
inline MtsDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.template_len >= spec.L) throw Error("template_len must be < L");
  if (spec.noise_sigma < 0) throw Error("noise_sigma must be >= 0");
  Rng rng(spec.seed);

  std::vector<Vector> templates(spec.n_classes);
  for (auto& t : templates) {
    t = Vector(spec.template_len);
    for (int i = 0; i < spec.template_len; ++i) t[i] = gaussian(rng, 1.0);
  }

  MtsDataset ds;
  ds.meta.n_samples = spec.per_class * spec.n_classes;
  ds.meta.n_channels = spec.C;
  ds.meta.length = spec.L;
  ds.meta.n_classes = spec.n_classes;
  ds.meta.n_subjects = spec.n_subjects;
  for (int c = 0; c < spec.n_classes; ++c)
    ds.meta.class_names.push_back("class_" + std::to_string(c));
  for (int s = 0; s < spec.n_subjects; ++s)
    ds.meta.subject_names.push_back("subject_" + std::to_string(s));

  for (int cls = 0; cls < spec.n_classes; ++cls) {
    for (int rep = 0; rep < spec.per_class; ++rep) {
      Matrix series = Matrix::Zero(spec.C, spec.L);
      int channel = uniform_int(rng, 0, spec.C - 1);
      int pos = uniform_int(rng, 0, spec.L - spec.template_len);
      series.row(channel).segment(pos, spec.template_len) +=
          templates[cls].transpose();
      int idx = static_cast<int>(ds.values.size());
      int subject = idx % spec.n_subjects;
      series.row(0).array() += spec.subject_offset * subject;
      if (spec.noise_sigma > 0)
        for (int c = 0; c < spec.C; ++c)
          for (int t = 0; t < spec.L; ++t)
            series(c, t) += gaussian(rng, spec.noise_sigma);
      ds.values.push_back(std::move(series));
      ds.labels.push_back(cls);
      ds.subject_ids.push_back(subject);
      ds.labeled_mask.push_back(1);
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace hgrl
