#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uhn/executors.hpp"
#include "uhn/rng.hpp"
#include "uhn/trainer.hpp"

// Dataset ingestion and desk-scale synthetic substitutes: IDX image files
// (bit-exact big-endian format), closed-form formula regression sets,
// edge-list graphs, and synthetic token sequences.

namespace uhn {

// ---------------------------------------------------------------------------
// IDX image format

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::istream& f, const std::string& path, long offset) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  check(f.good(), "truncated idx file ", path, " at byte ", offset);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& f, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 8), (unsigned char)v};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

struct ImageDataset {
  int count = 0, rows = 0, cols = 0;
  std::vector<double> pixels;  // [count x rows*cols], standardized
  std::vector<int> labels;
  double norm_mean = 0, norm_std = 1;

  int dim() const { return rows * cols; }
};

/// Parses big-endian IDX image+label files (magics 0x00000803 / 0x00000801).
/// Pixels are scaled to [0,1] and standardized with the global mean/std of
/// the loaded split.
inline ImageDataset load_mnist_idx(const std::string& images_path,
                                   const std::string& labels_path, long limit = -1) {
  std::ifstream fi(images_path, std::ios::binary);
  check(fi.good(), "cannot open idx image file: ", images_path);
  auto magic = detail::read_be32(fi, images_path, 0);
  check(magic == kIdxImageMagic, "bad idx image magic 0x", std::hex, magic, std::dec,
        " in ", images_path, " at byte 0 (expected 0x00000803)");
  long n = detail::read_be32(fi, images_path, 4);
  long rows = detail::read_be32(fi, images_path, 8);
  long cols = detail::read_be32(fi, images_path, 12);

  std::ifstream fl(labels_path, std::ios::binary);
  check(fl.good(), "cannot open idx label file: ", labels_path);
  auto lmagic = detail::read_be32(fl, labels_path, 0);
  check(lmagic == kIdxLabelMagic, "bad idx label magic 0x", std::hex, lmagic, std::dec,
        " in ", labels_path, " at byte 0 (expected 0x00000801)");
  long ln = detail::read_be32(fl, labels_path, 4);
  check(ln == n, "idx image/label count mismatch: ", n, " vs ", ln);

  if (limit >= 0) n = std::min(n, limit);
  ImageDataset ds;
  ds.count = (int)n;
  ds.rows = (int)rows;
  ds.cols = (int)cols;
  long npx = n * rows * cols;
  std::vector<unsigned char> raw(npx);
  fi.read(reinterpret_cast<char*>(raw.data()), npx);
  check(fi.gcount() == npx, "truncated idx image payload in ", images_path, " at byte ",
        16 + fi.gcount());
  std::vector<unsigned char> lab(n);
  fl.read(reinterpret_cast<char*>(lab.data()), n);
  check(fl.gcount() == n, "truncated idx label payload in ", labels_path, " at byte ",
        8 + fl.gcount());

  ds.pixels.resize(npx);
  double s1 = 0, s2 = 0;
  for (long i = 0; i < npx; ++i) {
    double v = raw[i] / 255.0;
    ds.pixels[i] = v;
    s1 += v;
    s2 += v * v;
  }
  ds.norm_mean = s1 / npx;
  ds.norm_std = std::sqrt(std::max(1e-12, s2 / npx - ds.norm_mean * ds.norm_mean));
  for (auto& v : ds.pixels) v = (v - ds.norm_mean) / ds.norm_std;
  ds.labels.assign(lab.begin(), lab.end());
  return ds;
}

inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& px,
                             int n, int rows, int cols) {
  check((long)px.size() == (long)n * rows * cols, "write_idx_images: size mismatch");
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot write idx file: ", path);
  detail::write_be32(f, kIdxImageMagic);
  detail::write_be32(f, (std::uint32_t)n);
  detail::write_be32(f, (std::uint32_t)rows);
  detail::write_be32(f, (std::uint32_t)cols);
  f.write(reinterpret_cast<const char*>(px.data()), (std::streamsize)px.size());
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot write idx file: ", path);
  detail::write_be32(f, kIdxLabelMagic);
  detail::write_be32(f, (std::uint32_t)labels.size());
  for (int l : labels) {
    unsigned char b = (unsigned char)l;
    f.write(reinterpret_cast<const char*>(&b), 1);
  }
}

/// Desk-scale image-classification substitute written in real IDX files:
/// ten classes of oriented gratings with per-image phase, shift and noise.
inline void write_synthetic_image_idx(const std::string& dir, int n_train, int n_test,
                                      std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto rng = make_stream(seed, "synth_image");
  std::normal_distribution<double> noise(0.0, 130.0);
  std::uniform_real_distribution<double> phase(0.0, 2 * M_PI);
  std::uniform_int_distribution<int> shift(-3, 3);
  auto emit = [&](const std::string& stem, int n) {
    std::vector<unsigned char> px((long)n * 28 * 28);
    std::vector<int> labels(n);
    std::uniform_int_distribution<int> cls(0, 9);
    for (int i = 0; i < n; ++i) {
      int c = cls(rng);
      labels[i] = c;
      double theta = M_PI * c / 10.0;
      double freq = 2.0 + (c % 5);
      double ph = phase(rng);
      int dx = shift(rng), dy = shift(rng);
      double ct = std::cos(theta), st = std::sin(theta);
      for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
          double u = ((x + dx) * ct + (y + dy) * st) / 28.0;
          double v = 127.0 + 50.0 * std::sin(2 * M_PI * freq * u + ph) + noise(rng);
          px[((long)i * 28 + y) * 28 + x] = (unsigned char)std::clamp(v, 0.0, 255.0);
        }
    }
    write_idx_images(dir + "/" + stem + "-images-idx3-ubyte", px, n, 28, 28);
    write_idx_labels(dir + "/" + stem + "-labels-idx1-ubyte", labels);
  };
  emit("train", n_train);
  emit("t10k", n_test);
}

/// Minibatch views over an image dataset (flattened for MLPs, NCHW for CNNs).
struct ImageBatcher {
  const ImageDataset* ds = nullptr;
  int batch = 256;
  bool as_image = false;

  Batch sample(std::mt19937_64& rng) const {
    Batch b;
    int n = std::min(batch, ds->count);
    std::uniform_int_distribution<int> pick(0, ds->count - 1);
    b.dense_shape = as_image ? std::vector<int>{n, 1, ds->rows, ds->cols}
                             : std::vector<int>{n, ds->dim()};
    b.dense.resize((long)n * ds->dim());
    b.labels.resize(n);
    for (int i = 0; i < n; ++i) {
      int j = pick(rng);
      std::copy_n(ds->pixels.data() + (long)j * ds->dim(), ds->dim(),
                  b.dense.data() + (long)i * ds->dim());
      b.labels[i] = ds->labels[j];
    }
    return b;
  }

  Batch full() const {
    Batch b;
    b.dense_shape = as_image ? std::vector<int>{ds->count, 1, ds->rows, ds->cols}
                             : std::vector<int>{ds->count, ds->dim()};
    b.dense = ds->pixels;
    b.labels = ds->labels;
    return b;
  }
};

// ---------------------------------------------------------------------------
// formula regression

enum class FormulaId { constant1, legendre_p2, rational_decay, harmonic };

inline FormulaId formula_from_name(const std::string& s) {
  if (s == "constant1") return FormulaId::constant1;
  if (s == "legendre_p2") return FormulaId::legendre_p2;
  if (s == "rational_decay") return FormulaId::rational_decay;
  if (s == "harmonic") return FormulaId::harmonic;
  fail("unknown formula: ", s);
}

inline DatasetType formula_dataset_type(FormulaId id) {
  switch (id) {
    case FormulaId::constant1:
      return DatasetType::formula_constant;
    case FormulaId::legendre_p2:
      return DatasetType::formula_legendre;
    case FormulaId::rational_decay:
      return DatasetType::formula_rational;
    case FormulaId::harmonic:
      return DatasetType::formula_harmonic;
  }
  return DatasetType::none;
}

/// Closed-form targets evaluated on normalized inputs z = 2x - 1 in [-1,1)^2.
/// rational_decay keeps the raw x2 in [0.1, 1) as its decay coordinate.
inline double formula_value(FormulaId id, double z1, double z2, double x2_raw) {
  switch (id) {
    case FormulaId::constant1:
      return 1.0;
    case FormulaId::legendre_p2:
      return 0.5 * (3.0 * z1 * z1 - 1.0);
    case FormulaId::rational_decay:
      return 0.1 * std::cos(2.0 * z1) / (x2_raw + 0.2);
    case FormulaId::harmonic:
      return 0.5 * std::sin(M_PI * z1) * std::cos(M_PI * z2);
  }
  return 0.0;
}

struct FormulaDataset {
  Batch train, test;
};

/// Samples (x1, x2) uniformly over [0,1)^2 (x2 in [0.1,1) for the
/// rational-decay surrogate), normalizes inputs to [-1,1) and evaluates the
/// closed form; both splits are full batches.
inline FormulaDataset make_formula_dataset(FormulaId id, int n_train, int n_test,
                                           std::uint64_t seed) {
  auto rng = make_stream(seed, "formula");
  std::uniform_real_distribution<double> u1(0.0, 1.0);
  double x2_lo = id == FormulaId::rational_decay ? 0.1 : 0.0;
  std::uniform_real_distribution<double> u2(x2_lo, 1.0);
  auto emit = [&](int n) {
    Batch b;
    b.regression = true;
    b.dense_shape = {n, 2};
    b.target_shape = {n, 1};
    b.dense.resize(2L * n);
    b.targets.resize(n);
    for (int i = 0; i < n; ++i) {
      double x1 = u1(rng), x2 = u2(rng);
      double z1 = 2 * x1 - 1, z2 = 2 * x2 - 1;
      b.dense[2L * i] = z1;
      b.dense[2L * i + 1] = z2;
      b.targets[i] = formula_value(id, z1, z2, x2);
    }
    return b;
  };
  return {emit(n_train), emit(n_test)};
}

// ---------------------------------------------------------------------------
// edge-list graphs

struct GraphDataset {
  GraphContext ctx;
  std::vector<double> features;  // [n x f], row-normalized
  std::vector<int> labels;       // per node
  std::vector<int> train_idx, val_idx, test_idx;
  int n = 0, feature_dim = 0, classes = 0;

  Batch batch_for(const std::vector<int>& idx) const {
    Batch b;
    b.dense_shape = {n, feature_dim};
    b.dense = features;
    b.graph = &ctx;
    b.eval_index = idx;
    for (int i : idx) b.labels.push_back(labels[i]);
    return b;
  }
};

/// Reads a node-classification graph: an undirected edge list ("u v" per
/// line), whitespace-separated feature rows, one label per line, and one
/// split marker per line (0 train / 1 val / 2 test). Node ids must be dense
/// 0..n-1; features are row-normalized (all-zero rows stay zero).
inline GraphDataset load_edge_list_graph(const std::string& edges_path,
                                         const std::string& features_path,
                                         const std::string& labels_path,
                                         const std::string& splits_path) {
  GraphDataset g;
  std::ifstream ff(features_path);
  check(ff.good(), "cannot open features file: ", features_path);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(ff, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::vector<double> row;
    double v;
    while (is >> v) row.push_back(v);
    if (!rows.empty()) check(row.size() == rows[0].size(), "ragged feature rows");
    rows.push_back(std::move(row));
  }
  check(!rows.empty(), "empty features file: ", features_path);
  g.n = (int)rows.size();
  g.feature_dim = (int)rows[0].size();
  g.features.resize((long)g.n * g.feature_dim);
  for (int i = 0; i < g.n; ++i) {
    double s = 0;
    for (double v : rows[i]) s += std::abs(v);
    for (int j = 0; j < g.feature_dim; ++j)
      g.features[(long)i * g.feature_dim + j] = s > 0 ? rows[i][j] / s : 0.0;
  }

  std::ifstream fe(edges_path);
  check(fe.good(), "cannot open edges file: ", edges_path);
  std::vector<std::pair<int, int>> edges;
  int a, b;
  while (fe >> a >> b) {
    check(a >= 0 && a < g.n && b >= 0 && b < g.n, "dangling edge ", a, "-", b,
          " for ", g.n, " nodes");
    edges.push_back({a, b});
  }
  g.ctx = make_graph_context(g.n, edges);

  std::ifstream fl(labels_path);
  check(fl.good(), "cannot open labels file: ", labels_path);
  int lab;
  while (fl >> lab) {
    g.labels.push_back(lab);
    g.classes = std::max(g.classes, lab + 1);
  }
  check((int)g.labels.size() == g.n, "label count ", g.labels.size(), " != node count ", g.n);

  std::ifstream fs(splits_path);
  check(fs.good(), "cannot open splits file: ", splits_path);
  int mark, idx = 0;
  while (fs >> mark) {
    check(mark >= 0 && mark <= 2, "split marker must be 0/1/2");
    (mark == 0 ? g.train_idx : mark == 1 ? g.val_idx : g.test_idx).push_back(idx++);
  }
  check(idx == g.n, "split count ", idx, " != node count ", g.n);
  return g;
}

/// Two-block community graph with indicator-plus-noise features; a desk-scale
/// stand-in for the citation benchmarks.
inline void write_toy_graph(const std::string& dir, int n, int classes, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto rng = make_stream(seed, "synth_graph");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % classes;
  std::ofstream fe(dir + "/edges.txt");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double p = labels[i] == labels[j] ? 0.35 : 0.04;
      if (u(rng) < p) fe << i << " " << j << "\n";
    }
  int fdim = classes + 4;
  std::ofstream ff(dir + "/features.txt");
  std::normal_distribution<double> nd(0.0, 0.35);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < fdim; ++j) {
      double v = (j == labels[i] ? 1.0 : 0.0) + nd(rng);
      ff << v << (j + 1 == fdim ? '\n' : ' ');
    }
  }
  std::ofstream fl(dir + "/labels.txt");
  for (int i = 0; i < n; ++i) fl << labels[i] << "\n";
  std::ofstream fsp(dir + "/splits.txt");
  for (int i = 0; i < n; ++i) fsp << (i % 5 == 3 ? 1 : i % 5 == 4 ? 2 : 0) << "\n";
}

// ---------------------------------------------------------------------------
// synthetic text

struct TextDataset {
  std::vector<int> train_tokens, test_tokens;  // [n x t]
  std::vector<int> train_labels, test_labels;
  int vocab = 64, seq = 16, classes = 4;

  Batch sample(std::mt19937_64& rng, int batch) const {
    int n = (int)train_labels.size();
    int m = std::min(batch, n);
    std::uniform_int_distribution<int> pick(0, n - 1);
    Batch b;
    b.batch = m;
    b.seq = seq;
    for (int i = 0; i < m; ++i) {
      int j = pick(rng);
      b.tokens.insert(b.tokens.end(), train_tokens.begin() + (long)j * seq,
                      train_tokens.begin() + (long)(j + 1) * seq);
      b.labels.push_back(train_labels[j]);
    }
    return b;
  }
  Batch full_test() const {
    Batch b;
    b.batch = (int)test_labels.size();
    b.seq = seq;
    b.tokens = test_tokens;
    b.labels = test_labels;
    return b;
  }
};

/// Token sequences with a leading marker token; class identity is carried by
/// a band of class tokens scattered through the sequence.
inline TextDataset make_synthetic_text(int n_train, int n_test, int vocab, int seq, int classes,
                                       std::uint64_t seed) {
  check(vocab > classes + 2 && seq >= 4, "synthetic text: vocab/seq too small");
  TextDataset ds;
  ds.vocab = vocab;
  ds.seq = seq;
  ds.classes = classes;
  auto rng = make_stream(seed, "synth_text");
  std::uniform_int_distribution<int> tok(classes + 1, vocab - 1);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto emit = [&](int n, std::vector<int>& toks, std::vector<int>& labels) {
    for (int i = 0; i < n; ++i) {
      int c = cls(rng);
      labels.push_back(c);
      toks.push_back(0);  // marker token at the first position
      for (int t = 1; t < seq; ++t) toks.push_back(u(rng) < 0.35 ? 1 + c : tok(rng));
    }
  };
  emit(n_train, ds.train_tokens, ds.train_labels);
  emit(n_test, ds.test_tokens, ds.test_labels);
  return ds;
}

}  // namespace uhn
