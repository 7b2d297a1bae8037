#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "uhn/harness.hpp"

using namespace uhn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& stem) {
    path = fs::temp_directory_path() / (stem + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream f(p);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("idx round trip and validation") {
  TempDir dir("uhn_idx");
  write_synthetic_image_idx(dir.str(), 120, 40, 7);

  // header spot check: first four bytes are 00 00 08 03
  std::ifstream f(dir.str() + "/train-images-idx3-ubyte", std::ios::binary);
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  CHECK(b[0] == 0);
  CHECK(b[1] == 0);
  CHECK(b[2] == 8);
  CHECK(b[3] == 3);

  auto ds = load_mnist_idx(dir.str() + "/train-images-idx3-ubyte",
                           dir.str() + "/train-labels-idx1-ubyte");
  CHECK(ds.count == 120);
  CHECK(ds.rows == 28);
  CHECK(ds.cols == 28);
  for (int l : ds.labels) {
    CHECK(l >= 0);
    CHECK(l <= 9);
  }
  // standardized pixels: mean ~0, std ~1
  double s1 = 0, s2 = 0;
  for (double v : ds.pixels) {
    s1 += v;
    s2 += v * v;
  }
  s1 /= ds.pixels.size();
  CHECK(std::abs(s1) < 1e-9);
  CHECK(std::abs(s2 / ds.pixels.size() - 1.0) < 1e-9);

  // limit preserves order
  auto lim = load_mnist_idx(dir.str() + "/train-images-idx3-ubyte",
                            dir.str() + "/train-labels-idx1-ubyte", 17);
  CHECK(lim.count == 17);
  for (int i = 0; i < 17; ++i) CHECK(lim.labels[i] == ds.labels[i]);

  // a label file used as an image file is rejected by the magic
  CHECK_THROWS_WITH_AS((void)load_mnist_idx(dir.str() + "/train-labels-idx1-ubyte",
                                            dir.str() + "/train-labels-idx1-ubyte"),
                       doctest::Contains("magic"), Error);

  // truncated payload reports the byte offset
  {
    std::ofstream t(dir.str() + "/broken", std::ios::binary);
    detail::write_be32(t, kIdxImageMagic);
    detail::write_be32(t, 2);
    detail::write_be32(t, 28);
    detail::write_be32(t, 28);
    std::vector<char> few(100, 1);
    t.write(few.data(), few.size());
    write_idx_labels(dir.str() + "/broken-labels", {3, 4});
  }
  CHECK_THROWS_WITH_AS(
      (void)load_mnist_idx(dir.str() + "/broken", dir.str() + "/broken-labels"),
      doctest::Contains("byte"), Error);
}

TEST_CASE("formula datasets") {
  auto ds = make_formula_dataset(FormulaId::legendre_p2, 1000, 1000, 3);
  CHECK(ds.train.dense_shape == std::vector<int>{1000, 2});
  for (double v : ds.train.dense) {
    CHECK(v >= -1.0);
    CHECK(v < 1.0);
  }
  // P2 at the normalized origin is -0.5
  CHECK(formula_value(FormulaId::legendre_p2, 0.0, 0.0, 0.5) == doctest::Approx(-0.5));
  // constant formula: all targets 1
  auto dc = make_formula_dataset(FormulaId::constant1, 100, 10, 1);
  for (double t : dc.train.targets) CHECK(t == 1.0);
  // the rational surrogate keeps its raw x2 away from 0
  auto dr = make_formula_dataset(FormulaId::rational_decay, 500, 10, 9);
  for (int i = 0; i < 500; ++i) {
    double z2 = dr.train.dense[2 * i + 1];
    CHECK(0.5 * (z2 + 1.0) >= 0.1 - 1e-12);
  }
  for (double t : dr.train.targets) CHECK(std::isfinite(t));
  CHECK_THROWS_AS((void)formula_from_name("nope"), Error);
}

TEST_CASE("edge-list graph io") {
  TempDir dir("uhn_graph");
  write_toy_graph(dir.str(), 30, 3, 11);
  auto g = load_edge_list_graph(dir.str() + "/edges.txt", dir.str() + "/features.txt",
                                dir.str() + "/labels.txt", dir.str() + "/splits.txt");
  CHECK(g.n == 30);
  CHECK(g.classes == 3);
  CHECK(g.train_idx.size() + g.val_idx.size() + g.test_idx.size() == 30);
  // self-loops present: every node has degree >= 1
  for (double d : g.ctx.degree) CHECK(d >= 1.0);
  // row normalization: absolute row sums are 1 (or the row is all zero)
  for (int i = 0; i < g.n; ++i) {
    double s = 0;
    for (int j = 0; j < g.feature_dim; ++j) s += std::abs(g.features[i * g.feature_dim + j]);
    CHECK((std::abs(s - 1.0) < 1e-9 || s == 0.0));
  }

  // 3-node path graph: 3 self-loops + 4 directed edges
  {
    std::ofstream(dir.str() + "/e2.txt") << "0 1\n1 2\n";
    std::ofstream(dir.str() + "/f2.txt") << "1 0\n0 1\n1 1\n";
    std::ofstream(dir.str() + "/l2.txt") << "0\n1\n0\n";
    std::ofstream(dir.str() + "/s2.txt") << "0\n1\n2\n";
    auto p = load_edge_list_graph(dir.str() + "/e2.txt", dir.str() + "/f2.txt",
                                  dir.str() + "/l2.txt", dir.str() + "/s2.txt");
    CHECK(p.ctx.edges.size() == 7);  // 3 loops + 2 undirected edges both ways
  }

  // dangling edge is rejected
  std::ofstream(dir.str() + "/bad.txt") << "0 99\n";
  CHECK_THROWS_WITH_AS(
      (void)load_edge_list_graph(dir.str() + "/bad.txt", dir.str() + "/features.txt",
                                 dir.str() + "/labels.txt", dir.str() + "/splits.txt"),
      doctest::Contains("dangling"), Error);

  // graph write -> read round trips identically
  auto g2 = load_edge_list_graph(dir.str() + "/edges.txt", dir.str() + "/features.txt",
                                 dir.str() + "/labels.txt", dir.str() + "/splits.txt");
  CHECK(g2.features == g.features);
  CHECK(g2.labels == g.labels);
  CHECK(g2.ctx.edges == g.ctx.edges);
}

TEST_CASE("synthetic text carries class signal") {
  auto ds = make_synthetic_text(200, 50, 64, 16, 4, 5);
  CHECK(ds.train_labels.size() == 200);
  for (int t : ds.train_tokens) {
    CHECK(t >= 0);
    CHECK(t < 64);
  }
  // every sequence starts with the marker token
  for (int i = 0; i < 200; ++i) CHECK(ds.train_tokens[i * 16] == 0);
}

TEST_CASE("config json round trip") {
  ExperimentConfig c;
  c.kind = "recursive";
  c.uhn.f_v = 64;
  c.uhn.use_tse = true;
  c.recursion_depth = 2;
  c.seeds = {7, 8};
  c.precision = "f32";
  c.splits = {9, 3, 1, 2};
  auto j = experiment_to_json(c);
  auto back = experiment_from_json(j);
  CHECK(back.kind == c.kind);
  CHECK(back.uhn.f_v == 64);
  CHECK(back.uhn.use_tse);
  CHECK(back.recursion_depth == 2);
  CHECK(back.seeds == c.seeds);
  CHECK(back.precision == "f32");
  CHECK(back.splits.holdin == 2);
  CHECK(j.at("registry_hash").get<std::uint64_t>() == registry_hash());
}

TEST_CASE("target resolution") {
  CHECK(param_layout(resolve_target("mlp_mnist")).total == 118282);
  CHECK(param_layout(resolve_target("mlp:784,128,128,10")).total == 118282);
  CHECK(param_layout(resolve_target("kan:2,5,1|5|3")).total == 254);
  CHECK(param_layout(resolve_target("cnn:1,2,2,2|16,16,32,64|1|10")).total == 74762);
  CHECK(param_layout(resolve_target("gcn:1433,64,7")).total == 92231);
  CHECK(param_layout(resolve_target("gat:500,8,8,8,3")).total == 33779);
  CHECK(param_layout(resolve_target("transformer:5000,64,128,2,2,2,4")).total == 378372);
  CHECK_THROWS_AS((void)resolve_target("nonsense"), Error);
}

TEST_CASE("counts report includes the published totals") {
  ExperimentConfig c;
  auto s = report_counts(c);
  CHECK(s.find("612117") != std::string::npos);
  CHECK(s.find("158613") != std::string::npos);
  CHECK(s.find("663151") != std::string::npos);
  CHECK(s.find("118282") != std::string::npos);
  CHECK(s.find("74762") != std::string::npos);
}

TEST_CASE("evaluation-only single-model run emits a self-describing artifact") {
  TempDir dir("uhn_run");
  ExperimentConfig c;
  c.kind = "single_model";
  c.uhn.f_v = 8;
  c.uhn.f_u = 2;
  c.uhn.d = 8;
  c.uhn.n_blk = 0;
  c.uhn.chunk = 0;
  c.target = "kan:2,3,1|3|2";
  c.dataset = "formula:constant1";
  c.n_train = 64;
  c.n_test = 64;
  c.s_init = 0;
  c.s_train = 0;  // evaluation-only with a fresh generator
  c.seeds = {5};
  c.out_dir = dir.str() + "/run";
  run_experiment(c);
  CHECK(fs::exists(c.out_dir + "/config.json"));
  CHECK(fs::exists(c.out_dir + "/registry.txt"));
  CHECK(fs::exists(c.out_dir + "/norm_stats.json"));
  CHECK(fs::exists(c.out_dir + "/summary.csv"));
  CHECK(fs::exists(c.out_dir + "/seed5/checkpoint.bin"));
  auto sum = slurp(c.out_dir + "/summary.csv");
  CHECK(sum.find("seed,split,task,metric,value") == 0);
  CHECK(sum.find("5,test,constant1,rmse,") != std::string::npos);
}

TEST_CASE("multi-model run reports exactly seen and unseen rows") {
  TempDir dir("uhn_mm");
  ExperimentConfig c;
  c.kind = "multi_model";
  c.uhn.f_v = 8;
  c.uhn.f_u = 4;
  c.uhn.d = 8;
  c.uhn.n_blk = 0;
  c.uhn.use_tse = true;
  c.uhn.chunk = 0;
  c.dataset = "synth_image";
  c.data_dir = dir.str() + "/data";
  c.n_train = 64;
  c.n_test = 32;
  c.batch = 16;
  c.family = "cnn_mixed_width";
  c.family_size = 6;
  c.splits = {4, 2, 1, 2};
  c.s_init = 0;
  c.s_train = 2;
  c.eta_train = 1e-4;
  c.seeds = {3};
  c.precision = "f32";
  c.out_dir = dir.str() + "/run";
  run_experiment(c);
  auto sum = slurp(c.out_dir + "/summary.csv");
  int seen = 0, unseen = 0;
  std::istringstream is(sum);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find(",seen,") != std::string::npos) ++seen;
    if (line.find(",unseen,") != std::string::npos) ++unseen;
  }
  CHECK(seen == 3);    // 2 hold-in models + mean
  CHECK(unseen == 3);  // 2 test models + mean
}

TEST_CASE("re-running with the same seed reproduces metrics bitwise") {
  TempDir dir("uhn_det");
  ExperimentConfig c;
  c.kind = "single_model";
  c.uhn.f_v = 8;
  c.uhn.f_u = 2;
  c.uhn.d = 8;
  c.uhn.n_blk = 1;
  c.uhn.chunk = 0;
  c.target = "kan:2,3,1|3|2";
  c.dataset = "formula:legendre_p2";
  c.n_train = 128;
  c.n_test = 64;
  c.s_init = 3;
  c.s_train = 8;
  c.seeds = {11};
  c.out_dir = dir.str() + "/a";
  run_experiment(c);
  c.out_dir = dir.str() + "/b";
  run_experiment(c);
  auto strip_wall = [](const std::string& text) {
    std::istringstream is(text);
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line)) os << line.substr(0, line.rfind(',')) << "\n";
    return os.str();
  };
  CHECK(strip_wall(slurp(dir.str() + "/a/seed11/metrics.csv")) ==
        strip_wall(slurp(dir.str() + "/b/seed11/metrics.csv")));
  CHECK(slurp(dir.str() + "/a/summary.csv") == slurp(dir.str() + "/b/summary.csv"));
}
