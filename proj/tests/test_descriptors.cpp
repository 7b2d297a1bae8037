#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "uhn/descriptors.hpp"
#include "uhn/reference_models.hpp"
#include "uhn/rng.hpp"

using namespace uhn;

TEST_CASE("normalize maps the midpoint to 0 and the extremes to +-sqrt(3)") {
  NormalizationStats st;
  st.mins = {-1.0};
  st.maxs = {9.0};
  CHECK(normalize({4.0}, st)[0] == doctest::Approx(0.0));
  CHECK(normalize({-1.0}, st)[0] == doctest::Approx(-std::sqrt(3.0)));
  CHECK(normalize({9.0}, st)[0] == doctest::Approx(std::sqrt(3.0)));
  CHECK_THROWS_AS((void)normalize({1.0, 2.0}, st), Error);

  NormalizationStats deg;
  deg.mins = {5.0};
  deg.maxs = {5.0};
  CHECK(normalize({5.0}, deg)[0] == 0.0);
}

TEST_CASE("normalize standardizes a uniform distribution") {
  NormalizationStats st;
  st.mins = {-3.0};
  st.maxs = {11.0};
  auto rng = make_stream(4, "mc");
  std::uniform_real_distribution<double> u(-3.0, 11.0);
  double s1 = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double z = normalize({u(rng)}, st)[0];
    s1 += z;
    s2 += z * z;
  }
  double mean = s1 / n;
  double sd = std::sqrt(s2 / n - mean * mean);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sd - 1.0) < 0.02);
}

TEST_CASE("fourier map basics") {
  FourierMatrix zero;
  zero.m = 3;
  zero.n = 2;
  zero.b.assign(6, 0.0);
  auto f = fourier_map({0.7, -0.2}, zero);
  CHECK(f == std::vector<double>{1, 1, 1, 0, 0, 0});

  auto rng = make_stream(1, "fourier");
  auto B = FourierMatrix::sample(4, 2, 100.0, rng);
  std::vector<double> x{0.5, -0.3};
  auto g = fourier_map(x, B);
  REQUIRE(g.size() == 8);
  for (int r = 0; r < 4; ++r) {
    double dot = B.b[r * 2] * x[0] + B.b[r * 2 + 1] * x[1];
    CHECK(g[r] == doctest::Approx(std::cos(dot)));
    CHECK(g[4 + r] == doctest::Approx(std::sin(dot)));
  }
  CHECK_THROWS_AS((void)fourier_map({1.0}, B), Error);
}

TEST_CASE("fourier features have squared norm m") {
  auto rng = make_stream(77, "fourier");
  auto B = FourierMatrix::sample(16, 10, 100.0, rng);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> x(10);
    for (auto& v : x) v = u(rng);
    auto f = fourier_map(x, B);
    double n2 = 0;
    for (double v : f) n2 += v * v;
    CHECK(std::abs(n2 - 16.0) < 1e-10);
  }
}

TEST_CASE("positional map frequencies") {
  // j = 0 has unit frequency regardless of scale
  auto f = positional_map({0.25}, 1, 1234.5);
  CHECK(f[0] == doctest::Approx(std::cos(0.25)));
  CHECK(f[1] == doctest::Approx(std::sin(0.25)));

  double w31 = std::pow(100.0, 31.0 / 32.0);
  CHECK(w31 == doctest::Approx(86.596).epsilon(1e-3));
  auto g = positional_map({1.0}, 32, 100.0);
  CHECK(g[2 * 31] == doctest::Approx(std::cos(w31)));

  auto z = positional_map({0.0, 0.0, 0.0}, 4, 100.0);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 3; ++i) {
      CHECK(z[(2 * j) * 3 + i] == 1.0);
      CHECK(z[(2 * j + 1) * 3 + i] == 0.0);
    }
  CHECK_THROWS_AS((void)positional_map({1.0}, 0, 100.0), Error);
}

TEST_CASE("raw map is the identity") {
  std::vector<double> x{1.0, -2.0, 0.5};
  CHECK(raw_map(x) == x);
  NormalizationStats st;
  st.mins = {0, 0, 0};
  st.maxs = {2, 2, 2};
  CHECK(raw_map(normalize(x, st)) == normalize(x, st));
}

TEST_CASE("single bias-free linear layer enumerates (out, in) pairs") {
  ModelSpec spec;
  spec.family = ModelFamily::mlp_cnn;
  LayerSpec l;
  l.type = LayerType::linear;
  l.input_size = 3;
  l.output_size = 4;
  l.bias = false;
  spec.layers.push_back(l);
  auto rows = build_param_descriptors(spec);
  REQUIRE(rows.size() == 12);
  for (int q = 0; q < 4; ++q)
    for (int p = 0; p < 3; ++p) {
      const auto& d = rows[q * 3 + p];
      CHECK(d[0] == 0);
      CHECK(d[1] == (int)LayerType::linear);
      CHECK(d[2] == (int)ParamKind::weight);
      CHECK(d[3] == q);
      CHECK(d[4] == p);
      for (int f = 5; f < kIndexFields; ++f) CHECK(d[f] == -1.0);
    }
}

TEST_CASE("mlp-mnist yields 118282 descriptors") {
  auto rows = build_param_descriptors(ref::mlp_mnist());
  CHECK(rows.size() == 118282);
}

TEST_CASE("3x3 conv 2->2 with bias yields 38 descriptors") {
  ModelSpec spec;
  spec.family = ModelFamily::mlp_cnn;
  spec.cnn_stage_num = 1;
  LayerSpec l;
  l.type = LayerType::conv;
  l.input_size = 2;
  l.output_size = 2;
  l.kernel_size = 3;
  l.bias = true;
  spec.layers.push_back(l);
  auto rows = build_param_descriptors(spec);
  REQUIRE(rows.size() == 38);
  for (size_t i = 0; i < 36; ++i) {
    CHECK(rows[i][5] >= 0);
    CHECK(rows[i][5] <= 2);
    CHECK(rows[i][6] >= 0);
    CHECK(rows[i][6] <= 2);
  }
  for (size_t i = 36; i < 38; ++i) {
    CHECK(rows[i][2] == (int)ParamKind::bias);
    CHECK(rows[i][5] == -1.0);
    CHECK(rows[i][6] == -1.0);
  }
}

namespace {
// Appendix C.5 active-field lists, keyed by parameter kind.
const std::map<ParamKind, std::set<int>> kActiveFields = {
    {ParamKind::weight, {0, 1, 2, 3, 4}},          // conv adds 5, 6 (handled below)
    {ParamKind::bias, {0, 1, 2, 3}},
    {ParamKind::attn_src, {0, 1, 2, 3, 4}},
    {ParamKind::attn_dst, {0, 1, 2, 3, 4}},
    {ParamKind::emb_table, {0, 1, 2, 3, 7}},
    {ParamKind::pos_table, {0, 1, 2, 3, 8}},
    {ParamKind::wq, {0, 1, 2, 3, 4}},
    {ParamKind::wk, {0, 1, 2, 3, 4}},
    {ParamKind::wv, {0, 1, 2, 3, 4}},
    {ParamKind::bq, {0, 1, 2, 3}},
    {ParamKind::bk, {0, 1, 2, 3}},
    {ParamKind::bv, {0, 1, 2, 3}},
    {ParamKind::wo, {0, 1, 2, 3, 4}},
    {ParamKind::bo, {0, 1, 2, 3}},
    {ParamKind::kan_base_w, {0, 1, 2, 3, 4}},
    {ParamKind::kan_base_b, {0, 1, 2, 3}},
    {ParamKind::kan_spline_w, {0, 1, 2, 3, 4, 9}},
    {ParamKind::kan_spline_s, {0, 1, 2, 3, 4}},
    {ParamKind::kan_grid_min, {0, 1, 2, 4}},
    {ParamKind::kan_grid_len, {0, 1, 2, 4}},
    {ParamKind::kan_knots, {0, 1, 2, 4, 9}},
};
}  // namespace

TEST_CASE("field discipline: active fields match the per-kind lists exactly") {
  for (const auto& spec : {ref::cnn8_mnist(), ref::gat_pubmed(), ref::transformer2l_agnews(),
                           ref::kan_g10(), ref::gcn_cora(), make_recursive_uhn(8, 4)}) {
    auto lay = param_layout(spec);
    auto rows = build_param_descriptors(spec);
    size_t r = 0;
    for (const auto& e : lay.entries) {
      auto expected = kActiveFields.at(e.kind);
      if (e.kind == ParamKind::weight && spec.layers[e.layer_idx].type == LayerType::conv) {
        expected.insert(5);
        expected.insert(6);
      }
      for (long i = 0; i < e.count; ++i, ++r) {
        std::set<int> active;
        for (int f = 0; f < kIndexFields; ++f)
          if (rows[r][f] != -1.0) active.insert(f);
        REQUIRE(active == expected);
      }
    }
  }
}

TEST_CASE("count law holds across family samples") {
  auto rng = make_stream(31, "arch");
  CnnFamilyParams desk;
  desk.width0_lo = 8;
  desk.width0_hi = 16;
  desk.width2_lo = 16;
  desk.width2_hi = 24;
  desk.width3_lo = 24;
  desk.width3_hi = 32;
  desk.fixed_depths = {1, 1, 1, 1};
  desk.in_channels = 1;
  for (int i = 0; i < 5; ++i) {
    auto spec = sample_cnn(FamilyKind::cnn_mixed_width, desk, rng);
    CHECK((long)build_param_descriptors(spec).size() == param_layout(spec).total);
  }
  TransformerFamilyParams tp;
  tp.vocab = 64;
  tp.t_max = 16;
  tp.dim_lo = 8;
  tp.dim_hi = 32;
  tp.heads_lo = 1;
  tp.heads_hi = 4;
  for (int i = 0; i < 5; ++i) {
    auto spec = sample_transformer(tp, rng);
    CHECK((long)build_param_descriptors(spec).size() == param_layout(spec).total);
  }
}

TEST_CASE("descriptor construction is deterministic") {
  auto a = build_param_descriptors(ref::kan_g10());
  auto b = build_param_descriptors(ref::kan_g10());
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("layer descriptors are 29-dimensional with shared prefixes") {
  TaskDescriptor task{TaskType::image_classification, DatasetType::mnist};
  auto us = build_layer_descriptors(ref::mlp_mnist(), task);
  CHECK(us.size() == 3);
  for (const auto& u : us) CHECK(u.size() == kStructFields);

  auto deeper = make_mlp(784, {128, 128, 128}, 10);
  auto us2 = build_layer_descriptors(deeper, task);
  CHECK(us[0][1] == 3);   // sg.num_layers
  CHECK(us2[0][1] == 4);
  CHECK(us[0][0] == us2[0][0]);  // model_type agrees
  CHECK(us[0][6] == us2[0][6]);  // task fields agree
  CHECK(us[0][7] == us2[0][7]);

  // GCN layers: group_num, kernel_size, num_heads inactive
  auto gus = build_layer_descriptors(ref::gcn_cora(),
                                     {TaskType::graph_classification, DatasetType::cora});
  for (const auto& u : gus) {
    CHECK(u[8 + 11] == 0.0);  // sl.group_num
    CHECK(u[8 + 12] == 0.0);  // sl.kernel_size
    CHECK(u[8 + 14] == 0.0);  // sl.num_heads
  }
}

TEST_CASE("analytic index bounds match materialized table bounds") {
  for (const auto& spec : {ref::cnn8_mnist(), ref::transformer1l_imdb(), ref::kan_g5(),
                           ref::gat_cora()}) {
    NormalizationStats analytic;
    expand_index_bounds(spec, analytic);
    NormalizationStats mat;
    for (const auto& d : build_param_descriptors(spec)) mat.expand(d.data(), kIndexFields);
    REQUIRE(analytic.mins == mat.mins);
    REQUIRE(analytic.maxs == mat.maxs);
  }
}

TEST_CASE("norm stats file round trip") {
  auto st = estimate_norm_stats(
      {{ref::mlp_mnist(), {TaskType::image_classification, DatasetType::mnist}},
       {ref::kan_g5(), {TaskType::formula_regression, DatasetType::formula_constant}}});
  write_norm_stats(st, "norm_stats_test.json");
  auto back = load_norm_stats("norm_stats_test.json");
  CHECK(back.index.mins == st.index.mins);
  CHECK(back.index.maxs == st.index.maxs);
  CHECK(back.ustruct.mins == st.ustruct.mins);
  CHECK(back.ustruct.maxs == st.ustruct.maxs);
  std::remove("norm_stats_test.json");
}

TEST_CASE("encode_rows matches the scalar maps") {
  auto rng = make_stream(3, "fourier");
  auto B = FourierMatrix::sample(6, kIndexFields, 100.0, rng);
  auto spec = ref::kan_g5();
  auto rows = build_param_descriptors(spec);
  NormStats st = estimate_norm_stats({{spec, {TaskType::formula_regression, DatasetType::formula_constant}}});
  auto feats = encode_rows<double>(rows, st.index, IndexEncoding::gff, B, 0, 0.0);
  REQUIRE(feats.size() == rows.size() * 12);
  for (size_t r = 0; r < rows.size(); r += 37) {
    std::vector<double> x(rows[r].begin(), rows[r].end());
    auto ref = fourier_map(normalize(x, st.index), B);
    for (int j = 0; j < 12; ++j) CHECK(feats[r * 12 + j] == doctest::Approx(ref[j]).epsilon(1e-12));
  }
}
