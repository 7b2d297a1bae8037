#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "uhn/generator.hpp"
#include "uhn/initstats.hpp"
#include "uhn/reference_models.hpp"

using namespace uhn;
using D = double;

TEST_CASE("per-component target statistics") {
  LayerSpec lin;
  lin.type = LayerType::linear;
  lin.input_size = 784;
  lin.output_size = 128;
  auto t = target_statistics(lin, ParamKind::weight);
  CHECK(t.mu == 0.0);
  CHECK(t.sigma == doctest::Approx(0.020621).epsilon(1e-4));
  CHECK(target_statistics(lin, ParamKind::bias).sigma == doctest::Approx(t.sigma));

  LayerSpec emb;
  emb.type = LayerType::embedding;
  emb.output_size = 64;
  emb.vocab_size = 100;
  emb.max_seq_len = 16;
  CHECK(target_statistics(emb, ParamKind::emb_table).sigma == 1.0);
  CHECK(target_statistics(emb, ParamKind::pos_table).mu == 0.0);
  CHECK(target_statistics(emb, ParamKind::pos_table).sigma == 0.0);

  LayerSpec kan;
  kan.type = LayerType::kan;
  kan.input_size = 2;
  kan.output_size = 5;
  kan.grid_size = 5;
  kan.spline_order = 3;
  auto gl = target_statistics(kan, ParamKind::kan_grid_len);
  CHECK(gl.mu == doctest::Approx(std::log(2.0)));
  CHECK(gl.sigma == 0.0);
  CHECK(target_statistics(kan, ParamKind::kan_grid_min).mu == -1.0);
  CHECK(target_statistics(kan, ParamKind::kan_spline_w).sigma == doctest::Approx(0.1));

  LayerSpec gcn;
  gcn.type = LayerType::gcn;
  gcn.input_size = 16;
  gcn.output_size = 8;
  CHECK(target_statistics(gcn, ParamKind::weight).sigma ==
        doctest::Approx(std::sqrt(2.0 / 24.0)));
  CHECK(target_statistics(gcn, ParamKind::bias).sigma == 0.0);

  // zero mode forces (0, 0) everywhere
  LayerSpec z = lin;
  z.init = InitMode::zero;
  CHECK(target_statistics(z, ParamKind::weight).sigma == 0.0);

  // unknown component for this layer type
  CHECK_THROWS_AS((void)target_statistics(lin, ParamKind::kan_knots), Error);
}

TEST_CASE("gat and mha targets") {
  LayerSpec gat;
  gat.type = LayerType::gat;
  gat.input_size = 1433;
  gat.num_heads = 8;
  gat.head_combine = HeadCombine::concat;
  gat.output_size = 64;
  CHECK(target_statistics(gat, ParamKind::weight).sigma ==
        doctest::Approx(std::sqrt(2.0 / (1433.0 + 64.0))));
  CHECK(target_statistics(gat, ParamKind::attn_src).sigma ==
        doctest::Approx(std::sqrt(2.0 / (8.0 + 8.0))));

  LayerSpec mha;
  mha.type = LayerType::mha;
  mha.input_size = 64;
  mha.output_size = 64;
  mha.num_heads = 2;
  CHECK(target_statistics(mha, ParamKind::wq).sigma == doctest::Approx(1.0 / 8.0));
  CHECK(target_statistics(mha, ParamKind::wo).sigma ==
        doctest::Approx(1.0 / std::sqrt(3.0 * 64.0)));
  CHECK(target_statistics(mha, ParamKind::bq).sigma == 0.0);
}

namespace {
ModelSpec one_component_spec() {
  ModelSpec spec;
  spec.family = ModelFamily::mlp_cnn;
  LayerSpec l;
  l.type = LayerType::linear;
  l.input_size = 1;
  l.output_size = 2;
  l.bias = false;
  spec.layers.push_back(l);
  return spec;
}
}  // namespace

TEST_CASE("init loss values") {
  auto spec = one_component_spec();
  auto lay = param_layout(spec);
  double sstar = 1.0 / std::sqrt(3.0);

  // exactly on target: loss 0
  Tape<D> tp;
  auto w0 = tp.constant({2}, {sstar, -sstar});  // mu 0, population sigma = sstar
  CHECK(init_loss(tp, w0, lay, spec).scalar_value() == doctest::Approx(0.0).epsilon(1e-15));

  // single component with mu = 1, mu* = 0, sigma = sigma*: loss = 0.5
  auto w1 = tp.constant({2}, {1.0 + sstar, 1.0 - sstar});
  CHECK(init_loss(tp, w1, lay, spec).scalar_value() == doctest::Approx(0.5));

  // two components, hand-computed
  ModelSpec two;
  two.family = ModelFamily::mlp_cnn;
  LayerSpec l;
  l.type = LayerType::linear;
  l.input_size = 1;
  l.output_size = 2;
  l.bias = true;
  two.layers.push_back(l);
  auto lay2 = param_layout(two);
  auto w2 = tp.constant({4}, {0.5, 0.5, 0.0, 0.0});  // W mu .5 sigma 0; b on-target except sigma
  double expected = (1.0 / 4.0) * ((0.5 * 0.5 + sstar * sstar) + (0.0 + sstar * sstar));
  CHECK(init_loss(tp, w2, lay2, two).scalar_value() == doctest::Approx(expected));

  CHECK_THROWS_AS((void)init_loss(tp, tp.constant({3}, {1, 2, 3}), lay, spec), Error);
}

TEST_CASE("init loss is invariant to permutations within a component") {
  auto spec = make_mlp(3, {4}, 2);
  auto lay = param_layout(spec);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<D> w(lay.total);
  for (auto& v : w) v = u(rng);
  Tape<D> tp;
  double base = init_loss(tp, tp.constant({(int)lay.total}, w), lay, spec).scalar_value();
  // shuffle inside each component independently
  auto wp = w;
  for (const auto& e : lay.entries)
    std::shuffle(wp.begin() + e.offset, wp.begin() + e.offset + e.count, rng);
  double perm = init_loss(tp, tp.constant({(int)lay.total}, wp), lay, spec).scalar_value();
  CHECK(base == doctest::Approx(perm).epsilon(1e-12));
}

TEST_CASE("init loss gradient through generation passes finite differences") {
  UHNConfig c;
  c.f_v = 4;
  c.f_u = 2;
  c.d = 4;
  c.n_blk = 1;
  c.use_tse = false;
  c.chunk = 0;
  auto spec = make_mlp(3, {2}, 2);
  TaskDescriptor task{TaskType::image_classification, DatasetType::synth_image};
  auto stats = estimate_norm_stats({{spec, task}});
  auto p = make_generator<D>(c, stats, 12);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& t : p.leaves())
    for (auto& v : t.value()) v += u(rng);
  auto enc = encode_target(p, spec, task);
  auto lay = param_layout(spec);
  auto build = [&](Tape<D>& tp) {
    auto w = generate_weights(tp, p, enc);
    return init_loss(tp, w, lay, spec);
  };
  auto rep = grad_check_params<D>(build, p.leaves(), 1e-6);
  REQUIRE(rep.finite);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("active init level schedule") {
  CHECK(active_init_level(0, 100, 3) == 0);
  CHECK(active_init_level(99, 100, 3) == 0);
  CHECK(active_init_level(100, 100, 3) == 1);
  CHECK(active_init_level(1000000, 100, 3) == 3);  // clamped at K
  CHECK(active_init_level(50, 100, 0) == 0);
  CHECK_THROWS_AS((void)active_init_level(5, 0, 2), Error);
  CHECK_THROWS_AS((void)active_init_level(-1, 10, 2), Error);
}
