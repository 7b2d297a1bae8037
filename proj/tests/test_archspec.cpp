#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "uhn/archspec.hpp"
#include "uhn/reference_models.hpp"
#include "uhn/rng.hpp"

using namespace uhn;

TEST_CASE("published layout totals") {
  CHECK(param_layout(ref::mlp_mnist()).total == 118282);
  CHECK(param_layout(ref::cnn8_mnist()).total == 74762);
  CHECK(param_layout(ref::cnn20_cifar()).total == 269034);
  CHECK(param_layout(ref::gcn_cora()).total == 92231);
  CHECK(param_layout(ref::gat_cora()).total == 92373);
  CHECK(param_layout(ref::gcn_citeseer()).total == 237446);
  CHECK(param_layout(ref::gat_citeseer()).total == 237586);
  CHECK(param_layout(ref::gcn_pubmed()).total == 32259);
  CHECK(param_layout(ref::gat_pubmed()).total == 33779);
  CHECK(param_layout(ref::transformer2l_agnews()).total == 378372);
  CHECK(param_layout(ref::transformer1l_imdb()).total == 377858);
  CHECK(param_layout(ref::kan_g5()).total == 254);
  CHECK(param_layout(ref::kan_g5_vec4()).total == 407);
  CHECK(param_layout(ref::kan_g10()).total == 364);
}

TEST_CASE("layout offsets are contiguous and non-overlapping") {
  for (const auto& spec : {ref::cnn8_mnist(), ref::transformer2l_agnews(), ref::kan_g10(),
                           ref::gat_pubmed(), make_recursive_uhn(1024, 32)}) {
    auto lay = param_layout(spec);
    long off = 0;
    for (const auto& e : lay.entries) {
      CHECK(e.offset == off);
      CHECK(e.count == shape_numel(e.shape));
      off += e.count;
    }
    CHECK(off == lay.total);
  }
}

TEST_CASE("ill-typed composition is rejected with the offending layer") {
  auto spec = ref::mlp_mnist();
  spec.layers[1].input_size = 64;  // breaks 784->128 -> 128
  CHECK_THROWS_WITH_AS((void)param_layout(spec), doctest::Contains("layer 1"), Error);

  auto conv = ref::cnn8_mnist();
  conv.layers[3].groups = 3;  // 16 channels, 3 groups
  CHECK_THROWS_AS((void)param_layout(conv), Error);
}

TEST_CASE("cnn family sampling respects the stated constraints") {
  auto rng = make_stream(123, "arch");
  CnnFamilyParams p;
  for (int i = 0; i < 200; ++i) {
    auto spec = sample_cnn(FamilyKind::cnn_mixed_depth, p, rng);
    int convs = 0;
    for (auto& l : spec.layers)
      if (l.type == LayerType::conv) ++convs;
    CHECK(convs >= 1 + 3 * 6);
    CHECK(convs <= 1 + 3 * 10);
    CHECK(spec.layers[0].output_size == 16);
  }
  int downsampled = 0;
  for (int i = 0; i < 10000; ++i) {
    auto spec = sample_cnn(FamilyKind::cnn_mixed_width, p, rng);
    std::set<int> widths;
    for (auto& l : spec.layers)
      if (l.type == LayerType::conv) {
        REQUIRE(l.output_size % 4 == 0);
        widths.insert(l.output_size);
        if (l.stage_pool == StagePool::stride2) ++downsampled;
      }
    // c0 == c1 is enforced, so at most 3 distinct stage widths
    CHECK(widths.size() <= 3);
    CHECK(spec.layers[1].shortcut);           // first layer of stage 1
    CHECK_FALSE(spec.layers[0].shortcut);     // stem
  }
  CHECK(downsampled == 2 * 10000);  // stages 2 and 3 exactly
}

TEST_CASE("transformer family sampling keeps d divisible by h") {
  auto rng = make_stream(7, "arch");
  TransformerFamilyParams p;
  for (int i = 0; i < 2000; ++i) {
    auto spec = sample_transformer(p, rng);
    const LayerSpec* mha = nullptr;
    for (auto& l : spec.layers)
      if (l.type == LayerType::mha) {
        mha = &l;
        break;
      }
    REQUIRE(mha != nullptr);
    CHECK(mha->output_size % mha->num_heads == 0);
    CHECK(spec.num_encoders >= 1);
    CHECK(spec.num_encoders <= 4);
  }
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  auto a = make_stream(99, "arch");
  auto b = make_stream(99, "arch");
  for (int i = 0; i < 20; ++i) {
    auto sa = sample_architecture(FamilyKind::cnn_mixed_depth_width, a);
    auto sb = sample_architecture(FamilyKind::cnn_mixed_depth_width, b);
    CHECK(spec_hash(sa) == spec_hash(sb));
  }
}

TEST_CASE("model-set splits satisfy the disjointness invariants") {
  auto rng = make_stream(5, "split");
  std::vector<ModelSpec> models(100, ref::kan_g5());
  auto set = split_model_set(models, {80, 20, 20, 20}, rng);
  CHECK(set.train.size() == 80);
  CHECK(set.test.size() == 20);
  CHECK(set.val.size() == 20);
  CHECK(set.holdin.size() == 20);
  std::set<int> train(set.train.begin(), set.train.end());
  for (int t : set.test) CHECK(train.count(t) == 0);
  std::set<int> val(set.val.begin(), set.val.end());
  for (int v : set.val) CHECK(train.count(v) == 1);
  for (int h : set.holdin) {
    CHECK(train.count(h) == 1);
    CHECK(val.count(h) == 0);
  }

  // trivially disjoint edge case
  std::vector<ModelSpec> two(2, ref::kan_g5());
  auto tiny = split_model_set(two, {1, 1, 0, 0}, rng);
  CHECK(tiny.train.size() == 1);
  CHECK(tiny.test.size() == 1);
  CHECK(tiny.train[0] != tiny.test[0]);

  CHECK_THROWS_AS((void)split_model_set(two, {2, 1, 0, 0}, rng), Error);
}

TEST_CASE("chunked baseline count and scaling bound") {
  // per-weight regime: d_emb = 0, c = 1
  CHECK(chunked_baseline_count(1000, 1, 0, 77, 5000) == 5000 + 77);
  // o = d_emb, c = sqrt(N): equality case of AM-GM
  long o = 16, c = 32, n = c * c;
  long nh = chunked_baseline_count(n, c, o, o, 100);
  double bound = 100 + 2.0 * std::sqrt((double)o * o * n);
  CHECK((double)nh == doctest::Approx(bound).epsilon(1e-12));
  CHECK_THROWS_AS((void)chunked_baseline_count(10, 3, 1, 1, 0), Error);

  auto rng = make_stream(2024, "chunk");
  std::uniform_int_distribution<long> du(1, 64);
  for (int i = 0; i < 1000; ++i) {
    long c = du(rng), chunks = du(rng), o = du(rng), d = du(rng), h0 = du(rng) * 10;
    CHECK(chunked_bound_holds(c * chunks, c, d, o, h0));
  }
}

TEST_CASE("spec json round trip preserves the hash") {
  for (const auto& spec : {ref::gat_pubmed(), ref::transformer1l_imdb(), ref::kan_g10(),
                           make_recursive_uhn(64, 8)}) {
    auto j = spec_to_json(spec);
    auto back = spec_from_json(j);
    CHECK(spec_hash(back) == spec_hash(spec));
    CHECK(param_layout(back).total == param_layout(spec).total);
  }
}
