#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "uhn/tensor.hpp"

using namespace uhn;
using D = double;

namespace {

std::vector<D> randu(std::mt19937_64& rng, long n, D lo = -1.0, D hi = 1.0) {
  std::uniform_real_distribution<D> u(lo, hi);
  std::vector<D> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Scalarizes an op output against a fixed random probe so every output
// coordinate contributes a distinct gradient path.
template <class F>
double fd_check_op(F&& op, const std::vector<std::vector<int>>& shapes, std::mt19937_64& rng,
                   double h = 1e-6) {
  std::vector<std::vector<D>> points;
  for (auto& s : shapes) points.push_back(randu(rng, shape_numel(s)));
  std::vector<D> probe;
  bool probe_init = false;
  auto f = [&](Tape<D>& tp, std::vector<Tensor<D>>& xs) {
    Tensor<D> out = op(tp, xs);
    if (!probe_init) {
      probe = randu(rng, out.numel(), 0.2, 1.0);
      probe_init = true;
    }
    auto r = tp.constant(out.shape(), probe);
    return sum_all(tp, mul(tp, out, r));
  };
  auto rep = grad_check<D>(f, points, shapes, h);
  REQUIRE(rep.finite);
  return rep.max_rel_err;
}

}  // namespace

TEST_CASE("product rule at (3,4)") {
  Tape<D> tp;
  auto x = tp.leaf({}, {3.0});
  auto y = tp.leaf({}, {4.0});
  auto f = mul(tp, x, y);
  auto g = tp.backward(f);
  CHECK(g.at(x.id())[0] == doctest::Approx(4.0));
  CHECK(g.at(y.id())[0] == doctest::Approx(3.0));
}

TEST_CASE("constant function has all-zero gradients") {
  Tape<D> tp;
  auto x = tp.leaf({3}, {1.0, 2.0, 3.0});
  auto c = tp.constant({}, {7.0});
  auto f = add(tp, mul_scalar(tp, sum_all(tp, x), 0.0), c);  // f(x) = 7 for all x
  CHECK(f.scalar_value() == 7.0);
  auto g = tp.backward(f);
  REQUIRE(g.count(x.id()) == 1);
  for (D v : g.at(x.id())) CHECK(v == 0.0);
}

TEST_CASE("backward contract") {
  Tape<D> tp;
  auto x = tp.leaf({2}, {1.0, 2.0});
  auto y = mul(tp, x, x);
  CHECK_THROWS_AS((void)tp.backward(y), Error);  // non-scalar

  Tape<D> tp2;
  auto c = tp2.constant({}, {5.0});
  auto z = mul_scalar(tp2, c, 2.0);
  CHECK(tp2.backward(z).empty());  // detached output
}

TEST_CASE("shared subexpressions accumulate: d(x+x)/dx = 2") {
  Tape<D> tp;
  auto x = tp.leaf({}, {1.5});
  auto s = add(tp, x, x);
  auto g = tp.backward(s);
  CHECK(g.at(x.id())[0] == doctest::Approx(2.0));
}

TEST_CASE("cross-entropy of softmax(Wx) matches finite differences") {
  std::mt19937_64 rng(11);
  std::vector<int> wshape{3, 4}, xshape{4};
  auto f = [&](Tape<D>& tp, std::vector<Tensor<D>>& xs) {
    auto W = xs[0];
    auto x = reshape(tp, xs[1], {4, 1});
    auto logits = reshape(tp, matmul(tp, W, x), {1, 3});
    auto lp = log_softmax_last(tp, logits);
    return nll_loss(tp, lp, {2});
  };
  auto rep = grad_check<D>(f, {randu(rng, 12), randu(rng, 4)}, {wshape, xshape}, 1e-6);
  REQUIRE(rep.finite);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check on ||x||^2 is exact to roundoff") {
  std::mt19937_64 rng(3);
  auto f = [](Tape<D>& tp, std::vector<Tensor<D>>& xs) {
    return sum_all(tp, mul(tp, xs[0], xs[0]));
  };
  auto rep = grad_check<D>(f, {randu(rng, 6)}, {{6}}, 1e-6);
  CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("grad_check rejects step 0") {
  auto f = [](Tape<D>& tp, std::vector<Tensor<D>>& xs) { return sum_all(tp, xs[0]); };
  CHECK_THROWS_AS((grad_check<D>(f, {{1.0}}, {{1}}, 0.0)), Error);
}

TEST_CASE("grad_check reports non-finite values") {
  auto f = [](Tape<D>& tp, std::vector<Tensor<D>>& xs) {
    return sum_all(tp, log_op(tp, xs[0]));
  };
  auto rep = grad_check<D>(f, {{1e-7}}, {{1}}, 1e-6);  // x - h < 0 -> nan
  CHECK_FALSE(rep.finite);
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(17);
  const double tol = 1e-6;

  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return matmul(t, xs[0], xs[1]); },
                    {{3, 4}, {4, 2}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return bmm(t, xs[0], xs[1]); },
                    {{2, 3, 4}, {2, 4, 2}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return add(t, xs[0], xs[1]); },
                    {{2, 3}, {2, 3}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return sub(t, xs[0], xs[1]); },
                    {{5}, {5}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return mul(t, xs[0], xs[1]); },
                    {{2, 2, 2}, {2, 2, 2}}, rng) < tol);
  CHECK(fd_check_op(
            [&](Tape<D>& t, auto& xs) {
              auto b = add_scalar(t, mul_scalar(t, xs[1], 0.25), 2.0);  // keep away from 0
              return div(t, xs[0], b);
            },
            {{3, 2}, {3, 2}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return exp_op(t, xs[0]); }, {{7}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) {
              return log_op(t, add_scalar(t, mul_scalar(t, xs[0], 0.25), 2.0));
            },
            {{7}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return cos_op(t, xs[0]); }, {{7}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return sin_op(t, xs[0]); }, {{7}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) {
              return rsqrt(t, add_scalar(t, mul_scalar(t, xs[0], 0.25), 2.0));
            },
            {{7}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return leaky_relu(t, xs[0], 0.1); },
                    {{4, 4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return elu(t, xs[0]); }, {{9}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return silu(t, xs[0]); }, {{9}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return softmax_last(t, xs[0]); },
                    {{3, 5}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return log_softmax_last(t, xs[0]); },
                    {{3, 5}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return layer_norm(t, xs[0]); },
                    {{4, 6}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return layer_norm(t, xs[0], xs[1], xs[2]); },
                    {{4, 6}, {6}, {6}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return group_norm(t, xs[0], 2); },
                    {{2, 4, 3, 3}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) { return conv2d(t, xs[0], xs[1], xs[2], 1, 1); },
            {{2, 2, 4, 4}, {3, 2, 3, 3}, {3}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) { return conv2d(t, xs[0], xs[1], Tensor<D>(), 2, 1); },
            {{1, 2, 4, 4}, {2, 2, 3, 3}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return avg_pool2d(t, xs[0], 2, 2); },
                    {{1, 2, 4, 4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return max_pool2d(t, xs[0], 2, 2); },
                    {{1, 2, 4, 4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return adaptive_avg_pool2d(t, xs[0], 1, 1); },
                    {{2, 3, 5, 5}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return gather_rows(t, xs[0], {1, 0, 1}); },
                    {{3, 4}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) { return scatter_add_rows(t, xs[0], {2, 0}, xs[1]); },
            {{3, 4}, {2, 4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return slice_flat(t, xs[0], 2, 5); },
                    {{10}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return reshape(t, xs[0], {6, 2}); },
                    {{3, 4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return permute(t, xs[0], {2, 0, 3, 1}); },
                    {{2, 3, 2, 2}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) {
              return concat_dim0(t, std::vector<Tensor<D>>{xs[0], xs[1]});
            },
            {{2, 3}, {4, 3}}, rng) < tol);
  CHECK(fd_check_op(
            [](Tape<D>& t, auto& xs) {
              return stack0(t, std::vector<Tensor<D>>{xs[0], xs[1]});
            },
            {{2, 3}, {2, 3}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return add_rowvec(t, xs[0], xs[1]); },
                    {{3, 4}, {4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return sub_rowvec(t, xs[0], xs[1]); },
                    {{2, 3, 4}, {4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return mul_rowvec(t, xs[0], xs[1]); },
                    {{3, 4}, {4}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return mean_all(t, xs[0]); }, {{3, 3}}, rng) <
        tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return std_all(t, xs[0]); }, {{8}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return reduce_mean_axis(t, xs[0], 1); },
                    {{2, 4, 3}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return reduce_sum_axis(t, xs[0], 0); },
                    {{4, 3}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return cumsum_last(t, xs[0]); },
                    {{2, 6}}, rng) < tol);
  CHECK(fd_check_op([](Tape<D>& t, auto& xs) { return nll_loss(t, log_softmax_last(t, xs[0]), {0, 2, 1}); },
                    {{3, 4}}, rng) < tol);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  std::mt19937_64 rng(5);
  Tape<D> tp;
  auto x = tp.constant({20, 7}, randu(rng, 140, -30.0, 30.0));
  auto y = softmax_last(tp, x);
  for (int r = 0; r < 20; ++r) {
    D s = 0;
    for (int j = 0; j < 7; ++j) {
      D v = y.value()[r * 7 + j];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("non-affine normalization introduces no trainable parameters") {
  std::mt19937_64 rng(6);
  Tape<D> tp;
  auto x = tp.leaf({4, 8}, randu(rng, 32));
  auto y1 = layer_norm(tp, x);
  auto y2 = group_norm(tp, reshape(tp, y1, {1, 4, 2, 4}), 2);
  auto loss = mean_all(tp, mul(tp, y2, y2));
  auto g = tp.backward(loss);
  // the only trainable tensor in the whole graph is x itself
  CHECK(g.size() == 1);
  CHECK(g.count(x.id()) == 1);
}

TEST_CASE("matmul row chunks are bitwise identical to single batch") {
  std::mt19937_64 rng(9);
  int m = 1000, k = 37, n = 19;
  auto av = randu(rng, (long)m * k);
  auto bv = randu(rng, (long)k * n);
  Tape<D> tp;
  auto a = tp.constant({m, k}, av);
  auto b = tp.constant({k, n}, bv);
  auto full = matmul(tp, a, b);
  for (int chunk : {1, 13, 256}) {
    for (int off = 0; off < m; off += chunk) {
      int rows = std::min(chunk, m - off);
      std::vector<D> part(av.begin() + (long)off * k, av.begin() + (long)(off + rows) * k);
      auto ap = tp.constant({rows, k}, part);
      auto yp = matmul(tp, ap, b);
      for (long i = 0; i < yp.numel(); ++i)
        REQUIRE(yp.value()[i] == full.value()[(long)off * n + i]);
    }
  }
}

TEST_CASE("backward is deterministic for a fixed tape") {
  std::mt19937_64 rng(21);
  auto xv = randu(rng, 24);
  auto run = [&] {
    Tape<D> tp;
    auto x = tp.leaf({4, 6}, xv);
    auto h = layer_norm(tp, relu(tp, x));
    auto s = mean_all(tp, mul(tp, h, h));
    return tp.backward(s).begin()->second;
  };
  auto g1 = run(), g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("cumsum and reductions basic values") {
  Tape<D> tp;
  auto x = tp.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto c = cumsum_last(tp, x);
  CHECK(c.value() == std::vector<D>{1, 3, 6, 4, 9, 15});
  CHECK(sum_all(tp, x).scalar_value() == doctest::Approx(21.0));
  CHECK(mean_all(tp, x).scalar_value() == doctest::Approx(3.5));
  auto m0 = reduce_mean_axis(tp, x, 0);
  CHECK(m0.value() == std::vector<D>{2.5, 3.5, 4.5});
  auto sd = std_all(tp, tp.constant({1}, {42.0}));
  CHECK(sd.scalar_value() == 0.0);  // single element: population std is 0
}
