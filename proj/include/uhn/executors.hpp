#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uhn/archspec.hpp"
#include "uhn/generator.hpp"
#include "uhn/rng.hpp"
#include "uhn/tensor.hpp"

// Forward evaluation of base models (and generated hypernetworks) from
// externally supplied packed weight vectors. Every layer follows its
// pre-activation formula with disabled options acting as identity/zero.

namespace uhn {

// ---------------------------------------------------------------------------
// evaluation context

struct EvalMode {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  mutable long op_counter = 0;  // advances per dropout application
};

/// Graph with self-loops added. Propagation and attention-mask matrices are
/// dense; desk-scale graphs stay small.
struct GraphContext {
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // directed u -> v, self-loops included
  std::vector<double> degree;              // of A + I

  std::vector<double> prop;  // D^-1/2 (A+I) D^-1/2, row-major [n x n]
  std::vector<double> mask;  // [v][u]: 0 on edges into v, -1e30 elsewhere
};

/// Builds the context from an undirected edge list (both directions are
/// inserted); self-loops are always added.
inline GraphContext make_graph_context(int n, const std::vector<std::pair<int, int>>& undirected) {
  check(n >= 1, "graph: empty graph");
  GraphContext g;
  g.n = n;
  std::vector<char> adj((long)n * n, 0);
  for (int v = 0; v < n; ++v) adj[(long)v * n + v] = 1;
  for (auto [a, b] : undirected) {
    check(a >= 0 && a < n && b >= 0 && b < n, "graph: dangling edge ", a, "-", b);
    adj[(long)a * n + b] = 1;
    adj[(long)b * n + a] = 1;
  }
  g.degree.assign(n, 0.0);
  for (int v = 0; v < n; ++v)
    for (int u = 0; u < n; ++u)
      if (adj[(long)u * n + v]) {
        g.degree[v] += 1.0;
        g.edges.push_back({u, v});
      }
  g.prop.assign((long)n * n, 0.0);
  g.mask.assign((long)n * n, -1e30);
  for (auto [u, v] : g.edges) {
    g.prop[(long)v * n + u] = 1.0 / std::sqrt(g.degree[u] * g.degree[v]);
    g.mask[(long)v * n + u] = 0.0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// packed weights

template <class T>
struct PackedWeights {
  const ParamLayout* layout = nullptr;
  Tensor<T> flat;

  Tensor<T> get(Tape<T>& tp, int layer, ParamKind kind) const {
    const auto& e = layout->find(layer, kind);
    return reshape(tp, slice_flat(tp, flat, e.offset, e.count), e.shape);
  }
  bool has(int layer, ParamKind kind) const {
    for (const auto& e : layout->entries)
      if (e.layer_idx == layer && e.kind == kind) return true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// shared pieces

template <class T>
Tensor<T> apply_activation(Tape<T>& tp, const Tensor<T>& x, Activation act, double param) {
  switch (act) {
    case Activation::none:
      return x;
    case Activation::relu:
      return relu(tp, x);
    case Activation::leaky_relu:
      return leaky_relu(tp, x, (T)param);
    case Activation::elu:
      return elu(tp, x);
    case Activation::silu:
      return silu(tp, x);
  }
  fail("unknown activation");
}

/// Inverted dropout: eval mode is the identity, train mode scales kept
/// activations by 1/keep. Masks are deterministic given the mode seed and the
/// per-run op counter.
template <class T>
Tensor<T> dropout(Tape<T>& tp, const Tensor<T>& x, double rate, const EvalMode& mode) {
  if (!mode.train || rate <= 0.0) return x;
  check(rate < 1.0, "dropout rate must be < 1");
  auto rng = make_stream(mode.dropout_seed, "dropout." + std::to_string(mode.op_counter++));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  T keep_scale = (T)(1.0 / (1.0 - rate));
  std::vector<T> m(x.numel());
  for (auto& v : m) v = u(rng) < rate ? T(0) : keep_scale;
  return mul(tp, x, tp.constant(x.shape(), std::move(m)));
}

template <class T>
Tensor<T> matmul_packed(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w_out_in) {
  return matmul(tp, x, transpose2d(tp, w_out_in));
}

// rows [n, d] times weight over the last axis of an [n, T, d] tensor
template <class T>
Tensor<T> seq_matmul_packed(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w_out_in) {
  int n = x.dim(0), t = x.dim(1), d = x.dim(2);
  auto flat = reshape(tp, x, {n * t, d});
  auto y = matmul_packed(tp, flat, w_out_in);
  return reshape(tp, y, {n, t, w_out_in.dim(0)});
}

// ---------------------------------------------------------------------------
// linear layer: Y = Skip(P(X)) + R(N(alpha(P(X))) W + b)

template <class T>
Tensor<T> linear_forward(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b, const LayerSpec& l, const EvalMode& mode) {
  Tensor<T> px = x;
  if (x.rank() == 4) {
    switch (l.pool_reshape) {
      case PoolReshape::adaptive_avg: {
        auto pooled = adaptive_avg_pool2d(tp, x, 1, 1);
        px = reshape(tp, pooled, {x.dim(0), x.dim(1)});
        break;
      }
      case PoolReshape::flatten:
        px = reshape(tp, x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
        break;
      default:
        fail("linear layer cannot produce a 4-D output; image inputs need pooling/reshape");
    }
  } else if (x.rank() == 3) {
    if (l.pool_reshape == PoolReshape::seq_mean)
      px = reduce_mean_axis(tp, x, 1);
    else if (l.pool_reshape == PoolReshape::first_token) {
      auto first = slice_flat(tp, permute(tp, x, {1, 0, 2}), 0, (long)x.dim(0) * x.dim(2));
      px = reshape(tp, first, {x.dim(0), x.dim(2)});
    }
  }
  bool seq = px.rank() == 3;
  auto core = apply_activation(tp, px, l.act, l.act_param);
  if (l.norm == NormKind::layer_norm) core = layer_norm(tp, core);
  check(l.norm != NormKind::group_norm, "group norm is a convolutional option");
  core = seq ? seq_matmul_packed(tp, core, w) : matmul_packed(tp, core, w);
  if (b.defined()) core = add_rowvec(tp, core, b);
  core = dropout(tp, core, l.dropout, mode);
  if (l.shortcut) core = add(tp, px, core);
  return core;
}

// ---------------------------------------------------------------------------
// conv layer: Y = Skip(X) + R(Conv(P(N(alpha(X))); W) + b)

template <class T>
Tensor<T> conv_forward(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                       const LayerSpec& l, const EvalMode& mode) {
  check(x.rank() == 4, "conv layer requires [n,c,h,w] input");
  auto core = apply_activation(tp, x, l.act, l.act_param);
  if (l.norm == NormKind::group_norm) core = group_norm(tp, core, l.groups);
  if (l.norm == NormKind::layer_norm) fail("layer norm is not a convolutional option");
  int stride = 1;
  switch (l.stage_pool) {
    case StagePool::none:
      break;
    case StagePool::avg:
      core = avg_pool2d(tp, core, 2, 2);
      break;
    case StagePool::max:
      core = max_pool2d(tp, core, 2, 2);
      break;
    case StagePool::stride2:
      stride = 2;
      break;
  }
  core = conv2d(tp, core, w, b, stride, l.kernel_size / 2);
  core = dropout(tp, core, l.dropout, mode);
  if (l.shortcut) core = add(tp, x, core);
  return core;
}

// ---------------------------------------------------------------------------
// gcn layer: Y = D^-1/2 A D^-1/2 (R(N(alpha(X))) W) + b

template <class T>
Tensor<T> gcn_forward(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                      const GraphContext& g, const LayerSpec& l, const EvalMode& mode) {
  check(g.n >= 1, "gcn: empty graph");
  check(x.rank() == 2 && x.dim(0) == g.n, "gcn: node count mismatch");
  auto core = apply_activation(tp, x, l.act, l.act_param);
  if (l.norm == NormKind::layer_norm) core = layer_norm(tp, core);
  core = dropout(tp, core, l.dropout, mode);
  core = matmul_packed(tp, core, w);
  std::vector<T> pv(g.prop.begin(), g.prop.end());
  auto prop = tp.constant({g.n, g.n}, std::move(pv));
  core = matmul(tp, prop, core);
  if (b.defined()) core = add_rowvec(tp, core, b);
  return core;
}

// ---------------------------------------------------------------------------
// gat layer

template <class T>
Tensor<T> gat_forward(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                      const Tensor<T>& a_src, const Tensor<T>& a_dst, const GraphContext& g,
                      const LayerSpec& l, const EvalMode& mode) {
  check(g.n >= 1, "gat: empty graph");
  check(x.rank() == 2 && x.dim(0) == g.n, "gat: node count mismatch");
  int h = l.num_heads, dh = l.gat_head_dim();
  auto core = apply_activation(tp, x, l.act, l.act_param);
  if (l.norm == NormKind::layer_norm) core = layer_norm(tp, core);
  core = dropout(tp, core, l.dropout, mode);
  auto z = matmul_packed(tp, core, w);  // [n, h*dh]
  auto zh = permute(tp, reshape(tp, z, {g.n, h, dh}), {1, 0, 2});  // [h, n, dh]

  // per-head scores: e[v][u] = leaky(dst[v] + src[u]) on edges into v
  auto scores_for = [&](const Tensor<T>& a) {  // a: [h, dh] -> [h, n]
    auto ah = reshape(tp, a, {h, dh, 1});
    return reshape(tp, bmm(tp, zh, ah), {h, g.n});
  };
  auto s_src = scores_for(a_src);
  auto s_dst = scores_for(a_dst);
  std::vector<T> mv(g.mask.begin(), g.mask.end());
  auto mask = tp.constant({g.n, g.n}, std::move(mv));
  auto zero = tp.constant({g.n, g.n}, std::vector<T>((long)g.n * g.n, T(0)));
  std::vector<Tensor<T>> head_outs;
  for (int r = 0; r < h; ++r) {
    auto src_r = slice_flat(tp, s_src, (long)r * g.n, g.n);
    auto dst_r = slice_flat(tp, s_dst, (long)r * g.n, g.n);
    // rows indexed by v, columns by u: e[v][u] = leaky(dst[v] + src[u])
    auto logits = add(tp, add_rowvec(tp, zero, src_r),
                      transpose2d(tp, add_rowvec(tp, zero, dst_r)));
    logits = leaky_relu(tp, logits, T(0.2));
    logits = add(tp, logits, mask);
    auto beta = softmax_last(tp, logits);
    auto zr = reshape(tp, slice_flat(tp, zh, (long)r * g.n * dh, (long)g.n * dh), {g.n, dh});
    head_outs.push_back(matmul(tp, beta, zr));  // [n, dh]
  }
  Tensor<T> y;
  if (l.head_combine == HeadCombine::concat) {
    auto stacked = stack0(tp, head_outs);            // [h, n, dh]
    y = reshape(tp, permute(tp, stacked, {1, 0, 2}), {g.n, h * dh});
  } else {
    y = head_outs[0];
    for (int r = 1; r < h; ++r) y = add(tp, y, head_outs[r]);
    y = mul_scalar(tp, y, T(1.0 / h));
  }
  if (b.defined()) y = add_rowvec(tp, y, b);
  return y;
}

// ---------------------------------------------------------------------------
// embedding layer: Y = R(Emb(X) + P_1:T)

template <class T>
Tensor<T> embedding_forward(Tape<T>& tp, const std::vector<int>& tokens, int n, int t,
                            const Tensor<T>& table, const Tensor<T>& pos, const LayerSpec& l,
                            const EvalMode& mode) {
  check((long)tokens.size() == (long)n * t, "embedding: token buffer size mismatch");
  check(t <= l.max_seq_len, "embedding: sequence length ", t, " exceeds maximum ",
        l.max_seq_len);
  int d = l.output_size;
  auto emb = reshape(tp, gather_rows(tp, table, tokens), {n, t, d});
  auto pos_rows = slice_flat(tp, pos, 0, (long)t * d);
  auto y = reshape(tp, add_rowvec(tp, reshape(tp, emb, {n, t * d}), pos_rows), {n, t, d});
  return dropout(tp, y, l.dropout, mode);
}

// ---------------------------------------------------------------------------
// multi-head attention layer

template <class T>
struct MhaWeights {
  Tensor<T> wq, wk, wv, wo;      // packed [d, d]
  Tensor<T> bq, bk, bv, bo;      // optional
};

template <class T>
Tensor<T> mha_forward(Tape<T>& tp, const Tensor<T>& x, const MhaWeights<T>& w,
                      const LayerSpec& l, const EvalMode& mode) {
  check(x.rank() == 3, "mha: [n,T,d] input required");
  int n = x.dim(0), t = x.dim(1), d = x.dim(2);
  int h = l.num_heads;
  check(h >= 1 && d % h == 0, "mha: heads (", h, ") must divide width (", d, ")");
  int dh = d / h;
  auto xbar = apply_activation(tp, x, l.act, l.act_param);
  if (l.norm == NormKind::layer_norm) xbar = layer_norm(tp, xbar);

  auto project = [&](const Tensor<T>& wm, const Tensor<T>& bv_) {
    auto p = seq_matmul_packed(tp, xbar, wm);
    if (bv_.defined()) p = add_rowvec(tp, p, bv_);
    return p;
  };
  auto to_heads = [&](const Tensor<T>& p) {
    return reshape(tp, permute(tp, reshape(tp, p, {n, t, h, dh}), {0, 2, 1, 3}), {n * h, t, dh});
  };
  auto q = to_heads(project(w.wq, w.bq));
  auto k = to_heads(project(w.wk, w.bk));
  auto v = to_heads(project(w.wv, w.bv));
  auto scores = mul_scalar(tp, bmm(tp, q, permute(tp, k, {0, 2, 1})), (T)(1.0 / std::sqrt((double)dh)));
  auto att = dropout(tp, softmax_last(tp, scores), l.dropout, mode);
  auto ctxh = bmm(tp, att, v);  // [n*h, t, dh]
  auto merged = reshape(tp, permute(tp, reshape(tp, ctxh, {n, h, t, dh}), {0, 2, 1, 3}), {n, t, d});
  auto out = seq_matmul_packed(tp, merged, w.wo);
  if (w.bo.defined()) out = add_rowvec(tp, out, w.bo);
  out = dropout(tp, out, l.dropout, mode);
  if (l.shortcut) out = add(tp, x, out);
  return out;
}

// ---------------------------------------------------------------------------
// kan layer

/// Cox-de Boor basis values of order p for every input coordinate.
/// knots: [d_in, G+2p+1] strictly increasing rows (checked); x: [n, d_in].
/// Result: [n, d_in*(G+p)] packed input-major, basis-minor. Values outside
/// the knot span evaluate to zero via the recursion itself.
template <class T>
Tensor<T> bspline_basis(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& knots, int p) {
  check(x.rank() == 2 && knots.rank() == 2 && knots.dim(0) == x.dim(1),
        "bspline_basis: shape mismatch");
  check(p >= 0, "bspline_basis: order must be >= 0");
  int n = x.dim(0), din = x.dim(1), mk = knots.dim(1);
  int nb = mk - p - 1;
  check(nb >= 1, "bspline_basis: too few knots for order ", p);
  for (int i = 0; i < din; ++i)
    for (int j = 0; j + 1 < mk; ++j) {
      double lo = (double)knots.value()[(long)i * mk + j];
      double hi = (double)knots.value()[(long)i * mk + j + 1];
      check(std::isfinite(lo) && std::isfinite(hi), "bspline_basis: non-finite knots");
      check(hi > lo, "bspline_basis: knots must be strictly increasing");
    }
  auto kt = transpose2d(tp, knots);  // [mk, din]
  auto knot_col = [&](int j) { return slice_flat(tp, kt, (long)j * din, din); };

  // order-0 indicators are piecewise constant: zero subgradient everywhere
  std::vector<Tensor<T>> basis;
  for (int j = 0; j + 1 < mk; ++j) {
    std::vector<T> ind((long)n * din);
    for (long r = 0; r < n; ++r)
      for (int i = 0; i < din; ++i) {
        T xv = x.value()[r * din + i];
        T lo = knots.value()[(long)i * mk + j];
        T hi = knots.value()[(long)i * mk + j + 1];
        ind[r * din + i] = (xv >= lo && xv < hi) ? T(1) : T(0);
      }
    basis.push_back(tp.constant({n, din}, std::move(ind)));
  }
  for (int k = 1; k <= p; ++k) {
    std::vector<Tensor<T>> next;
    for (int j = 0; j + 1 < (int)basis.size(); ++j) {
      auto tj = knot_col(j), tjk = knot_col(j + k);
      auto tj1 = knot_col(j + 1), tjk1 = knot_col(j + k + 1);
      auto left = mul_rowvec(tp, sub_rowvec(tp, x, tj), reciprocal(tp, sub(tp, tjk, tj)));
      auto right = mul_rowvec(tp, neg(tp, sub_rowvec(tp, x, tjk1)),
                              reciprocal(tp, sub(tp, tjk1, tj1)));
      next.push_back(add(tp, mul(tp, left, basis[j]), mul(tp, right, basis[j + 1])));
    }
    basis = std::move(next);
  }
  check((int)basis.size() == nb, "bspline_basis: internal count mismatch");
  auto stacked = stack0(tp, basis);                       // [nb, n, din]
  auto arranged = permute(tp, stacked, {1, 2, 0});        // [n, din, nb]
  return reshape(tp, arranged, {n, din * nb});
}

template <class T>
struct KanWeights {
  Tensor<T> base_w, base_b;    // [out,in], [out]
  Tensor<T> spline_w;          // [in, G+p, out]
  Tensor<T> spline_s;          // [in, out]
  Tensor<T> grid_min, grid_len;  // [in]
  Tensor<T> knots_raw;         // [in, G+2p+1]
};

/// Knot sequence g = g_min + exp(grid_len) * cumsum(softmax(knots_raw)).
template <class T>
Tensor<T> kan_knots(Tape<T>& tp, const KanWeights<T>& w) {
  int din = w.knots_raw.dim(0), mk = w.knots_raw.dim(1);
  auto steps = cumsum_last(tp, softmax_last(tp, w.knots_raw));  // [din, mk]
  auto spans = exp_op(tp, w.grid_len);                          // [din]
  auto scaled = mul_rowvec(tp, transpose2d(tp, steps), spans);  // [mk, din]
  auto shifted = add_rowvec(tp, scaled, w.grid_min);
  (void)mk;
  return transpose2d(tp, shifted);  // [din, mk]
}

template <class T>
Tensor<T> kan_forward(Tape<T>& tp, const Tensor<T>& x, const KanWeights<T>& w,
                      const LayerSpec& l, const EvalMode&) {
  check(x.rank() == 2 && x.dim(1) == l.input_size, "kan: input width mismatch");
  int din = l.input_size, dout = l.output_size;
  int g = l.grid_size, p = l.spline_order, nb = g + p;

  auto base = matmul_packed(tp, apply_activation(tp, x, l.act, l.act_param), w.base_w);
  if (w.base_b.defined()) base = add_rowvec(tp, base, w.base_b);

  auto knots = kan_knots(tp, w);
  auto phi = bspline_basis(tp, x, knots, p);  // [n, din*nb]

  // scaled spline weights, flattened to [din*nb, dout]
  auto sw = permute(tp, w.spline_w, {1, 0, 2});                      // [nb, din, dout]
  auto flat = reshape(tp, sw, {nb, din * dout});
  auto scaled = mul_rowvec(tp, flat, reshape(tp, w.spline_s, {din * dout}));
  auto wt = reshape(tp, permute(tp, reshape(tp, scaled, {nb, din, dout}), {1, 0, 2}),
                    {din * nb, dout});
  return add(tp, base, matmul(tp, phi, wt));
}

// ---------------------------------------------------------------------------
// model forward

template <class T>
struct ModelInput {
  Tensor<T> dense;                 // [n, d] | [n, c, h, w] node/feature input
  std::vector<int> tokens;         // transformer input, [batch * seq]
  int batch = 0, seq = 0;
  const GraphContext* graph = nullptr;
};

template <class T>
MhaWeights<T> mha_weights(Tape<T>& tp, const PackedWeights<T>& pw, int li, bool bias) {
  MhaWeights<T> w;
  w.wq = pw.get(tp, li, ParamKind::wq);
  w.wk = pw.get(tp, li, ParamKind::wk);
  w.wv = pw.get(tp, li, ParamKind::wv);
  w.wo = pw.get(tp, li, ParamKind::wo);
  if (bias) {
    w.bq = pw.get(tp, li, ParamKind::bq);
    w.bk = pw.get(tp, li, ParamKind::bk);
    w.bv = pw.get(tp, li, ParamKind::bv);
    w.bo = pw.get(tp, li, ParamKind::bo);
  }
  return w;
}

template <class T>
KanWeights<T> kan_weights(Tape<T>& tp, const PackedWeights<T>& pw, int li, bool bias) {
  KanWeights<T> w;
  w.base_w = pw.get(tp, li, ParamKind::kan_base_w);
  if (bias) w.base_b = pw.get(tp, li, ParamKind::kan_base_b);
  w.spline_w = pw.get(tp, li, ParamKind::kan_spline_w);
  w.spline_s = pw.get(tp, li, ParamKind::kan_spline_s);
  w.grid_min = pw.get(tp, li, ParamKind::kan_grid_min);
  w.grid_len = pw.get(tp, li, ParamKind::kan_grid_len);
  w.knots_raw = pw.get(tp, li, ParamKind::kan_knots);
  return w;
}

/// Unpacks the flat weight vector by the spec's layout and composes all
/// layers. Returns [n, out] activations (logits for classifiers).
template <class T>
Tensor<T> model_forward(Tape<T>& tp, const ModelSpec& spec, const ParamLayout& layout,
                        const Tensor<T>& w_flat, const ModelInput<T>& in, const EvalMode& mode) {
  check(w_flat.numel() == layout.total, "model_forward: weight vector has ", w_flat.numel(),
        " elements, layout needs ", layout.total);
  check(spec.family != ModelFamily::recursive_uhn,
        "model_forward: use generated_uhn_forward for recursive specs");
  PackedWeights<T> pw{&layout, w_flat};
  Tensor<T> x = in.dense;
  for (int li = 0; li < spec.num_layers(); ++li) {
    const auto& l = spec.layers[li];
    switch (l.type) {
      case LayerType::linear: {
        auto w = pw.get(tp, li, ParamKind::weight);
        Tensor<T> b = l.bias ? pw.get(tp, li, ParamKind::bias) : Tensor<T>();
        x = linear_forward(tp, x, w, b, l, mode);
        break;
      }
      case LayerType::conv: {
        auto w = pw.get(tp, li, ParamKind::weight);
        Tensor<T> b = l.bias ? pw.get(tp, li, ParamKind::bias) : Tensor<T>();
        x = conv_forward(tp, x, w, b, l, mode);
        break;
      }
      case LayerType::gcn: {
        check(in.graph != nullptr, "gcn model requires a graph context");
        auto w = pw.get(tp, li, ParamKind::weight);
        Tensor<T> b = l.bias ? pw.get(tp, li, ParamKind::bias) : Tensor<T>();
        x = gcn_forward(tp, x, w, b, *in.graph, l, mode);
        break;
      }
      case LayerType::gat: {
        check(in.graph != nullptr, "gat model requires a graph context");
        auto w = pw.get(tp, li, ParamKind::weight);
        Tensor<T> b = l.bias ? pw.get(tp, li, ParamKind::bias) : Tensor<T>();
        x = gat_forward(tp, x, w, b, pw.get(tp, li, ParamKind::attn_src),
                        pw.get(tp, li, ParamKind::attn_dst), *in.graph, l, mode);
        break;
      }
      case LayerType::embedding: {
        x = embedding_forward(tp, in.tokens, in.batch, in.seq,
                              pw.get(tp, li, ParamKind::emb_table),
                              pw.get(tp, li, ParamKind::pos_table), l, mode);
        break;
      }
      case LayerType::mha: {
        x = mha_forward(tp, x, mha_weights(tp, pw, li, l.bias), l, mode);
        break;
      }
      case LayerType::kan: {
        x = kan_forward(tp, x, kan_weights(tp, pw, li, l.bias), l, mode);
        break;
      }
    }
  }
  return x;
}

/// Evaluates a generated hypernetwork exactly as a parameterized model: index
/// branch over the encoded index features, task-structure branch over the
/// encoded tokens, fused sum into the readout. Normalization statistics and
/// Fourier matrices are the root generator's (the encoding is built with
/// them).
template <class T>
Tensor<T> generated_uhn_forward(Tape<T>& tp, const ModelSpec& spec, const ParamLayout& layout,
                                const Tensor<T>& theta, const TargetEncoding<T>& enc,
                                const EvalMode& mode) {
  check(spec.family == ModelFamily::recursive_uhn, "generated_uhn_forward: not a recursive spec");
  check(theta.numel() == layout.total, "generated_uhn_forward: theta has ", theta.numel(),
        " elements, layout needs ", layout.total);
  check(enc.phi_width == spec.layers[0].input_size,
        "generated_uhn_forward: encoding width mismatch");
  PackedWeights<T> pw{&layout, theta};
  int nv = spec.rec_index_layers, nu = spec.rec_ts_layers;

  auto x = tp.constant({(int)enc.count, enc.phi_width}, enc.phi);
  Tensor<T> hv = x;
  for (int li = 0; li < nv; ++li) {
    const auto& l = spec.layers[li];
    auto w = pw.get(tp, li, ParamKind::weight);
    Tensor<T> b = l.bias ? pw.get(tp, li, ParamKind::bias) : Tensor<T>();
    hv = linear_forward(tp, hv, w, b, l, mode);
  }

  check(enc.token_count >= 1, "generated_uhn_forward: no task-structure tokens");
  Tensor<T> hu = tp.constant({1, enc.token_count, enc.token_width}, enc.psi);
  for (int li = nv; li < nv + nu; ++li) {
    const auto& l = spec.layers[li];
    if (l.type == LayerType::mha) {
      hu = mha_forward(tp, hu, mha_weights(tp, pw, li, l.bias), l, mode);
    } else {
      auto w = pw.get(tp, li, ParamKind::weight);
      Tensor<T> b = l.bias ? pw.get(tp, li, ParamKind::bias) : Tensor<T>();
      hu = linear_forward(tp, hu, w, b, l, mode);
    }
  }
  // hu is [1, d]; broadcast over all parameter rows
  auto fused = add_rowvec(tp, hv, reshape(tp, hu, {(int)hu.numel()}));

  int ro = spec.num_layers() - 1;
  const auto& l = spec.layers[ro];
  auto w = pw.get(tp, ro, ParamKind::weight);
  Tensor<T> b = l.bias ? pw.get(tp, ro, ParamKind::bias) : Tensor<T>();
  auto y = linear_forward(tp, fused, w, b, l, mode);
  return reshape(tp, y, {(int)enc.count});
}

// ---------------------------------------------------------------------------
// losses

template <class T>
Tensor<T> cross_entropy(Tape<T>& tp, const Tensor<T>& logits, const std::vector<int>& labels) {
  return nll_loss(tp, log_softmax_last(tp, logits), labels);
}

template <class T>
Tensor<T> mse_loss(Tape<T>& tp, const Tensor<T>& pred, const Tensor<T>& target) {
  auto d = sub(tp, pred, target);
  return mean_all(tp, mul(tp, d, d));
}

}  // namespace uhn
