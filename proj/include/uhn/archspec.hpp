#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "uhn/common.hpp"
#include "uhn/registry.hpp"

// Target-model specifications, canonical parameter layouts, model-family
// sampling and model-set splitting.
//
// Packing convention: parameters are enumerated layer-major in forward order;
// within a layer, components follow the per-layer listing order (linear/conv/
// gcn: W then b; gat: W, b, a_src, a_dst; embedding: E then P; mha: Wq, Wk,
// Wv, bq, bk, bv, Wo, bo; kan: W_base, b_base, W_spline, S, g_min, grid_len,
// knots). Matrix components are packed row-major by (out, in); the kan spline
// weight is packed (in, grid, out) so its flattening is exactly the reshaped
// matrix it multiplies; attention vectors are packed (head, dim).

namespace uhn {

struct LayerSpec {
  LayerType type = LayerType::linear;
  bool bias = true;
  NormKind norm = NormKind::none;
  bool shortcut = false;
  int output_size = 0;  // d_out / c_out / embedding dim; per-combine output for gat
  int input_size = 0;
  Activation act = Activation::none;
  double act_param = 0.0;
  double dropout = 0.0;
  PoolReshape pool_reshape = PoolReshape::none;  // linear
  int groups = 0;                                // conv (group norm)
  int kernel_size = 0;                           // conv
  StagePool stage_pool = StagePool::none;        // conv
  int num_heads = 0;                             // gat / mha
  HeadCombine head_combine = HeadCombine::concat;  // gat
  int vocab_size = 0;                            // embedding
  int max_seq_len = 0;                           // embedding
  int grid_size = 0;                             // kan
  int spline_order = 0;                          // kan
  InitMode init = InitMode::standard;

  /// Per-head output width of a gat layer.
  int gat_head_dim() const {
    if (head_combine == HeadCombine::average) return output_size;
    check(num_heads > 0 && output_size % num_heads == 0,
          "gat: heads (", num_heads, ") must divide output size (", output_size,
          ") in concat mode");
    return output_size / num_heads;
  }
  /// Projection width of a gat layer (h * d_h).
  int gat_proj_dim() const { return num_heads * gat_head_dim(); }
};

struct ModelSpec {
  ModelFamily family = ModelFamily::mlp_cnn;
  std::vector<LayerSpec> layers;
  int cnn_stage_num = 0;   // mlp_cnn only
  int num_encoders = 0;    // transformer only
  int rec_index_freqs = 0;      // recursive_uhn: F_v of the generated generator
  int rec_structure_freqs = 0;  // recursive_uhn: F_u
  // recursive_uhn branch partition: layers[0..rec_index_layers) form the index
  // branch, the next rec_ts_layers form the task-structure branch (first is
  // mha), and the final layer is the readout.
  int rec_index_layers = 0;
  int rec_ts_layers = 0;

  int num_layers() const { return (int)layers.size(); }
};

// ---------------------------------------------------------------------------
// parameter layout

struct LayoutEntry {
  int layer_idx;
  ParamKind kind;
  std::vector<int> shape;
  long offset;
  long count;
};

struct ParamLayout {
  std::vector<LayoutEntry> entries;
  long total = 0;

  const LayoutEntry& find(int layer_idx, ParamKind kind) const {
    for (const auto& e : entries)
      if (e.layer_idx == layer_idx && e.kind == kind) return e;
    fail("param layout: no component ", (int)kind, " in layer ", layer_idx);
  }
};

namespace detail {

// light signature check across the layer stack
struct Signature {
  enum Kind { vec, seq, img, tokens } kind;
  int width;  // feature dim / channels
};

inline Signature initial_signature(const ModelSpec& spec) {
  const auto& l0 = spec.layers.front();
  switch (l0.type) {
    case LayerType::conv:
      return {Signature::img, l0.input_size};
    case LayerType::embedding:
      return {Signature::tokens, 0};
    default:
      return {Signature::vec, l0.input_size};
  }
}

inline void check_layer(const ModelSpec& spec, int idx, Signature& sig) {
  const auto& l = spec.layers[idx];
  auto bad = [&](const std::string& why) {
    fail("ill-typed composition at layer ", idx, ": ", why);
  };
  switch (l.type) {
    case LayerType::linear: {
      if (sig.kind == Signature::img) {
        if (l.pool_reshape != PoolReshape::adaptive_avg && l.pool_reshape != PoolReshape::flatten)
          bad("image input into linear layer requires pooling/reshape");
        if (l.pool_reshape == PoolReshape::adaptive_avg && sig.width != l.input_size)
          bad("adaptive pooling yields " + std::to_string(sig.width) + " features, layer expects " +
              std::to_string(l.input_size));
        sig = {Signature::vec, l.output_size};
      } else if (sig.kind == Signature::seq) {
        if (sig.width != l.input_size) bad("sequence width mismatch");
        bool pooled = l.pool_reshape == PoolReshape::seq_mean || l.pool_reshape == PoolReshape::first_token;
        sig = {pooled ? Signature::vec : Signature::seq, l.output_size};
      } else if (sig.kind == Signature::vec) {
        if (sig.width != l.input_size) bad("feature width mismatch");
        sig = {Signature::vec, l.output_size};
      } else {
        bad("token input into linear layer");
      }
      if (l.shortcut && l.input_size != l.output_size) bad("shortcut with incompatible sizes");
      break;
    }
    case LayerType::conv: {
      if (sig.kind != Signature::img) bad("conv layer requires image input");
      if (sig.width != l.input_size) bad("channel mismatch");
      if (l.norm == NormKind::group_norm) {
        check(l.groups > 0, "conv: group norm requires groups > 0");
        if (l.output_size % l.groups != 0) bad("channels not divisible by group count");
      }
      if (l.shortcut && (l.input_size != l.output_size || l.stage_pool != StagePool::none))
        bad("shortcut with incompatible conv");
      sig = {Signature::img, l.output_size};
      break;
    }
    case LayerType::gcn: {
      if (sig.kind != Signature::vec || sig.width != l.input_size) bad("gcn width mismatch");
      sig = {Signature::vec, l.output_size};
      break;
    }
    case LayerType::gat: {
      if (sig.kind != Signature::vec || sig.width != l.input_size) bad("gat width mismatch");
      (void)l.gat_head_dim();
      sig = {Signature::vec,
             l.head_combine == HeadCombine::concat ? l.gat_proj_dim() : l.output_size};
      break;
    }
    case LayerType::embedding: {
      if (sig.kind != Signature::tokens) bad("embedding layer requires token input");
      sig = {Signature::seq, l.output_size};
      break;
    }
    case LayerType::mha: {
      if (sig.kind != Signature::seq || sig.width != l.input_size) bad("mha width mismatch");
      if (l.num_heads <= 0 || l.output_size % l.num_heads != 0)
        bad("mha heads must divide the embedding dimension");
      if (l.input_size != l.output_size) bad("mha requires equal input/output widths");
      sig = {Signature::seq, l.output_size};
      break;
    }
    case LayerType::kan: {
      if (sig.kind != Signature::vec || sig.width != l.input_size) bad("kan width mismatch");
      sig = {Signature::vec, l.output_size};
      break;
    }
  }
}

}  // namespace detail

inline void validate_spec(const ModelSpec& spec) {
  check(!spec.layers.empty(), "model spec has no layers");
  if (spec.family == ModelFamily::recursive_uhn) {
    // two branches plus a readout; validate each segment on its own
    int nv = spec.rec_index_layers, nu = spec.rec_ts_layers;
    check(nv >= 1 && nu >= 1 && nv + nu + 1 == spec.num_layers(),
          "recursive spec: branch partition does not cover the layer list");
    detail::Signature sv{detail::Signature::vec, spec.layers[0].input_size};
    for (int i = 0; i < nv; ++i) detail::check_layer(spec, i, sv);
    detail::Signature su{detail::Signature::seq, spec.layers[nv].input_size};
    for (int i = nv; i < nv + nu; ++i) detail::check_layer(spec, i, su);
    check(su.kind == detail::Signature::vec,
          "recursive spec: task-structure branch must pool to a vector");
    const auto& out = spec.layers.back();
    check(sv.width == su.width && su.width == out.input_size,
          "recursive spec: fusion widths disagree at the readout");
    detail::Signature so{detail::Signature::vec, out.input_size};
    detail::check_layer(spec, spec.num_layers() - 1, so);
    return;
  }
  auto sig = detail::initial_signature(spec);
  for (int i = 0; i < spec.num_layers(); ++i) detail::check_layer(spec, i, sig);
}

/// Canonical parameter layout of a model. Normalization layers contribute no
/// parameters in generated/base models.
inline ParamLayout param_layout(const ModelSpec& spec) {
  validate_spec(spec);
  ParamLayout lay;
  auto push = [&](int li, ParamKind k, std::vector<int> shape) {
    long c = shape_numel(shape);
    lay.entries.push_back({li, k, std::move(shape), lay.total, c});
    lay.total += c;
  };
  for (int li = 0; li < spec.num_layers(); ++li) {
    const auto& l = spec.layers[li];
    switch (l.type) {
      case LayerType::linear:
        push(li, ParamKind::weight, {l.output_size, l.input_size});
        if (l.bias) push(li, ParamKind::bias, {l.output_size});
        break;
      case LayerType::conv:
        push(li, ParamKind::weight, {l.output_size, l.input_size, l.kernel_size, l.kernel_size});
        if (l.bias) push(li, ParamKind::bias, {l.output_size});
        break;
      case LayerType::gcn:
        push(li, ParamKind::weight, {l.output_size, l.input_size});
        if (l.bias) push(li, ParamKind::bias, {l.output_size});
        break;
      case LayerType::gat: {
        int dh = l.gat_head_dim(), proj = l.gat_proj_dim();
        push(li, ParamKind::weight, {proj, l.input_size});
        if (l.bias)
          push(li, ParamKind::bias,
               {l.head_combine == HeadCombine::concat ? proj : dh});
        push(li, ParamKind::attn_src, {l.num_heads, dh});
        push(li, ParamKind::attn_dst, {l.num_heads, dh});
        break;
      }
      case LayerType::embedding:
        push(li, ParamKind::emb_table, {l.vocab_size, l.output_size});
        push(li, ParamKind::pos_table, {l.max_seq_len, l.output_size});
        break;
      case LayerType::mha: {
        int d = l.output_size;
        push(li, ParamKind::wq, {d, d});
        push(li, ParamKind::wk, {d, d});
        push(li, ParamKind::wv, {d, d});
        if (l.bias) {
          push(li, ParamKind::bq, {d});
          push(li, ParamKind::bk, {d});
          push(li, ParamKind::bv, {d});
        }
        push(li, ParamKind::wo, {d, d});
        if (l.bias) push(li, ParamKind::bo, {d});
        break;
      }
      case LayerType::kan: {
        int g = l.grid_size, p = l.spline_order;
        check(g >= 1 && p >= 0, "kan: grid size >= 1 and spline order >= 0 required");
        push(li, ParamKind::kan_base_w, {l.output_size, l.input_size});
        if (l.bias) push(li, ParamKind::kan_base_b, {l.output_size});
        push(li, ParamKind::kan_spline_w, {l.input_size, g + p, l.output_size});
        push(li, ParamKind::kan_spline_s, {l.input_size, l.output_size});
        push(li, ParamKind::kan_grid_min, {l.input_size});
        push(li, ParamKind::kan_grid_len, {l.input_size});
        push(li, ParamKind::kan_knots, {l.input_size, g + 2 * p + 1});
        break;
      }
    }
  }
  return lay;
}

// ---------------------------------------------------------------------------
// reference model builders (Appendix C.8 shapes, parameterized for desk use)

struct MlpOptions {
  Activation act = Activation::leaky_relu;
  double act_param = 0.1;
  NormKind norm = NormKind::layer_norm;
  bool shortcut = true;
  double dropout = 0.0;
};

/// Stack of linear layers. The first layer is a plain stem; later layers are
/// pre-activation (activation + norm applied to their input). Shortcuts only
/// where input and output widths match.
inline ModelSpec make_mlp(int d_in, const std::vector<int>& hidden, int d_out,
                          MlpOptions opt = {}) {
  ModelSpec spec;
  spec.family = ModelFamily::mlp_cnn;
  std::vector<int> widths{d_in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(d_out);
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    LayerSpec l;
    l.type = LayerType::linear;
    l.input_size = widths[i];
    l.output_size = widths[i + 1];
    l.bias = true;
    if (i > 0) {
      l.act = opt.act;
      l.act_param = opt.act == Activation::leaky_relu ? opt.act_param : 0.0;
      l.norm = opt.norm;
      l.dropout = opt.dropout;
      l.shortcut = opt.shortcut && l.input_size == l.output_size;
    }
    spec.layers.push_back(l);
  }
  return spec;
}

/// Four-stage pre-activation CNN + linear classifier head. Stage widths and
/// per-stage layer counts follow the family conventions: stem conv is plain,
/// later convs use the activation/group norm, downsampling happens via
/// stride-2 at the first layer of stages 2 and 3, shortcuts everywhere except
/// the stem, the downsampling layers, and the classifier.
inline ModelSpec make_cnn(const std::vector<int>& stage_layers, const std::vector<int>& widths,
                          int in_channels, int classes, int kernel = 3, int groups = 4,
                          Activation act = Activation::leaky_relu, double act_param = 0.1) {
  check(stage_layers.size() == widths.size() && !widths.empty(), "make_cnn: stage mismatch");
  ModelSpec spec;
  spec.family = ModelFamily::mlp_cnn;
  spec.cnn_stage_num = (int)widths.size();
  int prev = in_channels;
  for (size_t s = 0; s < widths.size(); ++s) {
    for (int j = 0; j < stage_layers[s]; ++j) {
      LayerSpec l;
      l.type = LayerType::conv;
      l.input_size = prev;
      l.output_size = widths[s];
      l.kernel_size = kernel;
      l.bias = true;
      bool stem = s == 0 && j == 0;
      bool down = s >= 2 && j == 0;
      if (!stem) {
        l.act = act;
        l.act_param = act == Activation::leaky_relu ? act_param : 0.0;
        l.norm = NormKind::group_norm;
        l.groups = groups;
      }
      if (down) l.stage_pool = StagePool::stride2;
      l.shortcut = !stem && !down && l.input_size == l.output_size;
      spec.layers.push_back(l);
      prev = widths[s];
    }
  }
  LayerSpec head;
  head.type = LayerType::linear;
  head.input_size = prev;
  head.output_size = classes;
  head.bias = true;
  head.pool_reshape = PoolReshape::adaptive_avg;
  spec.layers.push_back(head);
  return spec;
}

inline ModelSpec make_gcn(int features, int hidden, int classes, double dropout = 0.5,
                          Activation act = Activation::leaky_relu, double act_param = 0.1) {
  ModelSpec spec;
  spec.family = ModelFamily::gcn;
  LayerSpec l1;
  l1.type = LayerType::gcn;
  l1.input_size = features;
  l1.output_size = hidden;
  l1.dropout = dropout;
  spec.layers.push_back(l1);
  LayerSpec l2 = l1;
  l2.input_size = hidden;
  l2.output_size = classes;
  l2.act = act;
  l2.act_param = act == Activation::leaky_relu ? act_param : 0.0;
  spec.layers.push_back(l2);
  return spec;
}

inline ModelSpec make_gat(int features, int hidden_heads, int head_dim, int out_heads,
                          int classes, double dropout = 0.6) {
  ModelSpec spec;
  spec.family = ModelFamily::gat;
  LayerSpec l1;
  l1.type = LayerType::gat;
  l1.input_size = features;
  l1.num_heads = hidden_heads;
  l1.head_combine = HeadCombine::concat;
  l1.output_size = hidden_heads * head_dim;
  l1.dropout = dropout;
  spec.layers.push_back(l1);
  LayerSpec l2;
  l2.type = LayerType::gat;
  l2.input_size = hidden_heads * head_dim;
  l2.num_heads = out_heads;
  l2.head_combine = out_heads > 1 ? HeadCombine::average : HeadCombine::concat;
  l2.output_size = classes;
  l2.act = Activation::elu;
  l2.dropout = dropout;
  spec.layers.push_back(l2);
  return spec;
}

/// Transformer classifier: embedding, J encoder blocks (one mha + ff_depth
/// linear layers each), first-token linear head. The first mha is plain; all
/// other mha/ff layers are pre-activation with layer norm.
inline ModelSpec make_transformer(int vocab, int d, int t_max, int encoders,
                                  const std::vector<int>& ff_depths, int heads, int classes,
                                  double dropout = 0.2) {
  check((int)ff_depths.size() == encoders, "make_transformer: ff depth per encoder required");
  ModelSpec spec;
  spec.family = ModelFamily::transformer;
  spec.num_encoders = encoders;
  LayerSpec emb;
  emb.type = LayerType::embedding;
  emb.vocab_size = vocab;
  emb.output_size = d;
  emb.max_seq_len = t_max;
  emb.dropout = dropout;
  emb.bias = false;
  spec.layers.push_back(emb);
  for (int j = 0; j < encoders; ++j) {
    LayerSpec mha;
    mha.type = LayerType::mha;
    mha.input_size = d;
    mha.output_size = d;
    mha.num_heads = heads;
    mha.bias = true;
    mha.shortcut = true;
    mha.dropout = dropout;
    if (j > 0) {
      mha.act = Activation::leaky_relu;
      mha.act_param = 0.1;
      mha.norm = NormKind::layer_norm;
    }
    spec.layers.push_back(mha);
    for (int k = 0; k < ff_depths[j]; ++k) {
      LayerSpec ff;
      ff.type = LayerType::linear;
      ff.input_size = d;
      ff.output_size = d;
      ff.bias = true;
      ff.shortcut = true;
      ff.dropout = dropout;
      ff.act = Activation::leaky_relu;
      ff.act_param = 0.1;
      ff.norm = NormKind::layer_norm;
      spec.layers.push_back(ff);
    }
  }
  LayerSpec head;
  head.type = LayerType::linear;
  head.input_size = d;
  head.output_size = classes;
  head.bias = true;
  head.pool_reshape = PoolReshape::first_token;
  spec.layers.push_back(head);
  return spec;
}

inline ModelSpec make_kan(const std::vector<int>& widths, int grid, int order,
                          Activation base_act = Activation::silu) {
  check(widths.size() >= 2, "make_kan: need at least input and output widths");
  ModelSpec spec;
  spec.family = ModelFamily::kan;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    LayerSpec l;
    l.type = LayerType::kan;
    l.input_size = widths[i];
    l.output_size = widths[i + 1];
    l.grid_size = grid;
    l.spline_order = order;
    l.bias = true;
    l.act = base_act;
    spec.layers.push_back(l);
  }
  return spec;
}

/// Generated-hypernetwork template: an input linear plus `index_layers`
/// pre-activation linears form the index branch; the task-structure branch is
/// an mha layer, `ts_layers` pre-activation linears, a sequence-mean pooling
/// linear and one more linear; a final linear produces the scalar weight.
/// Frequencies are shared with the root generator.
inline ModelSpec make_recursive_uhn(int f_v, int f_u, int d = 64, int index_layers = 4,
                                    int ts_layers = 2) {
  ModelSpec spec;
  spec.family = ModelFamily::recursive_uhn;
  spec.rec_index_freqs = f_v;
  spec.rec_structure_freqs = f_u;

  LayerSpec in;
  in.type = LayerType::linear;
  in.input_size = 2 * f_v;
  in.output_size = d;
  in.bias = true;
  spec.layers.push_back(in);
  for (int i = 0; i < index_layers; ++i) {
    LayerSpec l;
    l.type = LayerType::linear;
    l.input_size = d;
    l.output_size = d;
    l.bias = true;
    l.act = Activation::leaky_relu;
    l.act_param = 0.1;
    l.norm = NormKind::layer_norm;
    l.shortcut = true;
    spec.layers.push_back(l);
  }
  spec.rec_index_layers = 1 + index_layers;

  int tok = 2 * f_u;
  LayerSpec mha;
  mha.type = LayerType::mha;
  mha.input_size = tok;
  mha.output_size = tok;
  mha.num_heads = 4;
  mha.bias = true;
  mha.shortcut = true;
  spec.layers.push_back(mha);
  for (int i = 0; i < ts_layers; ++i) {
    LayerSpec l;
    l.type = LayerType::linear;
    l.input_size = tok;
    l.output_size = tok;
    l.bias = true;
    l.act = Activation::leaky_relu;
    l.act_param = 0.1;
    l.norm = NormKind::layer_norm;
    l.shortcut = true;
    spec.layers.push_back(l);
  }
  LayerSpec pool;
  pool.type = LayerType::linear;
  pool.input_size = tok;
  pool.output_size = d;
  pool.bias = true;
  pool.pool_reshape = PoolReshape::seq_mean;
  spec.layers.push_back(pool);
  LayerSpec post;
  post.type = LayerType::linear;
  post.input_size = d;
  post.output_size = d;
  post.bias = true;
  post.act = Activation::leaky_relu;
  post.act_param = 0.1;
  spec.layers.push_back(post);
  spec.rec_ts_layers = 1 + ts_layers + 2;

  LayerSpec out;
  out.type = LayerType::linear;
  out.input_size = d;
  out.output_size = 1;
  out.bias = true;
  out.act = Activation::leaky_relu;
  out.act_param = 0.1;
  spec.layers.push_back(out);
  return spec;
}

// ---------------------------------------------------------------------------
// model-family sampling (Appendix D.1 distributions; desk variants allowed
// through the parameter struct)

enum class FamilyKind { cnn_mixed_depth, cnn_mixed_width, cnn_mixed_depth_width, transformer_mixed };

struct CnnFamilyParams {
  int stem_layers = 1;
  int depth_lo = 6, depth_hi = 10;          // mixed depth draws K_1..K_3
  int width0_lo = 16, width0_hi = 32;       // mixed width draws c_0 (= c_1)
  int width2_lo = 32, width2_hi = 64;
  int width3_lo = 64, width3_hi = 128;
  std::vector<int> fixed_widths = {16, 16, 32, 64};  // mixed depth
  std::vector<int> fixed_depths = {1, 6, 6, 6};      // mixed width
  int in_channels = 3;
  int classes = 10;
  int groups = 4;
};

struct TransformerFamilyParams {
  int enc_lo = 1, enc_hi = 4;
  int heads_lo = 1, heads_hi = 8;
  int dim_lo = 32, dim_hi = 128;
  int ff_lo = 1, ff_hi = 3;
  int vocab = 5000;
  int t_max = 128;
  int classes = 4;
  double dropout = 0.2;
};

inline int draw_uniform(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Width draws are rejected until divisible by the group count, so GroupNorm
// stays well formed.
inline int draw_width(std::mt19937_64& rng, int lo, int hi, int groups) {
  for (;;) {
    int w = draw_uniform(rng, lo, hi);
    if (w % groups == 0) return w;
  }
}

inline ModelSpec sample_cnn(FamilyKind kind, const CnnFamilyParams& p, std::mt19937_64& rng) {
  std::vector<int> depths, widths;
  switch (kind) {
    case FamilyKind::cnn_mixed_depth:
      depths = {p.stem_layers, draw_uniform(rng, p.depth_lo, p.depth_hi),
                draw_uniform(rng, p.depth_lo, p.depth_hi), draw_uniform(rng, p.depth_lo, p.depth_hi)};
      widths = p.fixed_widths;
      break;
    case FamilyKind::cnn_mixed_width: {
      depths = p.fixed_depths;
      int c0 = draw_width(rng, p.width0_lo, p.width0_hi, p.groups);
      widths = {c0, c0, draw_width(rng, p.width2_lo, p.width2_hi, p.groups),
                draw_width(rng, p.width3_lo, p.width3_hi, p.groups)};
      break;
    }
    case FamilyKind::cnn_mixed_depth_width: {
      depths = {p.stem_layers, draw_uniform(rng, 6, 8), draw_uniform(rng, 6, 8),
                draw_uniform(rng, 6, 8)};
      int c0 = draw_width(rng, p.width0_lo, p.width0_hi, p.groups);
      widths = {c0, c0, draw_width(rng, p.width2_lo, p.width2_hi, p.groups),
                draw_width(rng, p.width3_lo, p.width3_hi, p.groups)};
      break;
    }
    default:
      fail("sample_cnn: not a cnn family");
  }
  return make_cnn(depths, widths, p.in_channels, p.classes, 3, p.groups);
}

inline ModelSpec sample_transformer(const TransformerFamilyParams& p, std::mt19937_64& rng) {
  int enc = draw_uniform(rng, p.enc_lo, p.enc_hi);
  int heads = draw_uniform(rng, p.heads_lo, p.heads_hi);
  int d;
  do {
    d = draw_uniform(rng, p.dim_lo, p.dim_hi);
  } while (d % heads != 0);
  std::vector<int> ff(enc);
  for (auto& k : ff) k = draw_uniform(rng, p.ff_lo, p.ff_hi);
  return make_transformer(p.vocab, d, p.t_max, enc, ff, heads, p.classes, p.dropout);
}

inline ModelSpec sample_architecture(FamilyKind kind, std::mt19937_64& rng,
                                     const CnnFamilyParams& cnn = {},
                                     const TransformerFamilyParams& tf = {}) {
  if (kind == FamilyKind::transformer_mixed) return sample_transformer(tf, rng);
  return sample_cnn(kind, cnn, rng);
}

// ---------------------------------------------------------------------------
// model-set splitting (Appendix D.2)

struct ModelSet {
  std::vector<ModelSpec> models;       // M
  std::vector<int> train;              // indices into models
  std::vector<int> test;
  std::vector<int> val;                // subset of train
  std::vector<int> holdin;             // subset of train, disjoint from val
};

struct SplitSizes {
  int train, test, val, holdin;
};

inline ModelSet split_model_set(std::vector<ModelSpec> models, SplitSizes sizes,
                                std::mt19937_64& rng) {
  int m = (int)models.size();
  check(sizes.train >= 0 && sizes.test >= 0 && sizes.train + sizes.test == m,
        "split_model_set: train (", sizes.train, ") + test (", sizes.test,
        ") must equal |M| = ", m);
  check(sizes.val + sizes.holdin <= sizes.train,
        "split_model_set: val + holdin exceed the training split");
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  ModelSet set;
  set.models = std::move(models);
  set.train.assign(idx.begin(), idx.begin() + sizes.train);
  set.test.assign(idx.begin() + sizes.train, idx.end());
  set.val.assign(set.train.begin(), set.train.begin() + sizes.val);
  set.holdin.assign(set.train.begin() + sizes.val, set.train.begin() + sizes.val + sizes.holdin);
  return set;
}

// ---------------------------------------------------------------------------
// chunked-hypernetwork scaling (Appendix B.1)

/// N_H = N_H0 + o*c + (N/c)*d_emb for a chunked hypernetwork with chunk size
/// c, core width o and chunk-embedding width d_emb.
inline long chunked_baseline_count(long n, long c, long d_emb, long o, long n_h0) {
  check(c >= 1 && n >= 1, "chunked_baseline_count: positive sizes required");
  check(n % c == 0, "chunked_baseline_count: chunk size ", c, " does not divide N = ", n);
  return n_h0 + o * c + (n / c) * d_emb;
}

/// AM-GM lower bound N_H >= N_H0 + 2*sqrt(o*d_emb*N).
inline bool chunked_bound_holds(long n, long c, long d_emb, long o, long n_h0,
                                double tol = 1e-9) {
  double nh = (double)chunked_baseline_count(n, c, d_emb, o, n_h0);
  double bound = (double)n_h0 + 2.0 * std::sqrt((double)o * (double)d_emb * (double)n);
  return nh >= bound - tol * std::max(1.0, std::abs(bound));
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  return nlohmann::json{{"layer_type", (int)l.type},
                        {"bias_type", l.bias ? (int)BiasOpt::on : (int)BiasOpt::off},
                        {"norm_type", (int)l.norm},
                        {"shortcut_type", l.shortcut ? (int)ShortcutOpt::on : (int)ShortcutOpt::off},
                        {"output_size", l.output_size},
                        {"input_size", l.input_size},
                        {"activation_type", (int)l.act},
                        {"activation_param", l.act_param},
                        {"dropout_rate", l.dropout},
                        {"input_pooling_reshape_type", (int)l.pool_reshape},
                        {"group_num", l.groups},
                        {"kernel_size", l.kernel_size},
                        {"stage_wise_pooling_type", (int)l.stage_pool},
                        {"num_heads", l.num_heads},
                        {"head_concat_type", (int)l.head_combine},
                        {"embedding_num", l.vocab_size},
                        {"max_sequence_length", l.max_seq_len},
                        {"grid_size", l.grid_size},
                        {"spline_order", l.spline_order},
                        {"initialization_type", (int)l.init}};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.type = (LayerType)j.at("layer_type").get<int>();
  l.bias = j.at("bias_type").get<int>() == (int)BiasOpt::on;
  l.norm = (NormKind)j.at("norm_type").get<int>();
  l.shortcut = j.at("shortcut_type").get<int>() == (int)ShortcutOpt::on;
  l.output_size = j.at("output_size").get<int>();
  l.input_size = j.at("input_size").get<int>();
  l.act = (Activation)j.at("activation_type").get<int>();
  l.act_param = j.at("activation_param").get<double>();
  l.dropout = j.at("dropout_rate").get<double>();
  l.pool_reshape = (PoolReshape)j.at("input_pooling_reshape_type").get<int>();
  l.groups = j.at("group_num").get<int>();
  l.kernel_size = j.at("kernel_size").get<int>();
  l.stage_pool = (StagePool)j.at("stage_wise_pooling_type").get<int>();
  l.num_heads = j.at("num_heads").get<int>();
  l.head_combine = (HeadCombine)j.at("head_concat_type").get<int>();
  l.vocab_size = j.at("embedding_num").get<int>();
  l.max_seq_len = j.at("max_sequence_length").get<int>();
  l.grid_size = j.at("grid_size").get<int>();
  l.spline_order = j.at("spline_order").get<int>();
  l.init = (InitMode)j.at("initialization_type").get<int>();
  return l;
}

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j{{"model_type", (int)spec.family},
                   {"cnn_stage_num", spec.cnn_stage_num},
                   {"num_encoders", spec.num_encoders},
                   {"num_index_freqs", spec.rec_index_freqs},
                   {"num_structure_freqs", spec.rec_structure_freqs},
                   {"rec_index_layers", spec.rec_index_layers},
                   {"rec_ts_layers", spec.rec_ts_layers}};
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) j["layers"].push_back(layer_to_json(l));
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.family = (ModelFamily)j.at("model_type").get<int>();
  spec.cnn_stage_num = j.at("cnn_stage_num").get<int>();
  spec.num_encoders = j.at("num_encoders").get<int>();
  spec.rec_index_freqs = j.at("num_index_freqs").get<int>();
  spec.rec_structure_freqs = j.at("num_structure_freqs").get<int>();
  spec.rec_index_layers = j.at("rec_index_layers").get<int>();
  spec.rec_ts_layers = j.at("rec_ts_layers").get<int>();
  for (const auto& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
  return spec;
}

inline std::uint64_t spec_hash(const ModelSpec& spec) {
  return fnv1a(spec_to_json(spec).dump());
}

}  // namespace uhn
