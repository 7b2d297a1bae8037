#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "uhn/archspec.hpp"
#include "uhn/common.hpp"
#include "uhn/registry.hpp"
#include "uhn/rng.hpp"

// Deterministic construction, normalization and encoding of the descriptors
// that carry all target specificity into the generator.
//
// Index descriptor (10 fields): layer_idx, layer_type, param_type, out_idx,
// in_idx, kernel_h_idx, kernel_w_idx, embedding_idx, sequence_idx, grid_idx.
// Inapplicable index fields are exactly -1.
//
// Per-layer task-structure descriptor u_j = [s_g(6); t(2); s_l(21)], 29
// fields; inapplicable structure fields are 0.

namespace uhn {

inline constexpr int kIndexFields = 10;
inline constexpr int kGlobalFields = 6;
inline constexpr int kTaskFields = 2;
inline constexpr int kLocalFields = 21;
inline constexpr int kStructFields = kGlobalFields + kTaskFields + kLocalFields;  // 29

using IndexDescriptor = std::array<double, kIndexFields>;
using StructDescriptor = std::array<double, kStructFields>;

struct TaskDescriptor {
  TaskType task = TaskType::image_classification;
  DatasetType dataset = DatasetType::none;
};

inline const std::array<const char*, kIndexFields>& index_field_names() {
  static const std::array<const char*, kIndexFields> names = {
      "v.layer_idx",     "v.layer_type",   "v.param_type",   "v.out_idx",
      "v.in_idx",        "v.kernel_h_idx", "v.kernel_w_idx", "v.embedding_idx",
      "v.sequence_idx",  "v.grid_idx"};
  return names;
}

inline const std::array<const char*, kStructFields>& struct_field_names() {
  static const std::array<const char*, kStructFields> names = {
      "sg.model_type",  "sg.num_layers",    "sg.cnn_stage_num",
      "sg.num_encoders", "sg.num_structure_freqs", "sg.num_index_freqs",
      "t.task_type",    "t.dataset_type",
      "sl.layer_idx",   "sl.layer_type",    "sl.bias_type",
      "sl.norm_type",   "sl.shortcut_type", "sl.output_size",
      "sl.input_size",  "sl.activation_type", "sl.activation_param",
      "sl.dropout_rate", "sl.input_pooling_reshape_type", "sl.group_num",
      "sl.kernel_size", "sl.stage_wise_pooling_type", "sl.num_heads",
      "sl.head_concat_type", "sl.embedding_num", "sl.max_sequence_length",
      "sl.grid_size",   "sl.spline_order",  "sl.initialization_type"};
  return names;
}

// ---------------------------------------------------------------------------
// index descriptors

namespace detail {

// Shared per-component enumeration: calls emit(fields...) with -1 defaults
// replaced per parameter kind. idx is the flat element index within the
// component, decomposed against the packed shape.
template <class Emit>
void enumerate_component(const LayoutEntry& e, const LayerSpec& l, int layer_idx, Emit&& emit) {
  auto base = [&](long out, long in, long kh, long kw, long embi, long seqi, long gridi) {
    IndexDescriptor d;
    d[0] = layer_idx;
    d[1] = (double)(int)l.type;
    d[2] = (double)(int)e.kind;
    d[3] = (double)out;
    d[4] = (double)in;
    d[5] = (double)kh;
    d[6] = (double)kw;
    d[7] = (double)embi;
    d[8] = (double)seqi;
    d[9] = (double)gridi;
    emit(d);
  };
  const auto& s = e.shape;
  switch (e.kind) {
    case ParamKind::weight:
      if (l.type == LayerType::conv) {
        for (long o = 0; o < s[0]; ++o)
          for (long i = 0; i < s[1]; ++i)
            for (long u = 0; u < s[2]; ++u)
              for (long v = 0; v < s[3]; ++v) base(o, i, u, v, -1, -1, -1);
      } else {
        for (long o = 0; o < s[0]; ++o)
          for (long i = 0; i < s[1]; ++i) base(o, i, -1, -1, -1, -1, -1);
      }
      break;
    case ParamKind::wq:
    case ParamKind::wk:
    case ParamKind::wv:
    case ParamKind::wo:
    case ParamKind::kan_base_w:
      for (long o = 0; o < s[0]; ++o)
        for (long i = 0; i < s[1]; ++i) base(o, i, -1, -1, -1, -1, -1);
      break;
    case ParamKind::bias:
    case ParamKind::bq:
    case ParamKind::bk:
    case ParamKind::bv:
    case ParamKind::bo:
    case ParamKind::kan_base_b:
      for (long o = 0; o < s[0]; ++o) base(o, -1, -1, -1, -1, -1, -1);
      break;
    case ParamKind::attn_src:
    case ParamKind::attn_dst:
      // packed (head, dim): out_idx is the within-head dim, in_idx the head
      for (long h = 0; h < s[0]; ++h)
        for (long j = 0; j < s[1]; ++j) base(j, h, -1, -1, -1, -1, -1);
      break;
    case ParamKind::emb_table:
      for (long tok = 0; tok < s[0]; ++tok)
        for (long dmn = 0; dmn < s[1]; ++dmn) base(dmn, -1, -1, -1, tok, -1, -1);
      break;
    case ParamKind::pos_table:
      for (long pos = 0; pos < s[0]; ++pos)
        for (long dmn = 0; dmn < s[1]; ++dmn) base(dmn, -1, -1, -1, -1, pos, -1);
      break;
    case ParamKind::kan_spline_w:
      for (long i = 0; i < s[0]; ++i)
        for (long g = 0; g < s[1]; ++g)
          for (long o = 0; o < s[2]; ++o) base(o, i, -1, -1, -1, -1, g);
      break;
    case ParamKind::kan_spline_s:
      for (long i = 0; i < s[0]; ++i)
        for (long o = 0; o < s[1]; ++o) base(o, i, -1, -1, -1, -1, -1);
      break;
    case ParamKind::kan_grid_min:
    case ParamKind::kan_grid_len:
      for (long i = 0; i < s[0]; ++i) base(-1, i, -1, -1, -1, -1, -1);
      break;
    case ParamKind::kan_knots:
      for (long i = 0; i < s[0]; ++i)
        for (long g = 0; g < s[1]; ++g) base(-1, i, -1, -1, -1, -1, g);
      break;
  }
}

}  // namespace detail

/// One index descriptor per parameter, in canonical packing order.
inline std::vector<IndexDescriptor> build_param_descriptors(const ModelSpec& spec) {
  auto lay = param_layout(spec);
  std::vector<IndexDescriptor> rows;
  rows.reserve(lay.total);
  for (const auto& e : lay.entries)
    detail::enumerate_component(e, spec.layers[e.layer_idx], e.layer_idx,
                                [&](const IndexDescriptor& d) { rows.push_back(d); });
  check((long)rows.size() == lay.total, "descriptor count ", rows.size(),
        " does not match layout total ", lay.total);
  return rows;
}

// ---------------------------------------------------------------------------
// structure / task descriptors

inline std::array<double, kGlobalFields> global_descriptor(const ModelSpec& spec) {
  return {(double)(int)spec.family, (double)spec.num_layers(), (double)spec.cnn_stage_num,
          (double)spec.num_encoders, (double)spec.rec_structure_freqs,
          (double)spec.rec_index_freqs};
}

inline std::array<double, kLocalFields> local_descriptor(const LayerSpec& l, int layer_idx) {
  std::array<double, kLocalFields> d{};
  d[0] = layer_idx;
  d[1] = (double)(int)l.type;
  bool has_bias_field = l.type != LayerType::embedding;
  bool has_norm = l.type == LayerType::linear || l.type == LayerType::conv ||
                  l.type == LayerType::gcn || l.type == LayerType::gat ||
                  l.type == LayerType::mha;
  bool has_shortcut = l.type == LayerType::linear || l.type == LayerType::conv ||
                      l.type == LayerType::mha;
  bool has_act = l.type != LayerType::embedding;
  bool has_dropout = l.type != LayerType::kan;
  if (has_bias_field) d[2] = (double)(l.bias ? (int)BiasOpt::on : (int)BiasOpt::off);
  if (has_norm) d[3] = (double)(int)l.norm;
  if (has_shortcut) d[4] = (double)(l.shortcut ? (int)ShortcutOpt::on : (int)ShortcutOpt::off);
  d[5] = l.output_size;
  if (l.type != LayerType::embedding) d[6] = l.input_size;
  if (has_act) {
    d[7] = (double)(int)l.act;
    d[8] = l.act_param;
  }
  if (has_dropout) d[9] = l.dropout;
  if (l.type == LayerType::linear) d[10] = (double)(int)l.pool_reshape;
  if (l.type == LayerType::conv) {
    d[11] = l.groups;
    d[12] = l.kernel_size;
    d[13] = (double)(int)l.stage_pool;
  }
  if (l.type == LayerType::gat || l.type == LayerType::mha) d[14] = l.num_heads;
  if (l.type == LayerType::gat) d[15] = (double)(int)l.head_combine;
  if (l.type == LayerType::embedding) {
    d[16] = l.vocab_size;
    d[17] = l.max_seq_len;
  }
  if (l.type == LayerType::kan) {
    d[18] = l.grid_size;
    d[19] = l.spline_order;
  }
  d[20] = (double)(int)l.init;
  return d;
}

/// Per-layer task-structure descriptors u_j = [s_g; t; s_l,j], j = 1..L.
inline std::vector<StructDescriptor> build_layer_descriptors(const ModelSpec& spec,
                                                             const TaskDescriptor& task) {
  check(!spec.layers.empty(), "build_layer_descriptors: spec has no layers");
  auto sg = global_descriptor(spec);
  std::vector<StructDescriptor> rows(spec.num_layers());
  for (int j = 0; j < spec.num_layers(); ++j) {
    auto sl = local_descriptor(spec.layers[j], j);
    StructDescriptor& u = rows[j];
    for (int i = 0; i < kGlobalFields; ++i) u[i] = sg[i];
    u[kGlobalFields] = (double)(int)task.task;
    u[kGlobalFields + 1] = (double)(int)task.dataset;
    for (int i = 0; i < kLocalFields; ++i) u[kGlobalFields + kTaskFields + i] = sl[i];
  }
  return rows;
}

// ---------------------------------------------------------------------------
// normalization

/// Per-field bounds; mu = (min+max)/2, sigma = (max-min)/(2*sqrt 3), which
/// standardizes a uniform distribution on [min, max]. Degenerate fields
/// (max == min) normalize to 0.
struct NormalizationStats {
  std::vector<double> mins, maxs;

  int dim() const { return (int)mins.size(); }
  double mu(int i) const { return 0.5 * (mins[i] + maxs[i]); }
  double sigma(int i) const { return (maxs[i] - mins[i]) / (2.0 * std::sqrt(3.0)); }

  void expand(const double* row, int n) {
    if (mins.empty()) {
      mins.assign(row, row + n);
      maxs.assign(row, row + n);
      return;
    }
    check(n == dim(), "stats: field count mismatch");
    for (int i = 0; i < n; ++i) {
      mins[i] = std::min(mins[i], row[i]);
      maxs[i] = std::max(maxs[i], row[i]);
    }
  }
};

inline std::vector<double> normalize(const std::vector<double>& x, const NormalizationStats& st) {
  check((int)x.size() == st.dim(), "normalize: dimension mismatch (", x.size(), " vs ",
        st.dim(), ")");
  std::vector<double> out(x.size());
  for (int i = 0; i < st.dim(); ++i) {
    double s = st.sigma(i);
    out[i] = s == 0.0 ? 0.0 : (x[i] - st.mu(i)) / s;
  }
  return out;
}

/// Analytic per-field index bounds of one model, without materializing the
/// table; matches build_param_descriptors row-for-row extremes.
inline void expand_index_bounds(const ModelSpec& spec, NormalizationStats& st) {
  if (st.mins.empty()) {
    st.mins.assign(kIndexFields, 0.0);
    st.maxs.assign(kIndexFields, 0.0);
    st.mins.assign(kIndexFields, std::numeric_limits<double>::infinity());
    st.maxs.assign(kIndexFields, -std::numeric_limits<double>::infinity());
  }
  auto lay = param_layout(spec);
  for (const auto& e : lay.entries) {
    const auto& l = spec.layers[e.layer_idx];
    double lo[kIndexFields], hi[kIndexFields];
    for (int i = 0; i < kIndexFields; ++i) lo[i] = hi[i] = -1.0;
    lo[0] = hi[0] = e.layer_idx;
    lo[1] = hi[1] = (double)(int)l.type;
    lo[2] = hi[2] = (double)(int)e.kind;
    auto span = [&](int f, long extent) {
      lo[f] = 0;
      hi[f] = (double)(extent - 1);
    };
    const auto& s = e.shape;
    switch (e.kind) {
      case ParamKind::weight:
        span(3, s[0]);
        span(4, s[1]);
        if (l.type == LayerType::conv) {
          span(5, s[2]);
          span(6, s[3]);
        }
        break;
      case ParamKind::wq:
      case ParamKind::wk:
      case ParamKind::wv:
      case ParamKind::wo:
      case ParamKind::kan_base_w:
        span(3, s[0]);
        span(4, s[1]);
        break;
      case ParamKind::bias:
      case ParamKind::bq:
      case ParamKind::bk:
      case ParamKind::bv:
      case ParamKind::bo:
      case ParamKind::kan_base_b:
        span(3, s[0]);
        break;
      case ParamKind::attn_src:
      case ParamKind::attn_dst:
        span(3, s[1]);
        span(4, s[0]);
        break;
      case ParamKind::emb_table:
        span(3, s[1]);
        span(7, s[0]);
        break;
      case ParamKind::pos_table:
        span(3, s[1]);
        span(8, s[0]);
        break;
      case ParamKind::kan_spline_w:
        span(3, s[2]);
        span(4, s[0]);
        span(9, s[1]);
        break;
      case ParamKind::kan_spline_s:
        span(3, s[1]);
        span(4, s[0]);
        break;
      case ParamKind::kan_grid_min:
      case ParamKind::kan_grid_len:
        span(4, s[0]);
        break;
      case ParamKind::kan_knots:
        span(4, s[0]);
        span(9, s[1]);
        break;
    }
    st.expand(lo, kIndexFields);
    st.expand(hi, kIndexFields);
  }
}

struct NormStats {
  NormalizationStats index;    // 10 fields
  NormalizationStats ustruct;  // 29 fields
};

/// Static bounds over the configured target set; computed once before a run
/// and persisted with it. Recursive chains reuse the same stats at every
/// level, so callers pass every level's (spec, task) pair here.
inline NormStats estimate_norm_stats(
    const std::vector<std::pair<ModelSpec, TaskDescriptor>>& targets) {
  check(!targets.empty(), "estimate_norm_stats: no targets");
  NormStats st;
  for (const auto& [spec, task] : targets) {
    expand_index_bounds(spec, st.index);
    for (const auto& u : build_layer_descriptors(spec, task))
      st.ustruct.expand(u.data(), kStructFields);
  }
  return st;
}

inline void write_norm_stats(const NormStats& st, const std::string& path) {
  nlohmann::json j;
  auto block = [](const NormalizationStats& s, const char* const* names) {
    nlohmann::json arr = nlohmann::json::array();
    for (int i = 0; i < s.dim(); ++i)
      arr.push_back({{"name", names[i]}, {"min", s.mins[i]}, {"max", s.maxs[i]}});
    return arr;
  };
  j["index"] = block(st.index, index_field_names().data());
  j["taskstruct"] = block(st.ustruct, struct_field_names().data());
  std::ofstream f(path);
  check(f.good(), "cannot write stats file: ", path);
  f << j.dump(2) << "\n";
}

inline NormStats load_norm_stats(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot read stats file: ", path);
  nlohmann::json j;
  f >> j;
  NormStats st;
  auto block = [](const nlohmann::json& arr, NormalizationStats& s) {
    for (const auto& e : arr) {
      s.mins.push_back(e.at("min").get<double>());
      s.maxs.push_back(e.at("max").get<double>());
    }
  };
  block(j.at("index"), st.index);
  block(j.at("taskstruct"), st.ustruct);
  return st;
}

// ---------------------------------------------------------------------------
// encodings

/// Frozen Gaussian random matrix for the Fourier feature map; entries are
/// drawn N(0, sigma^2) once at construction and serialized with checkpoints.
struct FourierMatrix {
  int m = 0, n = 0;
  std::vector<double> b;  // row-major [m x n]

  static FourierMatrix sample(int m, int n, double sigma, std::mt19937_64& rng) {
    FourierMatrix fm;
    fm.m = m;
    fm.n = n;
    fm.b.resize((long)m * n);
    std::normal_distribution<double> nd(0.0, sigma);
    for (auto& v : fm.b) v = nd(rng);
    return fm;
  }
};

/// gamma_B(x) = [cos(Bx); sin(Bx)], length 2m.
inline std::vector<double> fourier_map(const std::vector<double>& xhat, const FourierMatrix& B) {
  check((int)xhat.size() == B.n, "fourier_map: expected ", B.n, " dims, got ", xhat.size());
  std::vector<double> out(2 * B.m);
  for (int f = 0; f < B.m; ++f) {
    double acc = 0;
    const double* row = B.b.data() + (long)f * B.n;
    for (int i = 0; i < B.n; ++i) acc += row[i] * xhat[i];
    out[f] = std::cos(acc);
    out[B.m + f] = std::sin(acc);
  }
  return out;
}

/// Positional encoding: concatenation over j of [cos(w_j x); sin(w_j x)]
/// with w_j = scale^(j/n_freqs). Length 2 * n_freqs * dim(x).
inline std::vector<double> positional_map(const std::vector<double>& xhat, int n_freqs,
                                          double scale) {
  check(n_freqs >= 1, "positional_map: n_freqs >= 1 required");
  check(scale > 0, "positional_map: scale must be positive");
  int d = (int)xhat.size();
  std::vector<double> out(2 * (long)n_freqs * d);
  for (int j = 0; j < n_freqs; ++j) {
    double w = std::pow(scale, (double)j / (double)n_freqs);
    for (int i = 0; i < d; ++i) {
      out[(2 * j) * d + i] = std::cos(w * xhat[i]);
      out[(2 * j + 1) * d + i] = std::sin(w * xhat[i]);
    }
  }
  return out;
}

inline std::vector<double> raw_map(const std::vector<double>& xhat) { return xhat; }

enum class IndexEncoding { gff, positional, raw };

inline int encoded_width(IndexEncoding enc, int fields, int gff_freqs, int pos_freqs) {
  switch (enc) {
    case IndexEncoding::gff:
      return 2 * gff_freqs;
    case IndexEncoding::positional:
      return 2 * pos_freqs * fields;
    case IndexEncoding::raw:
      return fields;
  }
  fail("unknown encoding");
}

/// Normalizes and encodes a block of descriptor rows into a [rows x width]
/// feature matrix (cast to the run scalar type). Pure and deterministic;
/// features of frozen descriptors never carry gradients.
template <class T, class Row>
std::vector<T> encode_rows(const std::vector<Row>& rows, const NormalizationStats& st,
                           IndexEncoding enc, const FourierMatrix& B, int pos_freqs,
                           double pos_scale) {
  int nf = st.dim();
  std::vector<double> mu(nf), sg(nf);
  for (int i = 0; i < nf; ++i) {
    mu[i] = st.mu(i);
    sg[i] = st.sigma(i);
  }
  std::vector<double> xhat(nf);
  long width = encoded_width(enc, nf, B.m, pos_freqs);
  std::vector<T> out((long)rows.size() * width);
  for (size_t r = 0; r < rows.size(); ++r) {
    check((int)rows[r].size() == nf, "encode_rows: descriptor width mismatch");
    for (int i = 0; i < nf; ++i)
      xhat[i] = sg[i] == 0.0 ? 0.0 : (rows[r][i] - mu[i]) / sg[i];
    T* dst = out.data() + r * width;
    switch (enc) {
      case IndexEncoding::gff: {
        check(B.n == nf, "encode_rows: fourier matrix width mismatch");
        for (int f = 0; f < B.m; ++f) {
          double acc = 0;
          const double* row = B.b.data() + (long)f * B.n;
          for (int i = 0; i < nf; ++i) acc += row[i] * xhat[i];
          dst[f] = (T)std::cos(acc);
          dst[B.m + f] = (T)std::sin(acc);
        }
        break;
      }
      case IndexEncoding::positional: {
        for (int j = 0; j < pos_freqs; ++j) {
          double w = std::pow(pos_scale, (double)j / (double)pos_freqs);
          for (int i = 0; i < nf; ++i) {
            dst[(2 * j) * nf + i] = (T)std::cos(w * xhat[i]);
            dst[(2 * j + 1) * nf + i] = (T)std::sin(w * xhat[i]);
          }
        }
        break;
      }
      case IndexEncoding::raw: {
        for (int i = 0; i < nf; ++i) dst[i] = (T)xhat[i];
        break;
      }
    }
  }
  return out;
}

}  // namespace uhn
