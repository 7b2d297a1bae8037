#pragma once

#include <cmath>

#include "uhn/archspec.hpp"
#include "uhn/tensor.hpp"

// Statistics-matching initialization: per-component target moments mirroring
// the common library defaults, and the loss that drives generated components
// toward them.

namespace uhn {

struct InitTarget {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Target (mu*, sigma*) for one component of one layer. Zero mode forces
/// (0, 0) for every component.
inline InitTarget target_statistics(const LayerSpec& l, ParamKind kind) {
  if (l.init == InitMode::zero) return {0.0, 0.0};
  auto uniform_fan = [](double fan) { return 1.0 / std::sqrt(3.0 * fan); };
  switch (l.type) {
    case LayerType::linear:
      if (kind == ParamKind::weight || kind == ParamKind::bias)
        return {0.0, uniform_fan(l.input_size)};
      break;
    case LayerType::conv:
      if (kind == ParamKind::weight || kind == ParamKind::bias)
        return {0.0, uniform_fan((double)l.input_size * l.kernel_size * l.kernel_size)};
      break;
    case LayerType::gcn:
      if (kind == ParamKind::weight)
        return {0.0, std::sqrt(2.0 / (l.input_size + l.output_size))};
      if (kind == ParamKind::bias) return {0.0, 0.0};
      break;
    case LayerType::gat: {
      int dh = l.gat_head_dim(), h = l.num_heads;
      if (kind == ParamKind::weight)
        return {0.0, std::sqrt(2.0 / (l.input_size + (double)h * dh))};
      if (kind == ParamKind::bias) return {0.0, 0.0};
      if (kind == ParamKind::attn_src || kind == ParamKind::attn_dst)
        return {0.0, std::sqrt(2.0 / (dh + (double)h))};
      break;
    }
    case LayerType::embedding:
      if (kind == ParamKind::emb_table) return {0.0, 1.0};
      if (kind == ParamKind::pos_table) return {0.0, 0.0};
      break;
    case LayerType::mha: {
      int d = l.output_size;
      if (kind == ParamKind::wq || kind == ParamKind::wk || kind == ParamKind::wv)
        return {0.0, std::sqrt(1.0 / d)};
      if (kind == ParamKind::wo) return {0.0, uniform_fan(d)};
      if (kind == ParamKind::bq || kind == ParamKind::bk || kind == ParamKind::bv ||
          kind == ParamKind::bo)
        return {0.0, 0.0};
      break;
    }
    case LayerType::kan:
      if (kind == ParamKind::kan_base_w || kind == ParamKind::kan_spline_s)
        return {0.0, uniform_fan(l.input_size)};
      if (kind == ParamKind::kan_base_b) return {0.0, 0.0};
      if (kind == ParamKind::kan_spline_w) return {0.0, 0.1};
      if (kind == ParamKind::kan_grid_min) return {-1.0, 0.0};
      if (kind == ParamKind::kan_grid_len) return {std::log(2.0), 0.0};
      if (kind == ParamKind::kan_knots) return {0.0, 0.0};
      break;
  }
  fail("target_statistics: component ", (int)kind, " does not belong to layer type ",
       (int)l.type);
}

/// L = 1/(2|G|) sum_g [(mu(g)-mu*)^2 + (sigma(g)-sigma*)^2] over the layout's
/// components, with population standard deviations (a single-element
/// component has sigma identically 0).
template <class T>
Tensor<T> init_loss(Tape<T>& tp, const Tensor<T>& w, const ParamLayout& layout,
                    const ModelSpec& spec) {
  check(!layout.entries.empty(), "init_loss: empty layout");
  check(w.numel() == layout.total, "init_loss: weight vector size mismatch");
  Tensor<T> acc;
  for (const auto& e : layout.entries) {
    check(e.count >= 1, "init_loss: empty component in layout");
    auto tgt = target_statistics(spec.layers[e.layer_idx], e.kind);
    auto comp = slice_flat(tp, w, e.offset, e.count);
    auto dmu = add_scalar(tp, mean_all(tp, comp), (T)-tgt.mu);
    auto dsd = add_scalar(tp, std_all(tp, comp), (T)-tgt.sigma);
    auto term = add(tp, mul(tp, dmu, dmu), mul(tp, dsd, dsd));
    acc = acc.defined() ? add(tp, acc, term) : term;
  }
  return mul_scalar(tp, acc, (T)(0.5 / layout.entries.size()));
}

/// Active level of the top-down schedule: k = min(K, floor(step / s_lvl)).
inline int active_init_level(long step, long s_lvl, int k_max) {
  check(s_lvl >= 1, "active_init_level: s_lvl >= 1 required");
  check(step >= 0, "active_init_level: step >= 0 required");
  long k = step / s_lvl;
  return (int)std::min<long>(k_max, k);
}

}  // namespace uhn
