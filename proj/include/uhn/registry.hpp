#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "uhn/common.hpp"

// Versioned registry of categorical descriptor values. Every categorical
// attribute that can appear in a descriptor is mapped to a stable integer ID.
// IDs start at 1 within each namespace: structure descriptors use 0 for
// inapplicable fields, so no categorical value may collide with it.
// The registry hash is recorded in run artifacts and checkpoints.

namespace uhn {

inline constexpr const char* kRegistryVersion = "uhn-registry-v1";

enum class LayerType : int { linear = 1, conv = 2, gcn = 3, gat = 4, embedding = 5, mha = 6, kan = 7 };

enum class ParamKind : int {
  weight = 1,
  bias = 2,
  attn_src = 3,
  attn_dst = 4,
  emb_table = 5,
  pos_table = 6,
  wq = 7,
  wk = 8,
  wv = 9,
  bq = 10,
  bk = 11,
  bv = 12,
  wo = 13,
  bo = 14,
  kan_base_w = 15,
  kan_base_b = 16,
  kan_spline_w = 17,
  kan_spline_s = 18,
  kan_grid_min = 19,
  kan_grid_len = 20,
  kan_knots = 21,
};

enum class ModelFamily : int { mlp_cnn = 1, gcn = 2, gat = 3, transformer = 4, kan = 5, recursive_uhn = 6 };

enum class Activation : int { none = 1, relu = 2, leaky_relu = 3, elu = 4, silu = 5 };

enum class BiasOpt : int { off = 1, on = 2 };

enum class NormKind : int { none = 1, layer_norm = 2, group_norm = 3 };

enum class ShortcutOpt : int { off = 1, on = 2 };

enum class PoolReshape : int { none = 1, flatten = 2, adaptive_avg = 3, seq_mean = 4, first_token = 5 };

enum class StagePool : int { none = 1, avg = 2, max = 3, stride2 = 4 };

enum class HeadCombine : int { concat = 1, average = 2 };

enum class InitMode : int { standard = 1, zero = 2 };

enum class TaskType : int {
  image_classification = 1,
  graph_classification = 2,
  text_classification = 3,
  formula_regression = 4,
  recursive = 5,
};

enum class DatasetType : int {
  none = 1,
  mnist = 2,
  cifar10 = 3,
  cora = 4,
  citeseer = 5,
  pubmed = 6,
  agnews = 7,
  imdb = 8,
  formula_constant = 9,
  formula_legendre = 10,
  formula_rational = 11,
  formula_harmonic = 12,
  synth_image = 13,
  synth_text = 14,
  synth_graph = 15,
  recursive_uhn = 16,
};

struct RegistryRecord {
  std::string ns;
  std::string name;
  int id;
};

inline const std::vector<RegistryRecord>& registry_records() {
  static const std::vector<RegistryRecord> recs = {
      {"layer_type", "linear", 1},
      {"layer_type", "conv", 2},
      {"layer_type", "gcn", 3},
      {"layer_type", "gat", 4},
      {"layer_type", "embedding", 5},
      {"layer_type", "mha", 6},
      {"layer_type", "kan", 7},
      {"param_type", "weight", 1},
      {"param_type", "bias", 2},
      {"param_type", "attn_src", 3},
      {"param_type", "attn_dst", 4},
      {"param_type", "emb_table", 5},
      {"param_type", "pos_table", 6},
      {"param_type", "wq", 7},
      {"param_type", "wk", 8},
      {"param_type", "wv", 9},
      {"param_type", "bq", 10},
      {"param_type", "bk", 11},
      {"param_type", "bv", 12},
      {"param_type", "wo", 13},
      {"param_type", "bo", 14},
      {"param_type", "kan_base_w", 15},
      {"param_type", "kan_base_b", 16},
      {"param_type", "kan_spline_w", 17},
      {"param_type", "kan_spline_s", 18},
      {"param_type", "kan_grid_min", 19},
      {"param_type", "kan_grid_len", 20},
      {"param_type", "kan_knots", 21},
      {"model_type", "mlp_cnn", 1},
      {"model_type", "gcn", 2},
      {"model_type", "gat", 3},
      {"model_type", "transformer", 4},
      {"model_type", "kan", 5},
      {"model_type", "recursive_uhn", 6},
      {"activation_type", "none", 1},
      {"activation_type", "relu", 2},
      {"activation_type", "leaky_relu", 3},
      {"activation_type", "elu", 4},
      {"activation_type", "silu", 5},
      {"bias_type", "off", 1},
      {"bias_type", "on", 2},
      {"norm_type", "none", 1},
      {"norm_type", "layer_norm", 2},
      {"norm_type", "group_norm", 3},
      {"shortcut_type", "off", 1},
      {"shortcut_type", "on", 2},
      {"pool_reshape_type", "none", 1},
      {"pool_reshape_type", "flatten", 2},
      {"pool_reshape_type", "adaptive_avg", 3},
      {"pool_reshape_type", "seq_mean", 4},
      {"pool_reshape_type", "first_token", 5},
      {"stage_pool_type", "none", 1},
      {"stage_pool_type", "avg", 2},
      {"stage_pool_type", "max", 3},
      {"stage_pool_type", "stride2", 4},
      {"head_combine_type", "concat", 1},
      {"head_combine_type", "average", 2},
      {"init_type", "standard", 1},
      {"init_type", "zero", 2},
      {"task_type", "image_classification", 1},
      {"task_type", "graph_classification", 2},
      {"task_type", "text_classification", 3},
      {"task_type", "formula_regression", 4},
      {"task_type", "recursive", 5},
      {"dataset_type", "none", 1},
      {"dataset_type", "mnist", 2},
      {"dataset_type", "cifar10", 3},
      {"dataset_type", "cora", 4},
      {"dataset_type", "citeseer", 5},
      {"dataset_type", "pubmed", 6},
      {"dataset_type", "agnews", 7},
      {"dataset_type", "imdb", 8},
      {"dataset_type", "formula_constant", 9},
      {"dataset_type", "formula_legendre", 10},
      {"dataset_type", "formula_rational", 11},
      {"dataset_type", "formula_harmonic", 12},
      {"dataset_type", "synth_image", 13},
      {"dataset_type", "synth_text", 14},
      {"dataset_type", "synth_graph", 15},
      {"dataset_type", "recursive_uhn", 16},
  };
  return recs;
}

inline std::string registry_text() {
  std::string s = std::string(kRegistryVersion) + "\n";
  for (const auto& r : registry_records())
    s += r.ns + " " + r.name + " " + std::to_string(r.id) + "\n";
  return s;
}

inline std::uint64_t registry_hash() { return fnv1a(registry_text()); }

inline void write_registry(const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "cannot open registry file for writing: ", path);
  f << registry_text();
}

inline int registry_lookup(const std::string& ns, const std::string& name) {
  for (const auto& r : registry_records())
    if (r.ns == ns && r.name == name) return r.id;
  fail("registry: unknown value ", ns, ":", name);
}

}  // namespace uhn
