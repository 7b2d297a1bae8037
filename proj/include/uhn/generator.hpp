#pragma once

#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "uhn/archspec.hpp"
#include "uhn/descriptors.hpp"
#include "uhn/registry.hpp"
#include "uhn/rng.hpp"
#include "uhn/tensor.hpp"

// The generator itself: index branch (input linear + pre-activation residual
// blocks), optional task-structure encoder, fusion, readout. The generator's
// shape depends only on its own config, never on any target model; targets
// enter exclusively through the encoded descriptor queries.

namespace uhn {

struct UHNConfig {
  int f_v = 2048;   // index Fourier frequencies
  int f_u = 32;     // task-structure Fourier frequencies (tse)
  int d = 128;      // hidden width
  int n_blk = 2;    // residual blocks
  int heads = 4;    // tse attention heads
  double sigma = 100.0;
  bool use_tse = false;
  IndexEncoding encoding = IndexEncoding::gff;
  int pos_freqs = 32;  // positional-encoding variant
  long chunk = 16384;  // generation batch size

  int index_input_width() const {
    return encoded_width(encoding, kIndexFields, f_v, pos_freqs);
  }
  int token_width() const { return 2 * f_u; }
};

/// Reported parameter total: trainable tensors plus the frozen encoding state
/// (Fourier matrices / positional frequencies and the normalization bounds),
/// which is the accounting that reproduces the published totals.
inline long uhn_trainable_count(const UHNConfig& c) {
  long win = c.index_input_width();
  long n = (long)win * c.d + c.d;           // input linear
  n += (long)c.n_blk * 2 * (2 * c.d + (long)c.d * c.d + c.d);
  n += c.d + 1;                             // readout
  if (c.use_tse) {
    long tok = c.token_width();
    n += 4 * (tok * tok + tok);             // attention projections
    n += 2 * (tok * tok + tok);             // feed-forward
    n += 2 * (2 * tok);                     // two affine norms
    n += tok * c.d + c.d;                   // pooled mlp, first layer
    n += (long)c.d * c.d + c.d;             // pooled mlp, second layer
  }
  return n;
}

inline long uhn_frozen_count(const UHNConfig& c) {
  long n = 2 * kIndexFields;  // index normalization bounds
  switch (c.encoding) {
    case IndexEncoding::gff:
      n += (long)kIndexFields * c.f_v;
      break;
    case IndexEncoding::positional:
      n += c.pos_freqs;
      break;
    case IndexEncoding::raw:
      break;
  }
  if (c.use_tse) n += (long)kStructFields * c.f_u + 2 * kStructFields;
  return n;
}

inline long uhn_param_count(const UHNConfig& c) {
  return uhn_trainable_count(c) + uhn_frozen_count(c);
}

// ---------------------------------------------------------------------------
// parameters

template <class T>
struct UhnBlock {
  Tensor<T> ln1_g, ln1_b, w1, b1;
  Tensor<T> ln2_g, ln2_b, w2, b2;
};

template <class T>
struct TseParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // mlp_w2/mlp_b2 zero-initialized
};

template <class T>
struct UhnParams {
  UHNConfig config;
  Tensor<T> w_in, b_in;   // [win, d], [d]; generator weights are input-major
  std::vector<UhnBlock<T>> blocks;
  Tensor<T> w_out, b_out;  // [d, 1], [1]
  TseParams<T> tse;
  FourierMatrix b_v, b_u;  // frozen
  NormStats stats;         // frozen
  std::uint64_t reg_hash = 0;

  std::vector<Tensor<T>> leaves() const {
    std::vector<Tensor<T>> out{w_in, b_in};
    for (const auto& b : blocks)
      for (const auto& t : {b.ln1_g, b.ln1_b, b.w1, b.b1, b.ln2_g, b.ln2_b, b.w2, b.b2})
        out.push_back(t);
    out.push_back(w_out);
    out.push_back(b_out);
    if (config.use_tse) {
      for (const auto& t :
           {tse.wq, tse.bq, tse.wk, tse.bk, tse.wv, tse.bv, tse.wo, tse.bo, tse.ln1_g,
            tse.ln1_b, tse.ln2_g, tse.ln2_b, tse.ff_w1, tse.ff_b1, tse.ff_w2, tse.ff_b2,
            tse.mlp_w1, tse.mlp_b1, tse.mlp_w2, tse.mlp_b2})
        out.push_back(t);
    }
    return out;
  }

  long trainable_elements() const {
    long n = 0;
    for (const auto& t : leaves()) n += t.numel();
    return n;
  }
  long frozen_elements() const {
    long n = 2 * kIndexFields;
    if (config.encoding == IndexEncoding::gff) n += (long)b_v.m * b_v.n;
    if (config.encoding == IndexEncoding::positional) n += config.pos_freqs;
    if (config.use_tse) n += (long)b_u.m * b_u.n + 2 * kStructFields;
    return n;
  }
  long total_elements() const { return trainable_elements() + frozen_elements(); }
};

namespace detail {

template <class T>
Tensor<T> uniform_leaf(std::vector<int> shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = (T)u(rng);
  return make_tensor<T>(std::move(shape), std::move(v), true, true);
}

template <class T>
Tensor<T> const_leaf(std::vector<int> shape, T fill) {
  return make_tensor<T>(std::move(shape), std::vector<T>(shape_numel(shape), fill), true, true);
}

}  // namespace detail

/// Builds a generator with trainable tensors initialized uniform
/// +-1/sqrt(fan_in), affine norms at identity, and the task-structure
/// encoder's last linear exactly zero. Fourier matrices are drawn once from
/// the "fourier.*" streams and then frozen.
template <class T>
UhnParams<T> make_generator(const UHNConfig& cfg, const NormStats& stats,
                            std::uint64_t master_seed) {
  check(cfg.f_v >= 1 && cfg.d >= 1 && cfg.n_blk >= 0, "invalid generator config");
  if (cfg.use_tse)
    check(cfg.f_u >= 1 && cfg.heads >= 1 && (2 * cfg.f_u) % cfg.heads == 0,
          "tse: heads must divide the token width");
  UhnParams<T> p;
  p.config = cfg;
  p.stats = stats;
  p.reg_hash = registry_hash();
  auto frng = make_stream(master_seed, "fourier.index");
  p.b_v = FourierMatrix::sample(cfg.encoding == IndexEncoding::gff ? cfg.f_v : 0, kIndexFields,
                                cfg.sigma, frng);
  auto urng = make_stream(master_seed, "fourier.taskstruct");
  p.b_u = FourierMatrix::sample(cfg.use_tse ? cfg.f_u : 0, kStructFields, cfg.sigma, urng);

  auto rng = make_stream(master_seed, "generator.init");
  int win = cfg.index_input_width(), d = cfg.d;
  double bin = 1.0 / std::sqrt((double)win);
  p.w_in = detail::uniform_leaf<T>({win, d}, bin, rng);
  p.b_in = detail::uniform_leaf<T>({d}, bin, rng);
  double bd = 1.0 / std::sqrt((double)d);
  for (int i = 0; i < cfg.n_blk; ++i) {
    UhnBlock<T> b;
    b.ln1_g = detail::const_leaf<T>({d}, T(1));
    b.ln1_b = detail::const_leaf<T>({d}, T(0));
    b.w1 = detail::uniform_leaf<T>({d, d}, bd, rng);
    b.b1 = detail::uniform_leaf<T>({d}, bd, rng);
    b.ln2_g = detail::const_leaf<T>({d}, T(1));
    b.ln2_b = detail::const_leaf<T>({d}, T(0));
    b.w2 = detail::uniform_leaf<T>({d, d}, bd, rng);
    b.b2 = detail::uniform_leaf<T>({d}, bd, rng);
    p.blocks.push_back(b);
  }
  // The readout starts at a tenth of the conventional scale so freshly
  // generated weights sit below their target statistics; the initialization
  // phase then raises component sigmas within its movement budget
  // (S_init * eta_init per coordinate). A zero readout would kill the
  // std gradient outright.
  double bout = 0.1 * bd;
  p.w_out = detail::uniform_leaf<T>({d, 1}, bout, rng);
  p.b_out = detail::uniform_leaf<T>({1}, bout, rng);

  if (cfg.use_tse) {
    int tok = cfg.token_width();
    double bt = 1.0 / std::sqrt((double)tok);
    auto& t = p.tse;
    t.wq = detail::uniform_leaf<T>({tok, tok}, bt, rng);
    t.bq = detail::uniform_leaf<T>({tok}, bt, rng);
    t.wk = detail::uniform_leaf<T>({tok, tok}, bt, rng);
    t.bk = detail::uniform_leaf<T>({tok}, bt, rng);
    t.wv = detail::uniform_leaf<T>({tok, tok}, bt, rng);
    t.bv = detail::uniform_leaf<T>({tok}, bt, rng);
    t.wo = detail::uniform_leaf<T>({tok, tok}, bt, rng);
    t.bo = detail::uniform_leaf<T>({tok}, bt, rng);
    t.ln1_g = detail::const_leaf<T>({tok}, T(1));
    t.ln1_b = detail::const_leaf<T>({tok}, T(0));
    t.ln2_g = detail::const_leaf<T>({tok}, T(1));
    t.ln2_b = detail::const_leaf<T>({tok}, T(0));
    t.ff_w1 = detail::uniform_leaf<T>({tok, tok}, bt, rng);
    t.ff_b1 = detail::uniform_leaf<T>({tok}, bt, rng);
    t.ff_w2 = detail::uniform_leaf<T>({tok, tok}, bt, rng);
    t.ff_b2 = detail::uniform_leaf<T>({tok}, bt, rng);
    t.mlp_w1 = detail::uniform_leaf<T>({tok, d}, bt, rng);
    t.mlp_b1 = detail::uniform_leaf<T>({d}, bt, rng);
    t.mlp_w2 = detail::const_leaf<T>({d, d}, T(0));
    t.mlp_b2 = detail::const_leaf<T>({d}, T(0));
  }
  return p;
}

// ---------------------------------------------------------------------------
// encoding targets

/// Stage-1 output for one target: encoded index features for every parameter
/// plus (when the tse is enabled) encoded per-layer tokens. Pure function of
/// frozen state, so instances are cached per (spec, task).
template <class T>
struct TargetEncoding {
  long count = 0;
  int phi_width = 0;
  std::vector<T> phi;  // [count x phi_width]
  int token_count = 0;
  int token_width = 0;
  std::vector<T> psi;  // [token_count x token_width]
};

template <class T>
TargetEncoding<T> encode_target(const UhnParams<T>& p, const ModelSpec& spec,
                                const TaskDescriptor& task) {
  TargetEncoding<T> enc;
  auto rows = build_param_descriptors(spec);
  enc.count = (long)rows.size();
  enc.phi_width = p.config.index_input_width();
  enc.phi = encode_rows<T>(rows, p.stats.index, p.config.encoding, p.b_v, p.config.pos_freqs,
                           p.config.sigma);
  if (p.config.use_tse) {
    auto us = build_layer_descriptors(spec, task);
    enc.token_count = (int)us.size();
    enc.token_width = p.config.token_width();
    enc.psi = encode_rows<T>(us, p.stats.ustruct, IndexEncoding::gff, p.b_u, 0, 0.0);
  }
  return enc;
}

// ---------------------------------------------------------------------------
// forward

/// Index branch: input linear, then n_blk pre-activation residual blocks
/// x + Lin(LN(ReLU(Lin(LN(ReLU(x)))))), affine norms.
template <class T>
Tensor<T> index_branch(Tape<T>& tp, const UhnParams<T>& p, const Tensor<T>& phi) {
  check(phi.rank() == 2 && phi.dim(1) == p.config.index_input_width(),
        "index_branch: feature width ", phi.rank() == 2 ? phi.dim(1) : -1, " does not match ",
        p.config.index_input_width());
  auto h = add_rowvec(tp, matmul(tp, phi, p.w_in), p.b_in);
  for (const auto& b : p.blocks) {
    auto t = relu(tp, h);
    t = layer_norm(tp, t, b.ln1_g, b.ln1_b);
    t = add_rowvec(tp, matmul(tp, t, b.w1), b.b1);
    t = relu(tp, t);
    t = layer_norm(tp, t, b.ln2_g, b.ln2_b);
    t = add_rowvec(tp, matmul(tp, t, b.w2), b.b2);
    h = add(tp, h, t);
  }
  return h;
}

/// Task-structure encoder: single-layer transformer encoder over the per-layer
/// tokens (post-norm, relu feed-forward, no dropout), mean pooling, then the
/// 2-layer MLP whose final linear starts at zero.
template <class T>
Tensor<T> task_structure_feature(Tape<T>& tp, const UhnParams<T>& p, const Tensor<T>& psi) {
  check(p.config.use_tse, "task_structure_feature: encoder disabled in config");
  check(psi.rank() == 2 && psi.dim(1) == p.config.token_width(),
        "task_structure_feature: token width mismatch");
  int L = psi.dim(0), tok = p.config.token_width(), h = p.config.heads, dh = tok / h;
  const auto& t = p.tse;

  auto q = add_rowvec(tp, matmul(tp, psi, t.wq), t.bq);
  auto k = add_rowvec(tp, matmul(tp, psi, t.wk), t.bk);
  auto v = add_rowvec(tp, matmul(tp, psi, t.wv), t.bv);
  auto to_heads = [&](const Tensor<T>& x) {
    return permute(tp, reshape(tp, x, {L, h, dh}), {1, 0, 2});  // [h, L, dh]
  };
  auto qh = to_heads(q), kh = to_heads(k), vh = to_heads(v);
  auto scores = bmm(tp, qh, permute(tp, kh, {0, 2, 1}));
  scores = mul_scalar(tp, scores, (T)(1.0 / std::sqrt((double)dh)));
  auto att = bmm(tp, softmax_last(tp, scores), vh);                    // [h, L, dh]
  auto merged = reshape(tp, permute(tp, att, {1, 0, 2}), {L, tok});    // [L, tok]
  auto o = add_rowvec(tp, matmul(tp, merged, t.wo), t.bo);
  auto x1 = layer_norm(tp, add(tp, psi, o), t.ln1_g, t.ln1_b);
  auto ff = add_rowvec(tp, matmul(tp, relu(tp, add_rowvec(tp, matmul(tp, x1, t.ff_w1), t.ff_b1)),
                                  t.ff_w2),
                       t.ff_b2);
  auto x2 = layer_norm(tp, add(tp, x1, ff), t.ln2_g, t.ln2_b);

  auto pooled = reshape(tp, reduce_mean_axis(tp, x2, 0), {1, tok});
  auto hid = relu(tp, add_rowvec(tp, matmul(tp, pooled, t.mlp_w1), t.mlp_b1));
  auto feat = add_rowvec(tp, matmul(tp, hid, t.mlp_w2), t.mlp_b2);
  return reshape(tp, feat, {p.config.d});
}

/// Full generation: w_i = readout(ReLU(index_branch(phi_i) + tse_feature)),
/// evaluated in row chunks; the tse term is zero when disabled. Output order
/// matches the target's parameter layout.
template <class T>
Tensor<T> generate_weights(Tape<T>& tp, const UhnParams<T>& p, const TargetEncoding<T>& enc) {
  check(enc.count >= 1, "generate_weights: empty target");
  check(enc.phi_width == p.config.index_input_width(),
        "generate_weights: encoding built for a different config");
  Tensor<T> tse_feat;
  if (p.config.use_tse) {
    check(enc.token_count >= 1, "generate_weights: tse enabled but no tokens encoded");
    auto psi = tp.constant({enc.token_count, enc.token_width}, enc.psi);
    tse_feat = task_structure_feature(tp, p, psi);
  }
  long chunk = p.config.chunk > 0 ? p.config.chunk : enc.count;
  std::vector<Tensor<T>> pieces;
  for (long off = 0; off < enc.count; off += chunk) {
    long rows = std::min(chunk, enc.count - off);
    std::vector<T> block(enc.phi.begin() + off * enc.phi_width,
                         enc.phi.begin() + (off + rows) * enc.phi_width);
    auto phi = tp.constant({(int)rows, enc.phi_width}, std::move(block));
    auto h = index_branch(tp, p, phi);
    if (tse_feat.defined()) h = add_rowvec(tp, h, tse_feat);
    auto w = add_rowvec(tp, matmul(tp, relu(tp, h), p.w_out), p.b_out);
    pieces.push_back(reshape(tp, w, {(int)rows}));
  }
  return pieces.size() == 1 ? pieces[0] : concat_dim0(tp, pieces);
}

// ---------------------------------------------------------------------------
// checkpointing

namespace detail {

template <class T>
void collect_named(const UhnParams<T>& p, std::vector<std::pair<std::string, Tensor<T>>>& out) {
  out.push_back({"w_in", p.w_in});
  out.push_back({"b_in", p.b_in});
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& b = p.blocks[i];
    std::string pre = "block" + std::to_string(i) + ".";
    out.push_back({pre + "ln1_g", b.ln1_g});
    out.push_back({pre + "ln1_b", b.ln1_b});
    out.push_back({pre + "w1", b.w1});
    out.push_back({pre + "b1", b.b1});
    out.push_back({pre + "ln2_g", b.ln2_g});
    out.push_back({pre + "ln2_b", b.ln2_b});
    out.push_back({pre + "w2", b.w2});
    out.push_back({pre + "b2", b.b2});
  }
  out.push_back({"w_out", p.w_out});
  out.push_back({"b_out", p.b_out});
  if (p.config.use_tse) {
    const auto& t = p.tse;
    out.push_back({"tse.wq", t.wq});
    out.push_back({"tse.bq", t.bq});
    out.push_back({"tse.wk", t.wk});
    out.push_back({"tse.bk", t.bk});
    out.push_back({"tse.wv", t.wv});
    out.push_back({"tse.bv", t.bv});
    out.push_back({"tse.wo", t.wo});
    out.push_back({"tse.bo", t.bo});
    out.push_back({"tse.ln1_g", t.ln1_g});
    out.push_back({"tse.ln1_b", t.ln1_b});
    out.push_back({"tse.ln2_g", t.ln2_g});
    out.push_back({"tse.ln2_b", t.ln2_b});
    out.push_back({"tse.ff_w1", t.ff_w1});
    out.push_back({"tse.ff_b1", t.ff_b1});
    out.push_back({"tse.ff_w2", t.ff_w2});
    out.push_back({"tse.ff_b2", t.ff_b2});
    out.push_back({"tse.mlp_w1", t.mlp_w1});
    out.push_back({"tse.mlp_b1", t.mlp_b1});
    out.push_back({"tse.mlp_w2", t.mlp_w2});
    out.push_back({"tse.mlp_b2", t.mlp_b2});
  }
}

inline nlohmann::json config_to_json(const UHNConfig& c) {
  return {{"f_v", c.f_v},     {"f_u", c.f_u},
          {"d", c.d},         {"n_blk", c.n_blk},
          {"heads", c.heads}, {"sigma", c.sigma},
          {"use_tse", c.use_tse}, {"encoding", (int)c.encoding},
          {"pos_freqs", c.pos_freqs}, {"chunk", c.chunk}};
}

inline UHNConfig config_from_json(const nlohmann::json& j) {
  UHNConfig c;
  c.f_v = j.at("f_v").get<int>();
  c.f_u = j.at("f_u").get<int>();
  c.d = j.at("d").get<int>();
  c.n_blk = j.at("n_blk").get<int>();
  c.heads = j.at("heads").get<int>();
  c.sigma = j.at("sigma").get<double>();
  c.use_tse = j.at("use_tse").get<bool>();
  c.encoding = (IndexEncoding)j.at("encoding").get<int>();
  c.pos_freqs = j.at("pos_freqs").get<int>();
  c.chunk = j.at("chunk").get<long>();
  return c;
}

}  // namespace detail

inline constexpr const char* kCheckpointMagic = "UHNCKPT1";

/// Versioned binary container: magic, JSON header (schema, config, registry
/// hash, stats, frozen matrices, tensor manifest), then raw float64 payload.
template <class T>
void save_checkpoint(const UhnParams<T>& p, const std::string& path) {
  std::vector<std::pair<std::string, Tensor<T>>> named;
  detail::collect_named(p, named);
  nlohmann::json hdr;
  hdr["schema"] = "uhn.checkpoint.v1";
  hdr["registry_hash"] = p.reg_hash;
  hdr["config"] = detail::config_to_json(p.config);
  hdr["stats"] = {{"index_min", p.stats.index.mins},
                  {"index_max", p.stats.index.maxs},
                  {"ustruct_min", p.stats.ustruct.mins},
                  {"ustruct_max", p.stats.ustruct.maxs}};
  hdr["b_v"] = {{"m", p.b_v.m}, {"n", p.b_v.n}, {"data", p.b_v.b}};
  hdr["b_u"] = {{"m", p.b_u.m}, {"n", p.b_u.n}, {"data", p.b_u.b}};
  auto manifest = nlohmann::json::array();
  for (auto& [name, t] : named) manifest.push_back({{"name", name}, {"shape", t.shape()}});
  hdr["tensors"] = manifest;
  std::string hs = hdr.dump();

  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot write checkpoint: ", path);
  f.write(kCheckpointMagic, 8);
  std::uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(hs.data(), (std::streamsize)hs.size());
  for (auto& [name, t] : named) {
    for (T v : t.value()) {
      double d = (double)v;
      f.write(reinterpret_cast<const char*>(&d), 8);
    }
  }
  check(f.good(), "short write on checkpoint: ", path);
}

template <class T>
UhnParams<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot read checkpoint: ", path);
  char magic[8];
  f.read(magic, 8);
  check(f.good() && std::string(magic, 8) == kCheckpointMagic,
        "not a checkpoint file: ", path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  f.read(hs.data(), (std::streamsize)len);
  check(f.good(), "truncated checkpoint header: ", path);
  auto hdr = nlohmann::json::parse(hs);
  check(hdr.at("schema") == "uhn.checkpoint.v1", "unsupported checkpoint schema");

  UhnParams<T> p;
  p.config = detail::config_from_json(hdr.at("config"));
  p.reg_hash = hdr.at("registry_hash").get<std::uint64_t>();
  p.stats.index.mins = hdr.at("stats").at("index_min").get<std::vector<double>>();
  p.stats.index.maxs = hdr.at("stats").at("index_max").get<std::vector<double>>();
  p.stats.ustruct.mins = hdr.at("stats").at("ustruct_min").get<std::vector<double>>();
  p.stats.ustruct.maxs = hdr.at("stats").at("ustruct_max").get<std::vector<double>>();
  p.b_v.m = hdr.at("b_v").at("m").get<int>();
  p.b_v.n = hdr.at("b_v").at("n").get<int>();
  p.b_v.b = hdr.at("b_v").at("data").get<std::vector<double>>();
  p.b_u.m = hdr.at("b_u").at("m").get<int>();
  p.b_u.n = hdr.at("b_u").at("n").get<int>();
  p.b_u.b = hdr.at("b_u").at("data").get<std::vector<double>>();

  // materialize tensors with zeroed values, then fill from the payload
  auto fresh = make_generator<T>(p.config, p.stats, 0);
  p.w_in = fresh.w_in;
  p.b_in = fresh.b_in;
  p.blocks = fresh.blocks;
  p.w_out = fresh.w_out;
  p.b_out = fresh.b_out;
  p.tse = fresh.tse;
  std::vector<std::pair<std::string, Tensor<T>>> named;
  detail::collect_named(p, named);
  const auto& manifest = hdr.at("tensors");
  check(manifest.size() == named.size(), "checkpoint manifest size mismatch");
  for (size_t i = 0; i < named.size(); ++i) {
    check(manifest[i].at("name") == named[i].first, "checkpoint tensor order mismatch at ",
          named[i].first);
    auto shape = manifest[i].at("shape").get<std::vector<int>>();
    check(shape == named[i].second.shape(), "checkpoint shape mismatch at ", named[i].first);
    for (auto& v : named[i].second.value()) {
      double d;
      f.read(reinterpret_cast<char*>(&d), 8);
      v = (T)d;
    }
  }
  check(f.good(), "truncated checkpoint payload: ", path);
  return p;
}

}  // namespace uhn
