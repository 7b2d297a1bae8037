#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "uhn/executors.hpp"
#include "uhn/generator.hpp"
#include "uhn/initstats.hpp"
#include "uhn/rng.hpp"

// Training, initialization and recursive-chain machinery: AdamW, the cosine
// schedule with linear warmup, task sampling, and the per-step loop that
// differentiates task losses through the whole generation path.

namespace uhn {

// ---------------------------------------------------------------------------
// schedule and optimizer

/// Linear warmup 0 -> eta over `warmup` steps, then cosine decay to ~0 at
/// `total`.
inline double lr_at_step(long step, long total, long warmup, double eta) {
  check(step >= 0 && step < total, "lr_at_step: step out of range");
  check(warmup >= 0 && warmup < total, "lr_at_step: warmup must be < total");
  if (warmup > 0 && step < warmup) return eta * (double)step / (double)warmup;
  double progress = total == warmup ? 0.0 : (double)(step - warmup) / (double)(total - warmup);
  return eta * 0.5 * (1.0 + std::cos(M_PI * progress));
}

/// AdamW with decoupled weight decay fixed at zero.
template <class T>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  std::vector<Tensor<T>> params;
  std::vector<std::vector<double>> m, v;
  long t = 0;

  explicit AdamW(std::vector<Tensor<T>> ps) : params(std::move(ps)) { reset(); }

  void reset() {
    t = 0;
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].numel(), 0.0);
      v[i].assign(params[i].numel(), 0.0);
    }
  }

  void step(double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, (double)t);
    double bc2 = 1.0 - std::pow(beta2, (double)t);
    for (size_t i = 0; i < params.size(); ++i) {
      auto& val = params[i].value();
      const auto& g = params[i].grad();
      check(g.size() == val.size(), "AdamW: missing gradient for parameter ", i);
      for (size_t j = 0; j < val.size(); ++j) {
        double gj = (double)g[j];
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
        double update = (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
        val[j] = (T)((double)val[j] - lr * update - lr * weight_decay * (double)val[j]);
      }
    }
  }
};

template <class T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double s = 0;
  for (const auto& p : params)
    for (T g : p.grad()) s += (double)g * (double)g;
  return std::sqrt(s);
}

/// Scales all gradients so the global norm is at most max_norm; returns the
/// pre-clip norm.
template <class T>
double clip_gradients(const std::vector<Tensor<T>>& params, double max_norm) {
  double n = global_grad_norm(params);
  if (max_norm > 0 && n > max_norm) {
    double s = max_norm / n;
    for (const auto& p : params)
      for (T& g : p.grad()) g = (T)((double)g * s);
  }
  return n;
}

// ---------------------------------------------------------------------------
// task sampling

inline void validate_task_probs(const std::vector<double>& probs) {
  double s = 0;
  for (double p : probs) {
    check(p >= 0.0, "task probability must be nonnegative");
    s += p;
  }
  check(std::abs(s - 1.0) <= 1e-9, "task probabilities sum to ", s, ", expected 1");
}

inline int sample_task(const std::vector<double>& probs, std::mt19937_64& rng) {
  validate_task_probs(probs);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng), acc = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (x < acc) return (int)i;
  }
  return (int)probs.size() - 1;
}

// ---------------------------------------------------------------------------
// batches and tasks

/// One minibatch of leaf-task data in plain buffers; tensors are materialized
/// on the step's tape.
struct Batch {
  std::vector<double> dense;
  std::vector<int> dense_shape;
  std::vector<int> tokens;
  int batch = 0, seq = 0;
  const GraphContext* graph = nullptr;
  std::vector<int> eval_index;  // rows that carry labels (graph splits); empty = all
  std::vector<int> labels;      // classification
  std::vector<double> targets;  // regression
  std::vector<int> target_shape;
  bool regression = false;
};

/// An ordered recursion prefix H_1..H_K; the leaf model is supplied by the
/// task. Empty levels mean direct generation.
struct ChainSpec {
  std::vector<ModelSpec> levels;
  int depth() const { return (int)levels.size(); }
};

inline const TaskDescriptor kRecursiveTask{TaskType::recursive, DatasetType::recursive_uhn};

template <class T>
struct TrainTask {
  std::string name;
  TaskDescriptor desc;
  double prob = 1.0;
  bool regression = false;
  std::vector<ModelSpec> specs;  // architecture distribution (uniform)
  ChainSpec chain;
  std::function<Batch(std::mt19937_64&)> next_batch;
};

// ---------------------------------------------------------------------------
// encoding cache

/// Descriptor tables and stage-1 features are pure functions of (spec, task,
/// frozen generator state); they are computed once per distinct pair.
template <class T>
class EncodingCache {
 public:
  const TargetEncoding<T>& get(const UhnParams<T>& root, const ModelSpec& spec,
                               const TaskDescriptor& task) {
    std::uint64_t key = spec_hash(spec) ^ (0x9E3779B97F4A7C15ULL * (std::uint64_t)(int)task.task) ^
                        (0xC2B2AE3D27D4EB4FULL * (std::uint64_t)(int)task.dataset);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto [ins, ok] = cache_.emplace(key, encode_target(root, spec, task));
    return ins->second;
  }
  size_t size() const { return cache_.size(); }

 private:
  std::unordered_map<std::uint64_t, TargetEncoding<T>> cache_;
};

// ---------------------------------------------------------------------------
// chain generation (inference pseudocode)

/// Runs levels 0..upto of the chain H_0 -> ... -> H_K -> f and returns the
/// output of level `upto`: parameters of H_(upto+1), or the leaf weights when
/// upto == depth. upto == -1 means the full chain.
template <class T>
Tensor<T> generate_chain(Tape<T>& tp, const UhnParams<T>& root, const ChainSpec& chain,
                         const ModelSpec& leaf, const TaskDescriptor& leaf_task,
                         EncodingCache<T>& cache, const EvalMode& mode, int upto = -1) {
  int k_max = chain.depth();
  if (upto < 0) upto = k_max;
  check(upto <= k_max, "generate_chain: level ", upto, " exceeds chain depth ", k_max);
  if (k_max > 0)
    check(root.config.use_tse, "generate_chain: recursive chains require the task-structure encoder");

  auto target_at = [&](int k) -> const ModelSpec& { return k < k_max ? chain.levels[k] : leaf; };
  auto task_at = [&](int k) { return k < k_max ? kRecursiveTask : leaf_task; };

  Tensor<T> w;
  for (int k = 0; k <= upto; ++k) {
    const ModelSpec& target = target_at(k);
    const auto& enc = cache.get(root, target, task_at(k));
    if (k == 0) {
      w = generate_weights(tp, root, enc);
    } else {
      const ModelSpec& gen_spec = target_at(k - 1);
      auto lay = param_layout(gen_spec);
      check(w.numel() == lay.total, "generate_chain: level ", k, " parameter size ",
            w.numel(), " does not match layout ", lay.total);
      w = generated_uhn_forward(tp, gen_spec, lay, w, enc, mode);
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// losses over batches

template <class T>
Tensor<T> batch_loss(Tape<T>& tp, const ModelSpec& spec, const ParamLayout& lay,
                     const Tensor<T>& w, const Batch& b, const EvalMode& mode) {
  ModelInput<T> in;
  if (!b.dense.empty()) {
    std::vector<T> dv(b.dense.begin(), b.dense.end());
    in.dense = tp.constant(b.dense_shape, std::move(dv));
  }
  in.tokens = b.tokens;
  in.batch = b.batch;
  in.seq = b.seq;
  in.graph = b.graph;
  auto out = model_forward(tp, spec, lay, w, in, mode);
  if (!b.eval_index.empty()) out = gather_rows(tp, out, b.eval_index);
  if (b.regression) {
    std::vector<T> tv(b.targets.begin(), b.targets.end());
    return mse_loss(tp, out, tp.constant(b.target_shape, std::move(tv)));
  }
  return cross_entropy(tp, out, b.labels);
}

/// Classification accuracy of a fixed weight vector on one batch.
template <class T>
double evaluate_accuracy(const ModelSpec& spec, const ParamLayout& lay,
                         const std::vector<T>& w, const Batch& b) {
  Tape<T> tp;
  EvalMode ev;
  ModelInput<T> in;
  if (!b.dense.empty()) {
    std::vector<T> dv(b.dense.begin(), b.dense.end());
    in.dense = tp.constant(b.dense_shape, std::move(dv));
  }
  in.tokens = b.tokens;
  in.batch = b.batch;
  in.seq = b.seq;
  in.graph = b.graph;
  auto out = model_forward(tp, spec, lay, tp.constant({(int)w.size()}, w), in, ev);
  if (!b.eval_index.empty()) out = gather_rows(tp, out, b.eval_index);
  long n = out.dim(0), c = out.dim(1);
  check((long)b.labels.size() == n, "evaluate_accuracy: label count mismatch");
  long hits = 0;
  for (long i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (out.value()[i * c + j] > out.value()[i * c + best]) best = j;
    if (best == b.labels[i]) ++hits;
  }
  return (double)hits / (double)n;
}

template <class T>
double evaluate_rmse(const ModelSpec& spec, const ParamLayout& lay, const std::vector<T>& w,
                     const Batch& b) {
  Tape<T> tp;
  EvalMode ev;
  ModelInput<T> in;
  std::vector<T> dv(b.dense.begin(), b.dense.end());
  in.dense = tp.constant(b.dense_shape, std::move(dv));
  auto out = model_forward(tp, spec, lay, tp.constant({(int)w.size()}, w), in, ev);
  check(out.numel() == (long)b.targets.size(), "evaluate_rmse: target size mismatch");
  double s = 0;
  for (long i = 0; i < out.numel(); ++i) {
    double d = (double)out.value()[i] - b.targets[i];
    s += d * d;
  }
  return std::sqrt(s / out.numel());
}

/// One full-chain generation with gradients discarded; returns the leaf
/// weight values.
template <class T>
std::vector<T> generated_leaf_values(const UhnParams<T>& root, const ChainSpec& chain,
                                     const ModelSpec& leaf, const TaskDescriptor& task,
                                     EncodingCache<T>& cache) {
  Tape<T> tp;
  EvalMode ev;
  auto w = generate_chain(tp, root, chain, leaf, task, cache, ev);
  return w.value();
}

// ---------------------------------------------------------------------------
// metrics log

/// Append-only CSV: step, level, task, loss, lr, grad_norm, wall_time.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) : t0_(std::chrono::steady_clock::now()) {
    if (path.empty()) return;
    f_.open(path);
    check(f_.good(), "cannot open metrics log: ", path);
    f_ << "step,level,task,loss,lr,grad_norm,wall_time\n";
  }
  void row(long step, int level, const std::string& task, double loss, double lr,
           double grad_norm) {
    if (!f_.is_open()) return;
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ld,%d,%s,%.17g,%.17g,%.17g,%.6f\n", step, level,
                  task.c_str(), loss, lr, grad_norm, wall);
    f_ << buf;
  }
  void flush() {
    if (f_.is_open()) f_.flush();
  }

 private:
  std::ofstream f_;
  std::chrono::steady_clock::time_point t0_;
};

// ---------------------------------------------------------------------------
// phases

struct InitPhaseConfig {
  long steps = 0;   // S_init; 0 is a no-op
  long s_lvl = 0;   // per-level budget; 0 means all steps on one level
  double eta = 2e-4;
  long warmup = 0;  // per level
  double clip_norm = 0.0;  // recursive runs use 0.01
  // per-level rates for recursive runs, as fractions of eta (levels 0..3)
  std::vector<double> level_scale = {0.2, 0.2, 0.1, 0.025};
};

struct TrainPhaseConfig {
  long steps = 0;
  double eta = 1e-4;
  long warmup = 0;
  double clip_norm = 0.0;
  std::string checkpoint_path;  // last-good checkpoint on divergence
  long log_every = 1;
};

namespace detail {

template <class T>
int sample_spec_index(const TrainTask<T>& task, std::mt19937_64& rng) {
  check(!task.specs.empty(), "task ", task.name, " has no architectures");
  if (task.specs.size() == 1) return 0;
  return (int)std::uniform_int_distribution<size_t>(0, task.specs.size() - 1)(rng);
}

}  // namespace detail

/// Initialization phase (top-down over recursion levels). Optimizer and
/// scheduler are reset at every level boundary; level r of a depth-K chain
/// optimizes the statistics of the level-r output only.
template <class T>
void run_initialization(UhnParams<T>& root, const std::vector<TrainTask<T>>& tasks,
                        const InitPhaseConfig& cfg, std::uint64_t master_seed,
                        EncodingCache<T>& cache, MetricsLog* log = nullptr) {
  if (cfg.steps <= 0) return;
  std::vector<double> probs;
  for (const auto& t : tasks) probs.push_back(t.prob);
  validate_task_probs(probs);
  long s_lvl = cfg.s_lvl > 0 ? cfg.s_lvl : cfg.steps;

  auto task_rng = make_stream(master_seed, "init.task");
  auto arch_rng = make_stream(master_seed, "init.arch");
  AdamW<T> opt(root.leaves());

  for (long step = 0; step < cfg.steps; ++step) {
    if (step % s_lvl == 0) opt.reset();
    const auto& task = tasks[sample_task(probs, task_rng)];
    const auto& leaf = task.specs[detail::sample_spec_index(task, arch_rng)];
    int k_chain = task.chain.depth();
    int r = active_init_level(step, s_lvl, k_chain);

    double scale = 1.0;
    if (k_chain >= 1) {
      int idx = std::min<int>(r, (int)cfg.level_scale.size() - 1);
      scale = cfg.level_scale[idx];
    }
    double lr = scale * lr_at_step(step % s_lvl, s_lvl, std::min(cfg.warmup, s_lvl - 1), cfg.eta);

    Tape<T> tp;
    for (auto& p : root.leaves()) tp.watch(p);
    EvalMode mode;  // no dropout during initialization
    auto w = generate_chain(tp, root, task.chain, leaf, task.desc, cache, mode, r);
    const ModelSpec& target = r < k_chain ? task.chain.levels[r] : leaf;
    auto lay = param_layout(target);
    auto loss = init_loss(tp, w, lay, target);
    double lv = (double)loss.scalar_value();
    check(std::isfinite(lv), "initialization diverged at step ", step, " (loss ", lv, ")");
    tp.backward(loss);
    double gn = clip_gradients(opt.params, cfg.clip_norm);
    opt.step(lr);
    if (log && step % 1 == 0) log->row(step, r, task.name, lv, lr, gn);
  }
  if (log) log->flush();
}

/// Main training phase. Each step samples a task and an architecture,
/// generates the leaf through the task's chain, evaluates the task loss on a
/// minibatch and updates the root parameters.
template <class T>
void run_training(UhnParams<T>& root, const std::vector<TrainTask<T>>& tasks,
                  const TrainPhaseConfig& cfg, std::uint64_t master_seed,
                  EncodingCache<T>& cache, MetricsLog* log = nullptr) {
  if (cfg.steps <= 0) return;
  std::vector<double> probs;
  for (const auto& t : tasks) probs.push_back(t.prob);
  validate_task_probs(probs);

  auto task_rng = make_stream(master_seed, "train.task");
  auto arch_rng = make_stream(master_seed, "train.arch");
  auto data_rng = make_stream(master_seed, "train.data");
  std::uint64_t dropout_base = stream_seed(master_seed, "train.dropout");
  AdamW<T> opt(root.leaves());

  for (long step = 0; step < cfg.steps; ++step) {
    const auto& task = tasks[sample_task(probs, task_rng)];
    const auto& leaf = task.specs[detail::sample_spec_index(task, arch_rng)];
    auto batch = task.next_batch(data_rng);
    double lr = lr_at_step(step, cfg.steps, cfg.warmup, cfg.eta);

    Tape<T> tp;
    for (auto& p : root.leaves()) tp.watch(p);
    EvalMode mode;
    mode.train = true;
    mode.dropout_seed = splitmix64(dropout_base + (std::uint64_t)step);
    auto w = generate_chain(tp, root, task.chain, leaf, task.desc, cache, mode);
    auto lay = param_layout(leaf);
    auto loss = batch_loss(tp, leaf, lay, w, batch, mode);
    double lv = (double)loss.scalar_value();
    if (!std::isfinite(lv)) {
      if (!cfg.checkpoint_path.empty()) save_checkpoint(root, cfg.checkpoint_path);
      fail("training diverged at step ", step, " on task ", task.name, " (loss ", lv,
           "); last-good checkpoint ",
           cfg.checkpoint_path.empty() ? "not requested" : cfg.checkpoint_path);
    }
    tp.backward(loss);
    double gn = clip_gradients(opt.params, cfg.clip_norm);
    opt.step(lr);
    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      log->row(step, task.chain.depth(), task.name, lv, lr, gn);
  }
  if (log) log->flush();
}

// ---------------------------------------------------------------------------
// direct-training baseline

/// Samples base-model weights from the per-component target statistics
/// (uniform for fan-based targets, normal for the embedding/spline tables,
/// constants for deterministic components).
template <class T>
std::vector<T> init_direct_weights(const ModelSpec& spec, const ParamLayout& lay,
                                   std::mt19937_64& rng) {
  std::vector<T> w(lay.total);
  for (const auto& e : lay.entries) {
    auto tgt = target_statistics(spec.layers[e.layer_idx], e.kind);
    bool gaussian = e.kind == ParamKind::emb_table || e.kind == ParamKind::kan_spline_w;
    if (tgt.sigma == 0.0) {
      for (long i = 0; i < e.count; ++i) w[e.offset + i] = (T)tgt.mu;
    } else if (gaussian) {
      std::normal_distribution<double> nd(tgt.mu, tgt.sigma);
      for (long i = 0; i < e.count; ++i) w[e.offset + i] = (T)nd(rng);
    } else {
      double half = std::sqrt(3.0) * tgt.sigma;
      std::uniform_real_distribution<double> u(tgt.mu - half, tgt.mu + half);
      for (long i = 0; i < e.count; ++i) w[e.offset + i] = (T)u(rng);
    }
  }
  return w;
}

/// End-to-end training of one base model under the same optimizer/schedule.
/// Returns the trained flat weight vector.
template <class T>
std::vector<T> direct_train(const ModelSpec& spec, const TrainTask<T>& task,
                            const TrainPhaseConfig& cfg, std::uint64_t master_seed,
                            MetricsLog* log = nullptr) {
  auto lay = param_layout(spec);
  auto init_rng = make_stream(master_seed, "direct.init");
  auto w = make_tensor<T>({(int)lay.total}, init_direct_weights<T>(spec, lay, init_rng), true,
                          true);
  auto data_rng = make_stream(master_seed, "direct.data");
  std::uint64_t dropout_base = stream_seed(master_seed, "direct.dropout");
  AdamW<T> opt({w});
  for (long step = 0; step < cfg.steps; ++step) {
    auto batch = task.next_batch(data_rng);
    double lr = lr_at_step(step, cfg.steps, cfg.warmup, cfg.eta);
    Tape<T> tp;
    tp.watch(w);
    EvalMode mode;
    mode.train = true;
    mode.dropout_seed = splitmix64(dropout_base + (std::uint64_t)step);
    auto loss = batch_loss(tp, spec, lay, w, batch, mode);
    double lv = (double)loss.scalar_value();
    check(std::isfinite(lv), "direct training diverged at step ", step);
    tp.backward(loss);
    double gn = clip_gradients(opt.params, cfg.clip_norm);
    opt.step(lr);
    if (log && step % cfg.log_every == 0) log->row(step, 0, task.name, lv, lr, gn);
  }
  if (log) log->flush();
  return w.value();
}

}  // namespace uhn
