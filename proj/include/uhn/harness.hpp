#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uhn/datasets.hpp"
#include "uhn/reference_models.hpp"
#include "uhn/trainer.hpp"

// Experiment definitions: configuration schema, target/dataset resolution,
// per-kind orchestration and artifact emission. Every artifact directory is
// self-describing (resolved config, registry, normalization stats, metrics,
// checkpoints, summary).

namespace uhn {

struct ExperimentConfig {
  std::string kind = "single_model";  // single_model|multi_model|multi_task|recursive|ablation
  UHNConfig uhn;
  std::string target = "mlp:784,128,128,10";
  std::string dataset = "synth_image";
  std::string data_dir = "data";
  std::string out_dir = "runs/exp";

  long s_init = 0, s_lvl = 0;
  double eta_init = 2e-4;
  long init_warmup = 0;
  long s_train = 0;
  double eta_train = 1e-4;
  long warmup = 0;
  double clip_norm = 0.0;
  int batch = 256;
  int recursion_depth = 0;

  int n_train = 6000, n_test = 1000;  // desk-scale dataset sizes
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string precision = "f64";
  bool direct_baseline = false;
  double direct_eta = 0.01;

  // multi-model family settings
  std::string family = "cnn_mixed_width";
  int family_size = 12;
  SplitSizes splits{8, 4, 2, 4};
  bool desk_family = true;  // desk-scale width/depth ranges
  long log_every = 1;
};

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["kind"] = c.kind;
  j["uhn"] = {{"f_v", c.uhn.f_v},     {"f_u", c.uhn.f_u},
              {"d", c.uhn.d},         {"n_blk", c.uhn.n_blk},
              {"heads", c.uhn.heads}, {"sigma", c.uhn.sigma},
              {"use_tse", c.uhn.use_tse}, {"encoding", (int)c.uhn.encoding},
              {"pos_freqs", c.uhn.pos_freqs}, {"chunk", c.uhn.chunk}};
  j["target"] = c.target;
  j["dataset"] = c.dataset;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["s_init"] = c.s_init;
  j["s_lvl"] = c.s_lvl;
  j["eta_init"] = c.eta_init;
  j["init_warmup"] = c.init_warmup;
  j["s_train"] = c.s_train;
  j["eta_train"] = c.eta_train;
  j["warmup"] = c.warmup;
  j["clip_norm"] = c.clip_norm;
  j["batch"] = c.batch;
  j["recursion_depth"] = c.recursion_depth;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["seeds"] = c.seeds;
  j["precision"] = c.precision;
  j["direct_baseline"] = c.direct_baseline;
  j["direct_eta"] = c.direct_eta;
  j["family"] = c.family;
  j["family_size"] = c.family_size;
  j["splits"] = {c.splits.train, c.splits.test, c.splits.val, c.splits.holdin};
  j["desk_family"] = c.desk_family;
  j["log_every"] = c.log_every;
  j["registry_hash"] = registry_hash();
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.kind = j.value("kind", c.kind);
  if (j.contains("uhn")) {
    const auto& u = j.at("uhn");
    c.uhn.f_v = u.value("f_v", c.uhn.f_v);
    c.uhn.f_u = u.value("f_u", c.uhn.f_u);
    c.uhn.d = u.value("d", c.uhn.d);
    c.uhn.n_blk = u.value("n_blk", c.uhn.n_blk);
    c.uhn.heads = u.value("heads", c.uhn.heads);
    c.uhn.sigma = u.value("sigma", c.uhn.sigma);
    c.uhn.use_tse = u.value("use_tse", c.uhn.use_tse);
    c.uhn.encoding = (IndexEncoding)u.value("encoding", (int)c.uhn.encoding);
    c.uhn.pos_freqs = u.value("pos_freqs", c.uhn.pos_freqs);
    c.uhn.chunk = u.value("chunk", c.uhn.chunk);
  }
  c.target = j.value("target", c.target);
  c.dataset = j.value("dataset", c.dataset);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.s_init = j.value("s_init", c.s_init);
  c.s_lvl = j.value("s_lvl", c.s_lvl);
  c.eta_init = j.value("eta_init", c.eta_init);
  c.init_warmup = j.value("init_warmup", c.init_warmup);
  c.s_train = j.value("s_train", c.s_train);
  c.eta_train = j.value("eta_train", c.eta_train);
  c.warmup = j.value("warmup", c.warmup);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.batch = j.value("batch", c.batch);
  c.recursion_depth = j.value("recursion_depth", c.recursion_depth);
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.precision = j.value("precision", c.precision);
  c.direct_baseline = j.value("direct_baseline", c.direct_baseline);
  c.direct_eta = j.value("direct_eta", c.direct_eta);
  c.family = j.value("family", c.family);
  c.family_size = j.value("family_size", c.family_size);
  if (j.contains("splits")) {
    auto s = j.at("splits").get<std::vector<int>>();
    check(s.size() == 4, "splits must be [train, test, val, holdin]");
    c.splits = {s[0], s[1], s[2], s[3]};
  }
  c.desk_family = j.value("desk_family", c.desk_family);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot read config: ", path);
  nlohmann::json j;
  f >> j;
  return experiment_from_json(j);
}

/// Artifact root: relative out_dir values are placed under $UHN_ARTIFACT_ROOT
/// when it is set.
inline std::string resolve_out_dir(const std::string& out_dir) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("UHN_ARTIFACT_ROOT");
  if (root && *root && fs::path(out_dir).is_relative())
    return (fs::path(root) / out_dir).string();
  return out_dir;
}

// ---------------------------------------------------------------------------
// target resolution

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace detail

/// Accepts reference names (mlp_mnist, cnn8, cnn20, gcn_cora, gat_pubmed,
/// transformer_agnews, kan_g5, ...), compact constructors
/// ("mlp:784,128,128,10", "cnn:1,2,2,2|16,16,32,64|1|10", "kan:2,5,1|5|3",
/// "gcn:f,h,c", "gat:f,heads,dh,outheads,c", "transformer:V,d,T,enc,ff,heads,c"),
/// or "file:<spec.json>".
inline ModelSpec resolve_target(const std::string& name) {
  if (name == "mlp_mnist") return ref::mlp_mnist();
  if (name == "cnn8") return ref::cnn8_mnist();
  if (name == "cnn20") return ref::cnn20_cifar();
  if (name == "gcn_cora") return ref::gcn_cora();
  if (name == "gcn_citeseer") return ref::gcn_citeseer();
  if (name == "gcn_pubmed") return ref::gcn_pubmed();
  if (name == "gat_cora") return ref::gat_cora();
  if (name == "gat_citeseer") return ref::gat_citeseer();
  if (name == "gat_pubmed") return ref::gat_pubmed();
  if (name == "transformer_agnews") return ref::transformer2l_agnews();
  if (name == "transformer_imdb") return ref::transformer1l_imdb();
  if (name == "kan_g5") return ref::kan_g5();
  if (name == "kan_g10") return ref::kan_g10();
  auto colon = name.find(':');
  check(colon != std::string::npos, "unknown target: ", name);
  auto head = name.substr(0, colon), rest = name.substr(colon + 1);
  if (head == "file") {
    std::ifstream f(rest);
    check(f.good(), "cannot read spec file: ", rest);
    nlohmann::json j;
    f >> j;
    return spec_from_json(j);
  }
  if (head == "mlp") {
    auto dims = detail::parse_int_list(rest);
    check(dims.size() >= 2, "mlp target needs at least in,out");
    std::vector<int> hidden(dims.begin() + 1, dims.end() - 1);
    return make_mlp(dims.front(), hidden, dims.back());
  }
  if (head == "kan") {
    std::istringstream is(rest);
    std::string dims, g, p;
    std::getline(is, dims, '|');
    std::getline(is, g, '|');
    std::getline(is, p, '|');
    return make_kan(detail::parse_int_list(dims), std::stoi(g), std::stoi(p));
  }
  if (head == "cnn") {
    std::istringstream is(rest);
    std::string depths, widths, in_ch, classes;
    std::getline(is, depths, '|');
    std::getline(is, widths, '|');
    std::getline(is, in_ch, '|');
    std::getline(is, classes, '|');
    return make_cnn(detail::parse_int_list(depths), detail::parse_int_list(widths),
                    std::stoi(in_ch), std::stoi(classes));
  }
  if (head == "gcn") {
    auto v = detail::parse_int_list(rest);
    check(v.size() == 3, "gcn target needs f,h,c");
    return make_gcn(v[0], v[1], v[2]);
  }
  if (head == "gat") {
    auto v = detail::parse_int_list(rest);
    check(v.size() == 5, "gat target needs f,heads,dh,outheads,c");
    return make_gat(v[0], v[1], v[2], v[3], v[4]);
  }
  if (head == "transformer") {
    auto v = detail::parse_int_list(rest);
    check(v.size() == 7, "transformer target needs V,d,T,enc,ff,heads,c");
    return make_transformer(v[0], v[1], v[2], v[3], std::vector<int>(v[3], v[4]), v[5], v[6]);
  }
  fail("unknown target: ", name);
}

// ---------------------------------------------------------------------------
// dataset resolution

template <class T>
struct ResolvedTask {
  TrainTask<T> task;
  // evaluation closures over the held-out split
  std::function<double(const std::vector<T>&, const ModelSpec&)> eval_metric;
  std::string metric_name = "accuracy";
};

namespace detail {

inline bool spec_wants_images(const ModelSpec& spec) {
  return spec.layers.front().type == LayerType::conv;
}

}  // namespace detail

/// Builds the training task + evaluation closure for (dataset, target).
/// Dataset handles are owned by the returned closures.
template <class T>
ResolvedTask<T> resolve_task(const ExperimentConfig& cfg, const ModelSpec& spec,
                             std::uint64_t data_seed) {
  ResolvedTask<T> r;
  const std::string& d = cfg.dataset;
  if (d == "synth_image" || d.rfind("idx:", 0) == 0) {
    std::string dir = d == "synth_image" ? cfg.data_dir + "/synth_image" : d.substr(4);
    if (d == "synth_image") {
      namespace fs = std::filesystem;
      if (!fs::exists(dir + "/train-images-idx3-ubyte"))
        write_synthetic_image_idx(dir, cfg.n_train, cfg.n_test, 20240901);
    }
    auto train = std::make_shared<ImageDataset>(load_mnist_idx(
        dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", cfg.n_train));
    auto test = std::make_shared<ImageDataset>(load_mnist_idx(
        dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", cfg.n_test));
    bool img = detail::spec_wants_images(spec);
    auto batcher = std::make_shared<ImageBatcher>();
    batcher->ds = train.get();
    batcher->batch = cfg.batch;
    batcher->as_image = img;
    r.task.name = d == "synth_image" ? "synth_image" : "idx_image";
    r.task.desc = {TaskType::image_classification,
                   d == "synth_image" ? DatasetType::synth_image : DatasetType::mnist};
    r.task.next_batch = [train, batcher](std::mt19937_64& rng) { return batcher->sample(rng); };
    r.eval_metric = [test, img](const std::vector<T>& w, const ModelSpec& s) {
      ImageBatcher eb{test.get(), 0, img};
      return evaluate_accuracy(s, param_layout(s), w, eb.full());
    };
    (void)data_seed;
  } else if (d.rfind("formula:", 0) == 0) {
    auto id = formula_from_name(d.substr(8));
    auto ds = std::make_shared<FormulaDataset>(
        make_formula_dataset(id, cfg.n_train > 1000 ? 1000 : cfg.n_train,
                             cfg.n_test > 1000 ? 1000 : cfg.n_test, data_seed));
    r.task.name = d.substr(8);
    r.task.desc = {TaskType::formula_regression, formula_dataset_type(id)};
    r.task.regression = true;
    r.task.next_batch = [ds](std::mt19937_64&) { return ds->train; };  // full batch
    r.eval_metric = [ds](const std::vector<T>& w, const ModelSpec& s) {
      return evaluate_rmse(s, param_layout(s), w, ds->test);
    };
    r.metric_name = "rmse";
  } else if (d == "synth_graph" || d.rfind("graph:", 0) == 0) {
    std::shared_ptr<GraphDataset> g;
    if (d == "synth_graph") {
      std::string dir = cfg.data_dir + "/synth_graph";
      namespace fs = std::filesystem;
      if (!fs::exists(dir + "/edges.txt")) write_toy_graph(dir, 45, 3, 20240902);
      g = std::make_shared<GraphDataset>(load_edge_list_graph(
          dir + "/edges.txt", dir + "/features.txt", dir + "/labels.txt", dir + "/splits.txt"));
    } else {
      std::string dir = d.substr(6);
      g = std::make_shared<GraphDataset>(load_edge_list_graph(
          dir + "/edges.txt", dir + "/features.txt", dir + "/labels.txt", dir + "/splits.txt"));
    }
    r.task.name = "graph";
    r.task.desc = {TaskType::graph_classification, DatasetType::synth_graph};
    auto train_batch = std::make_shared<Batch>(g->batch_for(g->train_idx));
    r.task.next_batch = [g, train_batch](std::mt19937_64&) { return *train_batch; };
    r.eval_metric = [g](const std::vector<T>& w, const ModelSpec& s) {
      return evaluate_accuracy(s, param_layout(s), w, g->batch_for(g->test_idx));
    };
  } else if (d == "synth_text") {
    auto ds = std::make_shared<TextDataset>(
        make_synthetic_text(std::min(cfg.n_train, 4000), std::min(cfg.n_test, 1000), 64, 16, 4,
                            20240903));
    r.task.name = "synth_text";
    r.task.desc = {TaskType::text_classification, DatasetType::synth_text};
    int batch = cfg.batch;
    r.task.next_batch = [ds, batch](std::mt19937_64& rng) { return ds->sample(rng, batch); };
    r.eval_metric = [ds](const std::vector<T>& w, const ModelSpec& s) {
      return evaluate_accuracy(s, param_layout(s), w, ds->full_test());
    };
  } else {
    fail("unknown dataset: ", d);
  }
  r.task.specs = {spec};
  return r;
}

// ---------------------------------------------------------------------------
// counts report

inline std::string report_counts(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "generator parameters (config): " << uhn_param_count(cfg.uhn) << "\n";
  UHNConfig ref_small;
  ref_small.f_v = 1024;
  ref_small.d = 64;
  UHNConfig ref_big;
  UHNConfig ref_tse = ref_big;
  ref_tse.use_tse = true;
  os << "reference generators: (1024,64,2) " << uhn_param_count(ref_small) << ", (2048,128,2) "
     << uhn_param_count(ref_big) << ", tse " << uhn_param_count(ref_tse) << "\n";
  os << "targets:\n";
  const std::pair<const char*, ModelSpec> targets[] = {
      {"mlp_mnist", ref::mlp_mnist()},          {"cnn8_mnist", ref::cnn8_mnist()},
      {"cnn20_cifar", ref::cnn20_cifar()},      {"gcn_cora", ref::gcn_cora()},
      {"gat_cora", ref::gat_cora()},            {"gcn_citeseer", ref::gcn_citeseer()},
      {"gat_citeseer", ref::gat_citeseer()},    {"gcn_pubmed", ref::gcn_pubmed()},
      {"gat_pubmed", ref::gat_pubmed()},        {"transformer_agnews", ref::transformer2l_agnews()},
      {"transformer_imdb", ref::transformer1l_imdb()}, {"kan_g5", ref::kan_g5()},
      {"kan_g10", ref::kan_g10()}};
  for (const auto& [name, spec] : targets)
    os << "  " << name << ": " << param_layout(spec).total << "\n";
  auto resolved = resolve_target(cfg.target);
  long n = param_layout(resolved).total;
  os << "configured target " << cfg.target << ": " << n << "\n";
  long c = 1;
  for (long k = (long)std::sqrt((double)n); k >= 1; --k)
    if (n % k == 0) {
      c = k;
      break;
    }
  os << "chunked baseline (o=100, d_emb=64, N_H0=10000): c=1 -> "
     << chunked_baseline_count(n, 1, 64, 100, 10000) << ", c=" << c << " -> "
     << chunked_baseline_count(n, c, 64, 100, 10000) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// experiment driver

struct SummaryWriter {
  std::ofstream f;
  explicit SummaryWriter(const std::string& path) {
    f.open(path);
    check(f.good(), "cannot write summary: ", path);
    f << "seed,split,task,metric,value\n";
  }
  void row(std::uint64_t seed, const std::string& split, const std::string& task,
           const std::string& metric, double value) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%llu,%s,%s,%s,%.17g\n", (unsigned long long)seed,
                  split.c_str(), task.c_str(), metric.c_str(), value);
    f << buf;
  }
};

namespace detail {

inline void write_run_preamble(const ExperimentConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream cj(dir + "/config.json");
  cj << experiment_to_json(cfg).dump(2) << "\n";
  write_registry(dir + "/registry.txt");
}

template <class T>
struct SeedRun {
  UhnParams<T> params;
  EncodingCache<T> cache;
};

/// Desk family parameters for the multi-model experiments: small widths over
/// single-layer stages on one-channel images.
inline CnnFamilyParams desk_cnn_family() {
  CnnFamilyParams p;
  p.fixed_depths = {1, 1, 1, 1};
  p.width0_lo = 8;
  p.width0_hi = 16;
  p.width2_lo = 16;
  p.width2_hi = 24;
  p.width3_lo = 24;
  p.width3_hi = 32;
  p.in_channels = 1;
  p.classes = 10;
  return p;
}

}  // namespace detail

template <class T>
void run_experiment_impl(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  std::string dir = resolve_out_dir(cfg.out_dir);
  detail::write_run_preamble(cfg, dir);
  SummaryWriter summary(dir + "/summary.csv");

  const bool recursive = cfg.kind == "recursive" && cfg.recursion_depth > 0;
  const bool multi_model = cfg.kind == "multi_model";

  for (std::uint64_t seed : cfg.seeds) {
    std::string sdir = dir + "/seed" + std::to_string(seed);
    fs::create_directories(sdir);

    // resolve targets
    std::vector<ModelSpec> specs;
    ModelSet model_set;
    if (multi_model) {
      auto arch_rng = make_stream(seed, "family");
      std::vector<ModelSpec> m;
      auto params = detail::desk_cnn_family();
      FamilyKind fam = cfg.family == "cnn_mixed_depth" ? FamilyKind::cnn_mixed_depth
                       : cfg.family == "cnn_mixed_depth_width"
                           ? FamilyKind::cnn_mixed_depth_width
                           : FamilyKind::cnn_mixed_width;
      if (!cfg.desk_family) params = CnnFamilyParams{};
      for (int i = 0; i < cfg.family_size; ++i) m.push_back(sample_cnn(fam, params, arch_rng));
      model_set = split_model_set(std::move(m), cfg.splits, arch_rng);
      for (int i : model_set.train) specs.push_back(model_set.models[i]);
    } else {
      specs = {resolve_target(cfg.target)};
    }

    auto resolved = resolve_task<T>(cfg, specs[0], seed);
    resolved.task.specs = specs;

    // recursion chain
    ChainSpec chain;
    UHNConfig ucfg = cfg.uhn;
    if (recursive) {
      ucfg.use_tse = true;
      for (int k = 0; k < cfg.recursion_depth; ++k)
        chain.levels.push_back(make_recursive_uhn(ucfg.f_v, ucfg.f_u, ucfg.d));
    }
    resolved.task.chain = chain;

    // normalization statistics over every target the generator will see
    std::vector<std::pair<ModelSpec, TaskDescriptor>> stat_targets;
    for (const auto& s : specs) stat_targets.push_back({s, resolved.task.desc});
    for (const auto& lvl : chain.levels) stat_targets.push_back({lvl, kRecursiveTask});
    auto stats = estimate_norm_stats(stat_targets);
    if (seed == cfg.seeds.front()) write_norm_stats(stats, dir + "/norm_stats.json");

    detail::SeedRun<T> run{make_generator<T>(ucfg, stats, seed), {}};
    MetricsLog log(sdir + "/metrics.csv");

    double eta_train = cfg.eta_train;
    double clip = cfg.clip_norm;
    if (recursive) {
      clip = 0.01;  // both phases, all depths
      if (cfg.recursion_depth == 2) eta_train /= 2;
      if (cfg.recursion_depth >= 3) eta_train /= 8;
    }
    if (cfg.kind == "ablation" && cfg.uhn.encoding != IndexEncoding::gff && clip == 0.0)
      clip = 1.0;

    InitPhaseConfig icfg;
    icfg.steps = cfg.s_init;
    icfg.s_lvl = cfg.s_lvl;
    icfg.eta = cfg.eta_init;
    icfg.warmup = cfg.init_warmup;
    icfg.clip_norm = recursive ? clip : 0.0;
    run_initialization(run.params, {resolved.task}, icfg, seed, run.cache, &log);

    TrainPhaseConfig tcfg;
    tcfg.steps = cfg.s_train;
    tcfg.eta = eta_train;
    tcfg.warmup = cfg.warmup;
    tcfg.clip_norm = clip;
    tcfg.checkpoint_path = sdir + "/checkpoint.bin";
    tcfg.log_every = cfg.log_every;
    run_training(run.params, {resolved.task}, tcfg, seed, run.cache, &log);
    save_checkpoint(run.params, sdir + "/checkpoint.bin");

    // evaluation
    if (multi_model) {
      double seen_sum = 0, unseen_sum = 0;
      for (int i : model_set.holdin) {
        const auto& s = model_set.models[i];
        auto w = generated_leaf_values(run.params, chain, s, resolved.task.desc, run.cache);
        double acc = resolved.eval_metric(w, s);
        summary.row(seed, "seen", "model" + std::to_string(i), resolved.metric_name, acc);
        seen_sum += acc;
      }
      for (int i : model_set.test) {
        const auto& s = model_set.models[i];
        auto w = generated_leaf_values(run.params, chain, s, resolved.task.desc, run.cache);
        double acc = resolved.eval_metric(w, s);
        summary.row(seed, "unseen", "model" + std::to_string(i), resolved.metric_name, acc);
        unseen_sum += acc;
      }
      summary.row(seed, "seen", "mean", resolved.metric_name,
                  seen_sum / std::max<size_t>(1, model_set.holdin.size()));
      summary.row(seed, "unseen", "mean", resolved.metric_name,
                  unseen_sum / std::max<size_t>(1, model_set.test.size()));
    } else {
      auto w = generated_leaf_values(run.params, chain, specs[0], resolved.task.desc, run.cache);
      double metric = resolved.eval_metric(w, specs[0]);
      summary.row(seed, "test", resolved.task.name, resolved.metric_name, metric);
      if (cfg.direct_baseline) {
        TrainPhaseConfig dcfg = tcfg;
        dcfg.eta = cfg.direct_eta;
        dcfg.clip_norm = 0.0;
        dcfg.checkpoint_path.clear();
        auto wd = direct_train(specs[0], resolved.task, dcfg, seed);
        summary.row(seed, "test", resolved.task.name, resolved.metric_name + "_direct",
                    resolved.eval_metric(wd, specs[0]));
      }
    }
  }
}

inline void run_experiment(const ExperimentConfig& cfg) {
  check(cfg.precision == "f64" || cfg.precision == "f32", "precision must be f64 or f32");
  if (cfg.precision == "f32")
    run_experiment_impl<float>(cfg);
  else
    run_experiment_impl<double>(cfg);
}

}  // namespace uhn
