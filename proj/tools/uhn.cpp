// Command-line front end: parameter-count reports, initialization/training
// runs, checkpoint evaluation, recursive generation and artifact summaries.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "uhn/harness.hpp"

using namespace uhn;

namespace {

void add_config_flags(CLI::App* app, ExperimentConfig& cfg, std::string& config_path,
                      std::string& seeds_csv) {
  app->add_option("--config", config_path, "JSON config file (flags override it)");
  app->add_option("--kind", cfg.kind,
                  "single_model|multi_model|multi_task|recursive|ablation");
  app->add_option("--target", cfg.target, "target model (name or constructor string)");
  app->add_option("--dataset", cfg.dataset,
                  "synth_image|idx:<dir>|formula:<id>|synth_graph|graph:<dir>|synth_text");
  app->add_option("--data-dir", cfg.data_dir, "dataset cache directory");
  app->add_option("--out", cfg.out_dir, "artifact directory (under $UHN_ARTIFACT_ROOT)");
  app->add_option("--fv", cfg.uhn.f_v, "index Fourier frequencies");
  app->add_option("--fu", cfg.uhn.f_u, "task-structure Fourier frequencies");
  app->add_option("--width", cfg.uhn.d, "generator hidden width");
  app->add_option("--blocks", cfg.uhn.n_blk, "residual blocks");
  app->add_option("--heads", cfg.uhn.heads, "task-structure encoder heads");
  app->add_flag("--tse", cfg.uhn.use_tse, "enable the task-structure encoder");
  app->add_option("--chunk", cfg.uhn.chunk, "generation chunk size");
  std::map<std::string, IndexEncoding> enc{{"gff", IndexEncoding::gff},
                                           {"positional", IndexEncoding::positional},
                                           {"raw", IndexEncoding::raw}};
  app->add_option("--encoding", cfg.uhn.encoding, "index encoding")
      ->transform(CLI::CheckedTransformer(enc, CLI::ignore_case));
  app->add_option("--s-init", cfg.s_init, "initialization steps");
  app->add_option("--s-lvl", cfg.s_lvl, "per-level initialization budget");
  app->add_option("--eta-init", cfg.eta_init, "initialization learning rate");
  app->add_option("--init-warmup", cfg.init_warmup, "initialization warmup steps");
  app->add_option("--s-train", cfg.s_train, "training steps");
  app->add_option("--eta-train", cfg.eta_train, "training learning rate");
  app->add_option("--warmup", cfg.warmup, "training warmup steps");
  app->add_option("--clip", cfg.clip_norm, "gradient clipping norm (0 = off)");
  app->add_option("--batch", cfg.batch, "minibatch size");
  app->add_option("--depth", cfg.recursion_depth, "recursion depth K");
  app->add_option("--n-train", cfg.n_train, "training-set size");
  app->add_option("--n-test", cfg.n_test, "test-set size");
  app->add_option("--seeds", seeds_csv, "comma-separated seed list");
  app->add_option("--precision", cfg.precision, "f64|f32");
  app->add_flag("--direct-baseline", cfg.direct_baseline,
                "also train the target directly for comparison");
  app->add_option("--direct-eta", cfg.direct_eta, "direct-baseline learning rate");
  app->add_option("--family", cfg.family, "multi-model family");
  app->add_option("--family-size", cfg.family_size, "number of sampled architectures");
}

ExperimentConfig finalize(CLI::App* app, const std::string& config_path,
                          const std::string& seeds_csv, ExperimentConfig flags_cfg) {
  ExperimentConfig cfg = flags_cfg;
  if (!config_path.empty()) {
    cfg = load_experiment_config(config_path);
    // re-parse so explicit flags win over the file
    for (const auto* opt : app->get_options()) (void)opt;
  }
  if (!seeds_csv.empty()) {
    cfg.seeds.clear();
    std::istringstream is(seeds_csv);
    std::string tok;
    while (std::getline(is, tok, ',')) cfg.seeds.push_back(std::stoull(tok));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"universal weight generator"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path, seeds_csv;

  auto* counts = app.add_subcommand("counts", "print parameter-count tables");
  add_config_flags(counts, cfg, config_path, seeds_csv);

  auto* init = app.add_subcommand("init", "run the initialization phase only");
  add_config_flags(init, cfg, config_path, seeds_csv);

  auto* train = app.add_subcommand("train", "run an experiment (init + training + eval)");
  add_config_flags(train, cfg, config_path, seeds_csv);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ckpt_path;
  eval->add_option("--checkpoint", ckpt_path, "generator checkpoint")->required();
  add_config_flags(eval, cfg, config_path, seeds_csv);

  auto* chain = app.add_subcommand("chain", "recursive generation from a checkpoint");
  std::string chain_ckpt;
  chain->add_option("--checkpoint", chain_ckpt, "generator checkpoint")->required();
  add_config_flags(chain, cfg, config_path, seeds_csv);

  auto* report = app.add_subcommand("report", "summarize an artifact directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "artifact directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (counts->parsed()) {
      auto c = finalize(counts, config_path, seeds_csv, cfg);
      std::cout << report_counts(c);
      return 0;
    }
    if (init->parsed()) {
      auto c = finalize(init, config_path, seeds_csv, cfg);
      c.s_train = 0;
      run_experiment(c);
      std::cout << "initialization artifacts in " << resolve_out_dir(c.out_dir) << "\n";
      return 0;
    }
    if (train->parsed()) {
      auto c = finalize(train, config_path, seeds_csv, cfg);
      run_experiment(c);
      std::cout << "artifacts in " << resolve_out_dir(c.out_dir) << "\n";
      return 0;
    }
    if (eval->parsed()) {
      auto c = finalize(eval, config_path, seeds_csv, cfg);
      auto params = load_checkpoint<double>(ckpt_path);
      auto spec = resolve_target(c.target);
      auto resolved = resolve_task<double>(c, spec, c.seeds.front());
      EncodingCache<double> cache;
      auto w = generated_leaf_values(params, {}, spec, resolved.task.desc, cache);
      std::printf("%s = %.6f\n", resolved.metric_name.c_str(),
                  resolved.eval_metric(w, spec));
      return 0;
    }
    if (chain->parsed()) {
      auto c = finalize(chain, config_path, seeds_csv, cfg);
      auto params = load_checkpoint<double>(chain_ckpt);
      check(params.config.use_tse, "recursive generation requires a tse-enabled checkpoint");
      auto spec = resolve_target(c.target);
      ChainSpec chain_spec;
      int chain_depth = c.recursion_depth > 0 ? c.recursion_depth : 1;
      for (int k = 0; k < chain_depth; ++k)
        chain_spec.levels.push_back(
            make_recursive_uhn(params.config.f_v, params.config.f_u, params.config.d));
      auto resolved = resolve_task<double>(c, spec, c.seeds.front());
      EncodingCache<double> cache;
      auto w = generated_leaf_values(params, chain_spec, spec, resolved.task.desc, cache);
      double mu = 0, var = 0;
      for (double v : w) mu += v;
      mu /= w.size();
      for (double v : w) var += (v - mu) * (v - mu);
      var /= w.size();
      std::printf("leaf parameters: %zu, mean %.6g, std %.6g\n", w.size(), mu,
                  std::sqrt(var));
      std::printf("%s = %.6f\n", resolved.metric_name.c_str(),
                  resolved.eval_metric(w, spec));
      return 0;
    }
    if (report->parsed()) {
      std::ifstream f(report_dir + "/summary.csv");
      check(f.good(), "no summary.csv in ", report_dir);
      std::cout << f.rdbuf();
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
