// Benchmark CLI for interventional density estimation.
#include "ide/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace ide;

namespace {

void print_comparison(const nlohmann::json& cmp) {
  std::printf("%-14s %16s %16s %10s %10s\n", "method", "log_prob_in", "log_prob_out",
              "%best_in", "%best_out");
  for (const auto& [method, stats] : cmp.items()) {
    const auto fmt_stat = [&](const char* key) {
      const auto& s = stats.at(key);
      if (!s.contains("mean")) return std::string("-");
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3f+-%.3f", s.at("mean").get<double>(),
                    s.at("sd").get<double>());
      return std::string(buf);
    };
    std::printf("%-14s %16s %16s %9.1f%% %9.1f%%\n", method.c_str(),
                fmt_stat("log_prob_in").c_str(), fmt_stat("log_prob_out").c_str(),
                stats.at("pct_best_in").get<double>(), stats.at("pct_best_out").get<double>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interventional density estimation benchmark"};
  app.require_subcommand(1);

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "Emit a synthetic dataset as CSV");
  std::string gen_data = "scm", gen_out = "data.csv";
  double gen_b = 3.0, gen_sigma = 0.75;
  std::int64_t gen_n = 1000;
  std::uint64_t gen_seed = 42;
  gen->add_option("--data", gen_data, "scm | moons")->check(CLI::IsMember({"scm", "moons"}));
  gen->add_option("--b", gen_b, "covariate shift (scm)");
  gen->add_option("--sigma", gen_sigma, "half-circle noise (moons)");
  gen->add_option("--n", gen_n, "sample size");
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // shared options for config-driven subcommands
  std::string cfg_path, out_dir, checkpoint_dir = "checkpoints", results_path;
  std::uint64_t seed_override = 0;
  bool have_seed = false;
  int fold = 0, jobs_override = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cfg_path, "experiment config file")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed_override = s; have_seed = true; },
        "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--jobs", jobs_override, "parallel fold workers");
  };

  auto* tune_cmd = app.add_subcommand("tune", "Choose hyperparameters by cross-validation");
  add_common(tune_cmd);
  auto* train_cmd = app.add_subcommand("train", "Train methods on one fold, write checkpoints");
  add_common(train_cmd);
  train_cmd->add_option("--fold", fold, "fold index");
  train_cmd->add_option("--checkpoints", checkpoint_dir, "checkpoint directory");
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate checkpointed models on one fold");
  add_common(eval_cmd);
  eval_cmd->add_option("--fold", fold, "fold index");
  eval_cmd->add_option("--checkpoints", checkpoint_dir, "checkpoint directory");
  auto* bench_cmd = app.add_subcommand("benchmark", "Run the full protocol");
  add_common(bench_cmd);
  auto* cmp_cmd = app.add_subcommand("compare", "Summarize a results CSV");
  cmp_cmd->add_option("--results", results_path, "results.csv path")->required();
  cmp_cmd->add_option("--out", out_dir, "write comparison JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ObservationalDataset d;
      if (gen_data == "scm") {
        SCMConfig c;
        c.b = gen_b;
        c.n = gen_n;
        c.seed = gen_seed;
        d = scm_sample(c);
      } else {
        MoonsConfig c;
        c.sigma = gen_sigma;
        c.n = gen_n;
        c.seed = gen_seed;
        d = moons_sample(c);
      }
      save_csv(d, gen_out);
      std::printf("wrote %lld rows to %s\n", static_cast<long long>(d.n()), gen_out.c_str());
      return 0;
    }

    if (cmp_cmd->parsed()) {
      const auto rows = read_results_csv(results_path);
      const auto cmp = compare_methods(rows);
      print_comparison(cmp);
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(std::filesystem::path(out_dir) / "comparison.json");
        out << cmp.dump(2) << "\n";
      }
      return 0;
    }

    ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);
    if (have_seed) cfg.seed = seed_override;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (jobs_override > 0) cfg.jobs = jobs_override;

    if (tune_cmd->parsed()) {
      const auto data = load_dataset(cfg);
      auto sp = split(data, cfg.train_fraction, 0, mix_seed(cfg.seed, 0x5917));
      auto std_pair = standardize(sp.train);
      nlohmann::json tuned;
      bool nuisance_done = false;
      for (const auto& m : cfg.methods) {
        const bool shares = m == "infs" || m == "infs-no-bias" || m == "cnf-plugin" ||
                            m == "cnf-ts";
        std::string as = shares ? "infs" : m;
        if (shares && nuisance_done) continue;
        if (shares) nuisance_done = true;
        tuned[as] = tune_hyperparams(as, std_pair.first, cfg, mix_seed(cfg.seed, 0x7BE));
      }
      std::cout << tuned.dump(2) << "\n";
      std::filesystem::create_directories(cfg.out_dir);
      std::ofstream out(std::filesystem::path(cfg.out_dir) / "tuned.json");
      out << tuned.dump(2) << "\n";
      return 0;
    }
    if (train_cmd->parsed()) {
      train_fold(cfg, fold, checkpoint_dir);
      std::printf("checkpoints written to %s\n", checkpoint_dir.c_str());
      return 0;
    }
    if (eval_cmd->parsed()) {
      const auto rows = evaluate_fold(cfg, fold, checkpoint_dir);
      std::filesystem::create_directories(cfg.out_dir);
      const std::string path =
          (std::filesystem::path(cfg.out_dir) / "evaluation.csv").string();
      write_results_csv(rows, path);
      for (const auto& r : rows)
        std::printf("%s arm %d: log_prob_in %.4f log_prob_out %.4f\n", r.method.c_str(), r.arm,
                    r.log_prob_in, r.log_prob_out);
      std::printf("rows written to %s\n", path.c_str());
      return 0;
    }
    if (bench_cmd->parsed()) {
      const auto result = run_experiment(cfg);
      print_comparison(result.summary.at("comparison"));
      std::printf("results written to %s\n", cfg.out_dir.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
