#include "ide/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace ide {

namespace fs = std::filesystem;

// ----------------------------- configuration --------------------------------

namespace {

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      const auto nonblank = line.find_first_not_of(" \t\r");
      check(nonblank == std::string::npos,
            "config: line " + std::to_string(lineno) + " is not 'key = value'");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check(!key.empty(), "config: empty key at line " + std::to_string(lineno));
    kv[key] = value;
  }
  return kv;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: boolean expected for '" + key + "', got '" + v + "'");
}

}  // namespace

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names = {"infs",        "infs-no-bias", "cnf-plugin",
                                                 "tarnet-star", "mdn",          "kde",
                                                 "dkme",        "cnf-ts"};
  return names;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  ExperimentConfig cfg;
  CsvSchema schema;
  bool schema_set = false;
  for (const auto& [key, value] : parse_kv(text)) {
    try {
      if (key == "data") cfg.data = value;
      else if (key == "id") cfg.id = value;
      else if (key == "scm.b") cfg.scm_b = std::stod(value);
      else if (key == "n" || key == "scm.n" || key == "moons.n") cfg.n = std::stoll(value);
      else if (key == "moons.sigma") cfg.moons_sigma = std::stod(value);
      else if (key == "csv.path") cfg.csv_path = value;
      else if (key == "csv.covariates") { schema.covariates = split_list(value); schema_set = true; }
      else if (key == "csv.treatment") { schema.treatment = value; schema_set = true; }
      else if (key == "csv.outcomes") { schema.outcomes = split_list(value); schema_set = true; }
      else if (key == "csv.counterfactuals") { schema.counterfactuals = split_list(value); schema_set = true; }
      else if (key == "methods") cfg.methods = split_list(value);
      else if (key == "folds") cfg.folds = std::stoi(value);
      else if (key == "train_fraction") cfg.train_fraction = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "tune") cfg.tune = parse_bool(value, key);
      else if (key == "tune.budget") cfg.tune_budget = std::stoi(value);
      else if (key == "tune.cv_folds") cfg.tune_cv_folds = std::stoi(value);
      else if (key == "jobs") cfg.jobs = std::stoi(value);
      else if (key == "dump_densities") cfg.dump_densities = parse_bool(value, key);
      else if (key == "metrics_std_units") cfg.metrics_std_units = parse_bool(value, key);
      else if (key == "wasserstein") cfg.wasserstein = value;
      else if (key == "wasserstein_draws") cfg.wasserstein_draws = std::stoi(value);
      else if (key == "nuisance.knots") cfg.nuisance.n_knots = std::stoi(value);
      else if (key == "nuisance.lr") cfg.nuisance.lr = std::stod(value);
      else if (key == "nuisance.batch") cfg.nuisance.batch = std::stoi(value);
      else if (key == "nuisance.iters") cfg.nuisance.n_iter = std::stoi(value);
      else if (key == "nuisance.alpha") cfg.nuisance.alpha = std::stod(value);
      else if (key == "nuisance.hidden") cfg.nuisance.hidden = std::stoi(value);
      else if (key == "nuisance.d_rep") cfg.nuisance.d_rep = std::stoi(value);
      else if (key == "nuisance.noise_x") cfg.nuisance_noise.var_x = std::stod(value);
      else if (key == "nuisance.noise_y") cfg.nuisance_noise.var_y = std::stod(value);
      else if (key == "target.knots") cfg.target.n_knots = std::stoi(value);
      else if (key == "target.lr") cfg.target.lr = std::stod(value);
      else if (key == "target.batch") cfg.target.batch = std::stoi(value);
      else if (key == "target.iters") cfg.target.n_iter = std::stoi(value);
      else if (key == "target.ema") cfg.target.ema_gamma = std::stod(value);
      else if (key == "target.grid_k") cfg.target.grid_k = std::stoi(value);
      else if (key == "target.clip") cfg.bias.clip = std::stod(value);
      else if (key == "tarnet.lr") cfg.tarnet.lr = std::stod(value);
      else if (key == "tarnet.batch") cfg.tarnet.batch = std::stoi(value);
      else if (key == "tarnet.iters") cfg.tarnet.n_iter = std::stoi(value);
      else if (key == "tarnet.noise_x") cfg.tarnet.noise.var_x = std::stod(value);
      else if (key == "tarnet.noise_y") cfg.tarnet.noise.var_y = std::stod(value);
      else if (key == "mdn.components") cfg.mdn.n_components = std::stoi(value);
      else if (key == "mdn.lr") cfg.mdn.lr = std::stod(value);
      else if (key == "mdn.batch") cfg.mdn.batch = std::stoi(value);
      else if (key == "mdn.iters") cfg.mdn.n_iter = std::stoi(value);
      else if (key == "mdn.noise_x") cfg.mdn.noise.var_x = std::stod(value);
      else if (key == "mdn.noise_y") cfg.mdn.noise.var_y = std::stod(value);
      else if (key == "kde.lr") cfg.kde.lr = std::stod(value);
      else if (key == "kde.batch") cfg.kde.batch = std::stoi(value);
      else if (key == "kde.iters") cfg.kde.n_iter = std::stoi(value);
      else if (key == "kde.alpha") cfg.kde.alpha = std::stod(value);
      else if (key == "kde.clip") cfg.kde.clip = std::stod(value);
      else if (key == "dkme.sigma_k") cfg.dkme.sigma_k = std::stod(value);
      else if (key == "dkme.epsilon") cfg.dkme.epsilon = std::stod(value);
      else if (key == "ts.basis_dim") cfg.ts.basis_dim = std::stoi(value);
      else if (key == "ts.grid_k") cfg.ts.grid_k = std::stoi(value);
      else throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for '" + key + "'");
    }
  }
  if (schema_set) cfg.csv_schema = schema;
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  check(!methods.empty(), "config: at least one method required");
  for (const auto& m : methods) {
    const auto& names = known_methods();
    if (std::find(names.begin(), names.end(), m) == names.end()) {
      std::string valid;
      for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
      throw std::invalid_argument("config: unknown method '" + m + "' (valid: " + valid + ")");
    }
  }
  check(data == "scm" || data == "moons" || data == "csv",
        "config: data must be scm, moons or csv");
  check(folds >= 1, "config: folds must be >= 1");
  check(wasserstein == "auto" || wasserstein == "require" || wasserstein == "off",
        "config: wasserstein must be auto, require or off");
  check(train_fraction > 0.0 && train_fraction < 1.0, "config: train_fraction in (0, 1)");
  if (data == "csv") check(!csv_path.empty(), "config: csv.path required for csv data");
}

std::string ExperimentConfig::dataset_id() const {
  if (!id.empty()) return id;
  if (data == "scm") {
    std::ostringstream os;
    os << "scm_b" << scm_b << "_n" << n;
    return os.str();
  }
  if (data == "moons") {
    std::ostringstream os;
    os << "moons_s" << moons_sigma << "_n" << n;
    return os.str();
  }
  return fs::path(csv_path).stem().string();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["data"] = data;
  j["id"] = dataset_id();
  j["methods"] = methods;
  j["folds"] = folds;
  j["train_fraction"] = train_fraction;
  j["seed"] = seed;
  j["tune"] = tune;
  j["metrics_std_units"] = metrics_std_units;
  if (data == "scm") { j["scm_b"] = scm_b; j["n"] = n; }
  if (data == "moons") { j["moons_sigma"] = moons_sigma; j["n"] = n; }
  if (data == "csv") j["csv_path"] = csv_path;
  j["nuisance"] = {{"knots", nuisance.n_knots}, {"lr", nuisance.lr},
                   {"batch", nuisance.batch},   {"iters", nuisance.n_iter},
                   {"noise_x", nuisance_noise.var_x}, {"noise_y", nuisance_noise.var_y}};
  j["target"] = {{"knots", target.n_knots}, {"lr", target.lr}, {"batch", target.batch},
                 {"iters", target.n_iter},  {"ema", target.ema_gamma},
                 {"grid_k", target.grid_k}, {"clip", bias.clip}};
  return j;
}

ObservationalDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.data == "scm") {
    SCMConfig s;
    s.b = cfg.scm_b;
    s.n = cfg.n;
    s.seed = mix_seed(cfg.seed, 0xDA7A);
    return scm_sample(s);
  }
  if (cfg.data == "moons") {
    MoonsConfig m;
    m.sigma = cfg.moons_sigma;
    m.n = cfg.n;
    m.seed = mix_seed(cfg.seed, 0xDA7A);
    return moons_sample(m);
  }
  return cfg.csv_schema ? load_csv(cfg.csv_path, *cfg.csv_schema) : load_csv(cfg.csv_path);
}

// ------------------------------- evaluators ---------------------------------

namespace {

struct FoldContext {
  ObservationalDataset train, test;  // original units
  ObservationalDataset train_std;
  StandardizationParams std_params = StandardizationParams::identity(1);
};

FoldContext make_fold_context(const ObservationalDataset& data, const ExperimentConfig& cfg,
                              int fold) {
  FoldContext ctx;
  auto sp = split(data, cfg.train_fraction, fold, mix_seed(cfg.seed, 0x5917));
  ctx.train = std::move(sp.train);
  ctx.test = std::move(sp.test);
  auto [train_std, params] = standardize(ctx.train);
  ctx.train_std = std::move(train_std);
  ctx.std_params = params;
  return ctx;
}

// Standardized-scale density evaluator plus optional sampler.
struct Evaluator {
  std::function<Vector(int, const Matrix&)> log_prob_std;
  std::function<Matrix(int, int, Rng&)> sample_std;  // empty when not samplable
};

Evaluator plugin_evaluator(std::shared_ptr<const CondDensityModel> model, Matrix X_ref) {
  Evaluator ev;
  ev.log_prob_std = [model, X_ref](int a, const Matrix& y) {
    return plugin_log_prob_rows(*model, X_ref, a, y);
  };
  ev.sample_std = [model, X_ref](int a, int n, Rng& rng) {
    return plugin_sample(*model, X_ref, a, n, rng);
  };
  return ev;
}

// Clip-and-renormalize per arm over the reporting grid; the grid spans the
// pooled training-outcome range plus one unit on each side.
Evaluator clipped_evaluator(const FoldContext& ctx,
                            std::function<double(const Vector&, int)> raw) {
  const int d_y = static_cast<int>(ctx.train_std.d_y());
  auto make_arm = [&, raw](int a) {
    std::function<double(const Vector&)> f = [raw, a](const Vector& y) { return raw(y, a); };
    if (d_y == 1) {
      const auto [lo, hi] = QuadratureGrid::train_outcome_range(ctx.train_std, 0);
      return std::make_shared<ClippedDensity>(f, lo, hi, 1000);
    }
    Vector lo(2), hi(2);
    for (int j = 0; j < 2; ++j) {
      const auto [l, h] = QuadratureGrid::train_outcome_range(ctx.train_std, j);
      lo(j) = l;
      hi(j) = h;
    }
    return std::make_shared<ClippedDensity>(f, lo, hi, 32);
  };
  auto c0 = make_arm(0);
  auto c1 = make_arm(1);
  Evaluator ev;
  ev.log_prob_std = [c0, c1](int a, const Matrix& y) {
    const auto& c = a == 1 ? *c1 : *c0;
    Vector out(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double d = c(y.row(i).transpose());
      out(i) = d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
    }
    return out;
  };
  return ev;
}

// Fits one method, or rebuilds it from checkpoint JSON when `load` is given.
Evaluator build_method(const std::string& method, const FoldContext& ctx,
                       const ExperimentConfig& cfg, std::uint64_t seed,
                       std::shared_ptr<NuisanceModel>& shared_nuisance, nlohmann::json* save,
                       const nlohmann::json* load) {
  const auto need_nuisance = [&]() {
    if (!shared_nuisance) {
      if (load && load->contains("nuisance"))
        shared_nuisance =
            std::make_shared<NuisanceModel>(NuisanceModel::from_json(load->at("nuisance")));
      else
        shared_nuisance = std::make_shared<NuisanceModel>(
            train_nuisance(ctx.train_std, cfg.nuisance, cfg.nuisance_noise, mix_seed(seed, 0x11)));
    }
    return shared_nuisance;
  };

  if (method == "infs" || method == "infs-no-bias") {
    auto nuis = need_nuisance();
    TargetFlowPair pair;
    if (load && load->contains("pair")) {
      pair = TargetFlowPair::from_json(load->at("pair"));
    } else {
      BiasCorrConfig bias = cfg.bias;
      bias.enabled = method == "infs";
      pair = train_target(*nuis, ctx.train_std, cfg.target, bias, mix_seed(seed, 0x22),
                          StandardizationParams::identity(ctx.train_std.d_y()));
    }
    if (save) {
      (*save)["pair"] = pair.to_json();
      (*save)["nuisance"] = nuis->to_json();
    }
    auto p = std::make_shared<TargetFlowPair>(std::move(pair));
    Evaluator ev;
    ev.log_prob_std = [p](int a, const Matrix& y) { return p->arm(a).log_prob(y); };
    ev.sample_std = [p](int a, int n, Rng& rng) { return p->arm(a).sample(n, rng); };
    return ev;
  }
  if (method == "cnf-plugin") {
    auto nuis = need_nuisance();
    if (save) (*save)["nuisance"] = nuis->to_json();
    return plugin_evaluator(nuis, ctx.train_std.X);
  }
  if (method == "tarnet-star") {
    auto model = std::make_shared<TarnetStarModel>(
        load && load->contains("model")
            ? TarnetStarModel::from_json(load->at("model"))
            : fit_tarnet_star(ctx.train_std, cfg.tarnet, mix_seed(seed, 0x33)));
    if (save) (*save)["model"] = model->to_json();
    return plugin_evaluator(model, ctx.train_std.X);
  }
  if (method == "mdn") {
    auto model = std::make_shared<MdnModel>(
        load && load->contains("model") ? MdnModel::from_json(load->at("model"))
                                        : fit_mdn(ctx.train_std, cfg.mdn, mix_seed(seed, 0x44)));
    if (save) (*save)["model"] = model->to_json();
    return plugin_evaluator(model, ctx.train_std.X);
  }
  if (method == "kde") {
    auto model = std::make_shared<KdeModel>(
        load && load->contains("model") ? KdeModel::from_json(load->at("model"))
                                        : fit_kde(ctx.train_std, cfg.kde, mix_seed(seed, 0x55)));
    if (save) (*save)["model"] = model->to_json();
    auto train = std::make_shared<ObservationalDataset>(ctx.train_std);
    return clipped_evaluator(ctx, [model, train](const Vector& y, int a) {
      return kde_aiptw_density_raw(*model, *train, a, y);
    });
  }
  if (method == "dkme") {
    auto model = std::make_shared<DKMEModel>(
        load && load->contains("model")
            ? DKMEModel::from_json(load->at("model"), ctx.train_std)
            : fit_dkme(ctx.train_std, cfg.dkme));
    if (save) (*save)["model"] = model->to_json();
    return clipped_evaluator(
        ctx, [model](const Vector& y, int a) { return dkme_density_raw(*model, y, a); });
  }
  if (method == "cnf-ts") {
    auto nuis = need_nuisance();
    TsHyperparams ts_hp = cfg.ts;
    ts_hp.mc_seed = mix_seed(seed, 0x66);
    if (ctx.train_std.d_y() == 2 && cfg.ts.basis_dim == 10) ts_hp.basis_dim = 5;
    auto model = std::make_shared<TSModel>(
        load && load->contains("model") ? TSModel::from_json(load->at("model"))
                                        : ts_fit(*nuis, ctx.train_std, ts_hp, cfg.bias));
    if (save) {
      (*save)["model"] = model->to_json();
      (*save)["nuisance"] = nuis->to_json();
    }
    return clipped_evaluator(
        ctx, [model](const Vector& y, int a) { return model->density_raw(y, a); });
  }
  throw std::invalid_argument("unknown method '" + method + "'");
}

std::vector<MetricReport> evaluate_method(const std::string& method, const Evaluator& ev,
                                          const FoldContext& ctx, const ExperimentConfig& cfg,
                                          int fold, std::uint64_t seed) {
  std::vector<MetricReport> rows;
  const double offset = cfg.metrics_std_units ? 0.0 : ctx.std_params.log_density_offset();
  for (int a : {0, 1}) {
    MetricReport r;
    r.method = method;
    r.dataset = cfg.dataset_id();
    r.arm = a;
    r.fold = fold;
    r.seed = cfg.seed;
    if (ctx.train.has_counterfactuals()) {
      for (bool in_sample : {true, false}) {
        const ObservationalDataset& part = in_sample ? ctx.train : ctx.test;
        const Matrix y_orig = part.interventional_sample(a);
        const Matrix y_std = ctx.std_params.apply(y_orig);
        const Vector lp = Vector(ev.log_prob_std(a, y_std).array() - offset);
        (in_sample ? r.log_prob_in : r.log_prob_out) = avg_log_prob_from_logs(lp).value;
        if (ev.sample_std && y_orig.cols() == 1 && cfg.wasserstein != "off") {
          Rng rng(mix_seed(seed, in_sample ? 0x700u + a : 0x800u + a));
          Matrix draws_std = ev.sample_std(a, cfg.wasserstein_draws, rng);
          const Vector draws = cfg.metrics_std_units
                                   ? Vector(draws_std.col(0))
                                   : Vector(ctx.std_params.invert(draws_std).col(0));
          const Vector target =
              cfg.metrics_std_units ? Vector(y_std.col(0)) : Vector(y_orig.col(0));
          (in_sample ? r.wasserstein_in : r.wasserstein_out) =
              empirical_wasserstein(draws, target, 1.0);
        }
      }
    } else {
      // no ground-truth interventional sample: factual conditional
      // log-probability diagnostics on the observed arm instead
      for (bool in_sample : {true, false}) {
        const ObservationalDataset& part = in_sample ? ctx.train : ctx.test;
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < part.n(); ++i)
          if (static_cast<int>(part.A(i)) == a) idx.push_back(i);
        if (idx.empty()) {
          (in_sample ? r.log_prob_in : r.log_prob_out) =
              std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        const auto sub = part.rows(idx);
        const Matrix y_std = ctx.std_params.apply(sub.Y);
        const Vector lp = Vector(ev.log_prob_std(a, y_std).array() - offset);
        (in_sample ? r.log_prob_in : r.log_prob_out) = avg_log_prob_from_logs(lp).value;
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void dump_density_grid(const std::string& method, const Evaluator& ev, const FoldContext& ctx,
                       const ExperimentConfig& cfg, int fold) {
  if (ctx.train.d_y() != 1) return;
  const fs::path dir = fs::path(cfg.out_dir) / "densities";
  fs::create_directories(dir);
  const auto [lo_std, hi_std] = QuadratureGrid::train_outcome_range(ctx.train_std, 0);
  const double offset = ctx.std_params.log_density_offset();
  for (int a : {0, 1}) {
    std::ofstream out(dir / (method + "_a" + std::to_string(a) + "_fold" +
                             std::to_string(fold) + ".csv"));
    out << "y,density\n";
    const int pts = 200;
    for (int i = 0; i < pts; ++i) {
      const double y_std = lo_std - 1.0 + (hi_std - lo_std + 2.0) * i / (pts - 1);
      Matrix m(1, 1);
      m(0, 0) = y_std;
      const double lp = ev.log_prob_std(a, m)(0) - offset;
      const double y = ctx.std_params.mean(0) + ctx.std_params.scale(0) * y_std;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.8g,%.8g\n", y, std::exp(lp));
      out << buf;
    }
  }
}

}  // namespace

// -------------------------------- tuning ------------------------------------

namespace {

std::vector<nlohmann::json> tuning_grid(const std::string& method) {
  const std::vector<double> noise = {0.0, 1e-4, 2.5e-3, 1e-2};  // 0, 0.01^2, 0.05^2, 0.1^2
  const std::vector<double> lrs = {0.001, 0.005};
  const std::vector<int> batches = {32, 64};
  std::vector<nlohmann::json> grid;
  if (method == "infs" || method == "infs-no-bias" || method == "cnf-plugin" ||
      method == "cnf-ts") {
    for (int k : {5, 10, 20})
      for (double nx : noise)
        for (double ny : noise)
          for (double lr : lrs)
            for (int b : batches)
              grid.push_back({{"knots", k}, {"noise_x", nx}, {"noise_y", ny},
                              {"lr", lr},   {"batch", b}});
  } else if (method == "tarnet-star") {
    for (double nx : noise)
      for (double ny : noise)
        for (double lr : lrs)
          for (int b : batches)
            grid.push_back({{"noise_x", nx}, {"noise_y", ny}, {"lr", lr}, {"batch", b}});
  } else if (method == "mdn") {
    for (int c : {5, 10, 20})
      for (double nx : noise)
        for (double ny : noise)
          for (double lr : lrs)
            for (int b : batches)
              grid.push_back({{"components", c}, {"noise_x", nx}, {"noise_y", ny},
                              {"lr", lr},        {"batch", b}});
  } else if (method == "kde") {
    for (double lr : {0.001, 0.005, 0.1})
      for (int b : {32, 64, 128}) grid.push_back({{"lr", lr}, {"batch", b}});
  } else if (method == "dkme") {
    for (double sk : {1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 20.0})
      for (double eps : {1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0})
        grid.push_back({{"sigma_k", sk}, {"epsilon", eps}});
  }
  return grid;
}

void apply_candidate(const std::string& method, const nlohmann::json& c,
                     ExperimentConfig& cfg) {
  if (method == "infs" || method == "infs-no-bias" || method == "cnf-plugin" ||
      method == "cnf-ts") {
    cfg.nuisance.n_knots = c.at("knots").get<int>();
    cfg.nuisance.lr = c.at("lr").get<double>();
    cfg.nuisance.batch = c.at("batch").get<int>();
    cfg.nuisance_noise.var_x = c.at("noise_x").get<double>();
    cfg.nuisance_noise.var_y = c.at("noise_y").get<double>();
  } else if (method == "tarnet-star") {
    cfg.tarnet.lr = c.at("lr").get<double>();
    cfg.tarnet.batch = c.at("batch").get<int>();
    cfg.tarnet.noise.var_x = c.at("noise_x").get<double>();
    cfg.tarnet.noise.var_y = c.at("noise_y").get<double>();
  } else if (method == "mdn") {
    cfg.mdn.n_components = c.at("components").get<int>();
    cfg.mdn.lr = c.at("lr").get<double>();
    cfg.mdn.batch = c.at("batch").get<int>();
    cfg.mdn.noise.var_x = c.at("noise_x").get<double>();
    cfg.mdn.noise.var_y = c.at("noise_y").get<double>();
  } else if (method == "kde") {
    cfg.kde.lr = c.at("lr").get<double>();
    cfg.kde.batch = c.at("batch").get<int>();
  } else if (method == "dkme") {
    cfg.dkme.sigma_k = c.at("sigma_k").get<double>();
    cfg.dkme.epsilon = c.at("epsilon").get<double>();
  }
}

// Cross-validation criterion for a candidate; smaller is better.
double cv_criterion(const std::string& method, const nlohmann::json& cand,
                    const ObservationalDataset& train_std, const ExperimentConfig& base,
                    std::uint64_t seed) {
  ExperimentConfig cfg = base;
  apply_candidate(method, cand, cfg);
  double total = 0.0;
  for (int f = 0; f < cfg.tune_cv_folds; ++f) {
    const double frac = 1.0 - 1.0 / static_cast<double>(cfg.tune_cv_folds);
    auto sp = split(train_std, frac, f, mix_seed(seed, 0xCF));
    if (method == "kde") {
      const auto model = fit_kde(sp.train, cfg.kde, mix_seed(seed, 1000 + f));
      double mse = 0.0, bce = 0.0;
      const Vector pi = model.propensity(sp.test.X);
      for (Eigen::Index i = 0; i < sp.test.n(); ++i) {
        const Matrix pred = model.regression(sp.test.X.row(i), static_cast<int>(sp.test.A(i)));
        mse += (pred.row(0).transpose() - sp.test.Y.row(i).transpose()).squaredNorm();
        const double p = std::min(std::max(pi(i), 1e-12), 1.0 - 1e-12);
        bce += sp.test.A(i) == 1.0 ? -std::log(p) : -std::log(1.0 - p);
      }
      total += (mse + cfg.kde.alpha * bce) / static_cast<double>(sp.test.n());
    } else if (method == "dkme") {
      total += dkme_ridge_mse(sp.train, sp.test, cfg.dkme.sigma_k, cfg.dkme.epsilon);
    } else if (method == "tarnet-star") {
      const auto model = fit_tarnet_star(sp.train, cfg.tarnet, mix_seed(seed, 1000 + f));
      total += -model.cond_log_prob(sp.test.X, sp.test.A, sp.test.Y).mean();
    } else if (method == "mdn") {
      const auto model = fit_mdn(sp.train, cfg.mdn, mix_seed(seed, 1000 + f));
      total += -model.cond_log_prob(sp.test.X, sp.test.A, sp.test.Y).mean();
    } else {
      const auto model =
          train_nuisance(sp.train, cfg.nuisance, cfg.nuisance_noise, mix_seed(seed, 1000 + f));
      total += -model.cond_log_prob(sp.test.X, sp.test.A, sp.test.Y).mean();
    }
  }
  return total / static_cast<double>(base.tune_cv_folds);
}

}  // namespace

nlohmann::json tune_hyperparams(const std::string& method,
                                const ObservationalDataset& train_std, ExperimentConfig& cfg,
                                std::uint64_t seed) {
  return tune_hyperparams(method, train_std, cfg, seed, tuning_grid(method));
}

nlohmann::json tune_hyperparams(const std::string& method,
                                const ObservationalDataset& train_std, ExperimentConfig& cfg,
                                std::uint64_t seed, std::vector<nlohmann::json> grid) {
  if (grid.empty()) return nlohmann::json::object();  // nothing to tune
  if (grid.size() == 1) {
    apply_candidate(method, grid[0], cfg);
    return grid[0];
  }
  Rng rng(mix_seed(seed, 0x7E5E));
  for (size_t i = grid.size(); i > 1; --i)
    std::swap(grid[i - 1], grid[static_cast<size_t>(rng.index(static_cast<Eigen::Index>(i)))]);
  if (static_cast<int>(grid.size()) > cfg.tune_budget)
    grid.resize(static_cast<size_t>(cfg.tune_budget));

  double best = std::numeric_limits<double>::infinity();
  nlohmann::json best_cand;
  std::vector<std::string> failures;
  for (const auto& cand : grid) {
    try {
      const double crit = cv_criterion(method, cand, train_std, cfg, seed);
      if (std::isfinite(crit) && crit < best) {
        best = crit;
        best_cand = cand;
      }
    } catch (const std::exception& e) {
      failures.push_back(cand.dump() + ": " + e.what());
    }
  }
  if (best_cand.is_null()) {
    std::string msg = "tuning failed for '" + method + "'; all candidates diverged:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw std::runtime_error(msg);
  }
  apply_candidate(method, best_cand, cfg);
  best_cand["criterion"] = best;
  return best_cand;
}

// ----------------------------- experiment run -------------------------------

ExperimentResult run_experiment(const ExperimentConfig& base_cfg) {
  base_cfg.validate();
  ExperimentConfig cfg = base_cfg;
  const auto data = load_dataset(cfg);
  check(cfg.wasserstein != "require" || data.has_counterfactuals(),
        "config: wasserstein metric requested but the dataset has no counterfactual outcomes");

  ExperimentResult result;

  if (cfg.tune) {
    // hyperparameters chosen once, on the first split's training part
    auto ctx0 = make_fold_context(data, cfg, 0);
    bool nuisance_done = false;
    for (const auto& m : cfg.methods) {
      const bool shares_nuisance =
          m == "infs" || m == "infs-no-bias" || m == "cnf-plugin" || m == "cnf-ts";
      std::string tune_as = m;
      if (shares_nuisance) {
        if (nuisance_done) continue;
        nuisance_done = true;
        tune_as = "infs";
      }
      result.tuned[tune_as] =
          tune_hyperparams(tune_as, ctx0.train_std, cfg, mix_seed(cfg.seed, 0x7BE));
    }
  }

  struct Timing {
    std::string method;
    int fold;
    double seconds;
  };
  std::vector<MetricReport> rows;
  std::vector<Timing> timings;
  std::mutex mu;

  const auto run_fold = [&](int fold) {
    const auto ctx = make_fold_context(data, cfg, fold);
    std::shared_ptr<NuisanceModel> shared_nuisance;
    for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      const std::string& method = cfg.methods[mi];
      const std::uint64_t seed = mix_seed(cfg.seed, 1000003ULL * fold + mi);
      const auto t0 = std::chrono::steady_clock::now();
      Evaluator ev = build_method(method, ctx, cfg, seed, shared_nuisance, nullptr, nullptr);
      auto method_rows = evaluate_method(method, ev, ctx, cfg, fold, seed);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (cfg.dump_densities) dump_density_grid(method, ev, ctx, cfg, fold);
      std::lock_guard<std::mutex> lock(mu);
      for (auto& r : method_rows) {
        r.runtime_seconds = secs;
        rows.push_back(std::move(r));
      }
      timings.push_back({method, fold, secs});
    }
  };

  if (cfg.jobs <= 1 || cfg.folds == 1) {
    for (int f = 0; f < cfg.folds; ++f) run_fold(f);
  } else {
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    const int n_workers = std::min(cfg.jobs, cfg.folds);
    for (int w = 0; w < n_workers; ++w)
      workers.emplace_back([&]() {
        for (int f = next.fetch_add(1); f < cfg.folds; f = next.fetch_add(1)) run_fold(f);
      });
    for (auto& t : workers) t.join();
  }

  std::sort(rows.begin(), rows.end(), [](const MetricReport& a, const MetricReport& b) {
    return std::tie(a.dataset, a.method, a.arm, a.fold) <
           std::tie(b.dataset, b.method, b.arm, b.fold);
  });
  std::sort(timings.begin(), timings.end(), [](const Timing& a, const Timing& b) {
    return std::tie(a.method, a.fold) < std::tie(b.method, b.fold);
  });

  result.rows = rows;
  result.summary["config"] = cfg.to_json();
  if (!result.tuned.is_null()) result.summary["tuned"] = result.tuned;
  result.summary["comparison"] = compare_methods(rows);

  fs::create_directories(cfg.out_dir);
  write_results_csv(rows, (fs::path(cfg.out_dir) / "results.csv").string());
  {
    std::ofstream out(fs::path(cfg.out_dir) / "timings.csv");
    out << "method,fold,seconds\n";
    for (const auto& t : timings) out << t.method << "," << t.fold << "," << t.seconds << "\n";
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "summary.json");
    out << result.summary.dump(2) << "\n";
  }
  return result;
}

// ------------------------------ aggregation ---------------------------------

nlohmann::json compare_methods(const std::vector<MetricReport>& rows) {
  check(!rows.empty(), "compare: no result rows");
  std::map<std::string, std::vector<const MetricReport*>> by_method;
  std::map<std::tuple<std::string, int, int>, std::vector<const MetricReport*>> units;
  for (const auto& r : rows) {
    by_method[r.method].push_back(&r);
    units[{r.dataset, r.arm, r.fold}].push_back(&r);
  }
  std::map<std::string, int> wins_in, wins_out;
  for (const auto& [key, group] : units) {
    for (bool in_sample : {true, false}) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto* r : group)
        best = std::max(best, in_sample ? r->log_prob_in : r->log_prob_out);
      if (!std::isfinite(best)) continue;
      for (const auto* r : group)  // ties credit every tied method
        if ((in_sample ? r->log_prob_in : r->log_prob_out) == best)
          ++(in_sample ? wins_in : wins_out)[r->method];
    }
  }
  const double n_units = static_cast<double>(units.size());
  nlohmann::json out;
  for (const auto& [method, group] : by_method) {
    const auto stats = [&group](auto get) {
      std::vector<double> v;
      for (const auto* r : group) {
        const double x = get(*r);
        if (std::isfinite(x)) v.push_back(x);
      }
      nlohmann::json s;
      s["n"] = v.size();
      s["n_degenerate"] = group.size() - v.size();
      if (!v.empty()) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        s["mean"] = mean;
        s["sd"] = std::sqrt(var / static_cast<double>(v.size()));
      }
      return s;
    };
    nlohmann::json m;
    m["log_prob_in"] = stats([](const MetricReport& r) { return r.log_prob_in; });
    m["log_prob_out"] = stats([](const MetricReport& r) { return r.log_prob_out; });
    m["wasserstein_in"] = stats([](const MetricReport& r) { return r.wasserstein_in; });
    m["wasserstein_out"] = stats([](const MetricReport& r) { return r.wasserstein_out; });
    m["pct_best_in"] = 100.0 * wins_in[method] / n_units;
    m["pct_best_out"] = 100.0 * wins_out[method] / n_units;
    out[method] = m;
  }
  return out;
}

void write_results_csv(const std::vector<MetricReport>& rows, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot write '" + path + "'");
  out << MetricReport::csv_header() << "\n";
  for (const auto& r : rows) out << r.csv_row() << "\n";
}

std::vector<MetricReport> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open '" + path + "'");
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "empty results file");
  check(line == MetricReport::csv_header(), "unexpected results header in '" + path + "'");
  std::vector<MetricReport> rows;
  const auto parse_metric = [](const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    while (f.size() < 9) f.push_back("");
    check(f.size() == 9, "bad results row: " + line);
    MetricReport r;
    r.dataset = f[0];
    r.method = f[1];
    r.arm = std::stoi(f[2]);
    r.fold = std::stoi(f[3]);
    r.seed = std::stoull(f[4]);
    r.log_prob_in = parse_metric(f[5]);
    r.log_prob_out = parse_metric(f[6]);
    r.wasserstein_in = parse_metric(f[7]);
    r.wasserstein_out = parse_metric(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// --------------------------- train / evaluate -------------------------------

void train_fold(const ExperimentConfig& cfg, int fold, const std::string& checkpoint_dir) {
  cfg.validate();
  const auto data = load_dataset(cfg);
  const auto ctx = make_fold_context(data, cfg, fold);
  fs::create_directories(checkpoint_dir);
  std::shared_ptr<NuisanceModel> shared_nuisance;
  for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const std::string& method = cfg.methods[mi];
    nlohmann::json state;
    build_method(method, ctx, cfg, mix_seed(cfg.seed, 1000003ULL * fold + mi), shared_nuisance,
                 &state, nullptr);
    std::ofstream out(fs::path(checkpoint_dir) / (method + ".json"));
    out << state.dump() << "\n";
  }
  nlohmann::json manifest;
  manifest["config"] = cfg.to_json();
  manifest["fold"] = fold;
  std::ofstream out(fs::path(checkpoint_dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

std::vector<MetricReport> evaluate_fold(const ExperimentConfig& cfg, int fold,
                                        const std::string& checkpoint_dir) {
  cfg.validate();
  const auto data = load_dataset(cfg);
  const auto ctx = make_fold_context(data, cfg, fold);
  std::vector<MetricReport> rows;
  for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const std::string& method = cfg.methods[mi];
    const fs::path path = fs::path(checkpoint_dir) / (method + ".json");
    std::ifstream in(path);
    check(in.good(), "evaluate: missing checkpoint '" + path.string() + "'");
    nlohmann::json state = nlohmann::json::parse(in);
    std::shared_ptr<NuisanceModel> nuisance;  // rebuilt per checkpoint
    const std::uint64_t seed = mix_seed(cfg.seed, 1000003ULL * fold + mi);
    Evaluator ev = build_method(method, ctx, cfg, seed, nuisance, nullptr, &state);
    auto method_rows = evaluate_method(method, ev, ctx, cfg, fold, seed);
    rows.insert(rows.end(), method_rows.begin(), method_rows.end());
  }
  return rows;
}

}  // namespace ide
