// Command-line front end: simulate / fit / select-rank / forecast / benchmark.
// Exit codes: 0 success, 2 argument or configuration error, 3 data error,
// 4 numerical failure.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mlrvar/experiments.hpp"
#include "mlrvar/factor_models.hpp"
#include "mlrvar/io.hpp"
#include "mlrvar/rng.hpp"
#include "mlrvar/selection.hpp"
#include "mlrvar/var_process.hpp"

using namespace mlrvar;
using Eigen::Index;
using nlohmann::json;

namespace {

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<Index> parse_index_list(const std::string& text) {
  std::vector<Index> out;
  for (double v : parse_double_list(text)) out.push_back(static_cast<Index>(v));
  return out;
}

std::array<Index, 3> parse_rank_triple(const std::string& text) {
  const auto values = parse_index_list(text);
  if (values.size() != 3)
    throw std::invalid_argument("expected three comma-separated ranks, got '" + text + "'");
  return {values[0], values[1], values[2]};
}

DgpKind parse_dgp_kind(const std::string& text) {
  if (text == "superdiagonal_core") return DgpKind::superdiagonal_core;
  if (text == "scaled_random_core") return DgpKind::scaled_random_core;
  if (text == "sparse_factor") return DgpKind::sparse_factor;
  if (text == "dfm1") return DgpKind::dfm1;
  if (text == "dfm2") return DgpKind::dfm2;
  if (text == "sfm_equivalent") return DgpKind::sfm_equivalent;
  throw std::invalid_argument("unknown dgp kind '" + text + "'");
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  if (text == "rank_consistency") return ExperimentKind::rank_consistency;
  if (text == "bias_variance") return ExperimentKind::bias_variance;
  if (text == "gamma_scaling") return ExperimentKind::gamma_scaling;
  if (text == "estimator_comparison") return ExperimentKind::estimator_comparison;
  if (text == "factor_comparison") return ExperimentKind::factor_comparison;
  if (text == "rolling_forecast") return ExperimentKind::rolling_forecast;
  throw std::invalid_argument("unknown experiment kind '" + text + "'");
}

template <typename T>
bool maybe(const Config& config, const std::string& key, T* out) {
  const auto it = config.find(key);
  if (it == config.end()) return false;
  if constexpr (std::is_same_v<T, std::string>) {
    *out = it->second;
  } else if constexpr (std::is_same_v<T, bool>) {
    *out = it->second == "true" || it->second == "1" || it->second == "yes";
  } else if constexpr (std::is_integral_v<T>) {
    *out = static_cast<T>(std::stoll(it->second));
  } else {
    *out = static_cast<T>(std::stod(it->second));
  }
  return true;
}

ShorrOptions shorr_options_from(const Config& config) {
  ShorrOptions opts;
  double rho = 0.0;
  if (maybe(config, "rho", &rho)) opts.rho = {rho, rho, rho};
  maybe(config, "kappa", &opts.inner.kappa);
  maybe(config, "outer_tol", &opts.outer_tol);
  maybe(config, "outer_max_iter", &opts.outer_max_iter);
  maybe(config, "inner_tol", &opts.inner.tol);
  maybe(config, "inner_max_iter", &opts.inner.max_iter);
  maybe(config, "soc_max_iter", &opts.inner.soc_max_iter);
  maybe(config, "adaptive_penalty", &opts.adaptive_penalty);
  return opts;
}

int cmd_simulate(const std::string& kind_text, Index n, Index p,
                 const std::string& ranks_text, const std::string& sparsity_text,
                 const std::string& superdiag_text, Index t_len, Index burn_in,
                 std::uint64_t seed, const std::string& out_path) {
  DgpParams params;
  params.N = n;
  params.P = p;
  if (!ranks_text.empty()) params.ranks = parse_rank_triple(ranks_text);
  if (!sparsity_text.empty()) params.sparsity = parse_rank_triple(sparsity_text);
  if (!superdiag_text.empty()) {
    const auto values = parse_double_list(superdiag_text);
    params.superdiagonal =
        Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
  }
  const DgpKind kind = parse_dgp_kind(kind_text);
  const Dgp dgp = make_dgp(kind, params, seed);
  TimeSeries ts;
  if (kind == DgpKind::dfm1 || kind == DgpKind::dfm2)
    ts = simulate_dfm(*dgp.dfm, t_len, burn_in, derive_seed(seed, 1)).ys;
  else
    ts = simulate(dgp.model, t_len, burn_in, derive_seed(seed, 1));
  write_csv(ts, out_path);
  std::cout << "wrote " << ts.length() << " x " << ts.width() << " series to "
            << out_path << "\n";
  return 0;
}

int cmd_fit(const std::string& data_path, const std::string& config_path,
            const std::string& out_path, std::uint64_t seed_flag, bool seed_given) {
  const Config config = config_path.empty() ? Config{} : read_config(config_path);
  TimeSeries ts = read_csv(data_path);

  bool do_standardize = false;
  maybe(config, "standardize", &do_standardize);
  if (do_standardize) ts = standardize(ts).values;

  Index p = 1;
  maybe(config, "P", &p);

  FitRequest req;
  req.estimator = "mlr";
  maybe(config, "estimator", &req.estimator);
  std::string ranks_text = "auto";
  maybe(config, "ranks", &ranks_text);
  if (ranks_text == "auto")
    req.auto_ranks = true;
  else
    req.ranks = parse_rank_triple(ranks_text);
  maybe(config, "lambda", &req.lambda_rule);
  maybe(config, "n_starts", &req.n_starts);
  req.shorr = shorr_options_from(config);
  maybe(config, "mlr_tol", &req.mlr.tol);
  maybe(config, "mlr_max_cycles", &req.mlr.max_cycles);
  maybe(config, "convex_tol", &req.convex.tol);
  std::uint64_t seed = 0;
  maybe(config, "seed", &seed);
  if (seed_given) seed = seed_flag;
  req.seed = seed;

  const Design d = build_design(ts, p);
  FitReport report = fit_estimator(d, req);

  std::string config_dump;
  for (const auto& [k, v] : config) config_dump += k + "=" + v + ";";
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_dump)));
  report.config_hash = hash_buf;
  save_model(report, out_path);

  json summary;
  summary["estimator"] = report.estimator;
  summary["ranks"] = report.ranks;
  if (report.lambda) summary["lambda"] = *report.lambda;
  summary["iterations"] = report.iterations;
  summary["converged"] = report.converged;
  summary["elapsed_seconds"] = report.elapsed_seconds;
  summary["model_path"] = out_path;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_select_rank(const std::string& data_path, Index p, double c,
                    const std::string& out_path) {
  const TimeSeries ts = read_csv(data_path);
  const Design d = build_design(ts, p);
  RankChoice choice;
  if (c > 0.0) {
    const Tensor3d pre = fit_nn(d, default_nn_lambda(d)).coeff;
    choice = select_ranks(pre, c);
    choice.initial_estimator = "nn";
  } else {
    choice = select_ranks_auto(d);
  }
  json doc;
  doc["ranks"] = choice.ranks;
  doc["c"] = choice.c;
  doc["initial_estimator"] = choice.initial_estimator;
  doc["ratios"] = choice.ratios;
  std::cout << doc.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("select-rank: cannot open '" + out_path + "'");
    out << doc.dump(2) << "\n";
  }
  return 0;
}

int cmd_forecast(const std::string& model_path, const std::string& data_path,
                 const std::string& out_path) {
  const FitReport report = load_model(model_path);
  const TimeSeries ts = read_csv(data_path);
  const Eigen::VectorXd forecast = one_step_forecast(report.coeff, ts.values);
  TimeSeries out;
  out.values = forecast.transpose();
  out.names = ts.names;
  write_csv(out, out_path);
  std::cout << "wrote one-step forecast to " << out_path << "\n";
  return 0;
}

int cmd_benchmark(const std::string& spec_path, const std::string& out_prefix,
                  int threads) {
  const Config config = read_config(spec_path);
  ExperimentSpec spec;
  std::string text;
  if (!maybe(config, "experiment", &text))
    throw std::invalid_argument("benchmark: spec needs an 'experiment' key");
  spec.kind = parse_experiment_kind(text);
  if (maybe(config, "dgp", &text)) spec.dgp_kind = parse_dgp_kind(text);
  maybe(config, "n", &spec.dgp.N);
  maybe(config, "p", &spec.dgp.P);
  if (maybe(config, "ranks", &text)) spec.dgp.ranks = parse_rank_triple(text);
  if (maybe(config, "sparsity", &text)) spec.dgp.sparsity = parse_rank_triple(text);
  if (maybe(config, "superdiag", &text)) {
    const auto values = parse_double_list(text);
    spec.dgp.superdiagonal =
        Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
  }
  if (maybe(config, "t_grid", &text)) spec.t_grid = parse_index_list(text);
  if (maybe(config, "gamma_grid", &text)) spec.gamma_grid = parse_double_list(text);
  maybe(config, "replications", &spec.replications);
  maybe(config, "seed", &spec.seed);
  if (maybe(config, "estimators", &text)) {
    spec.estimators.clear();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) spec.estimators.push_back(item);
  }
  maybe(config, "lambda", &spec.lambda_rule);
  maybe(config, "first_end", &spec.first_end);
  maybe(config, "last_end", &spec.last_end);
  maybe(config, "window_length", &spec.window_length);
  spec.shorr = shorr_options_from(config);
  spec.threads = threads;

  const ExperimentResult result = run_experiment(spec);
  write_table_csv(result.summary, out_prefix + "_summary.csv");
  if (!result.raw.columns.empty())
    write_table_csv(result.raw, out_prefix + "_raw.csv");
  write_summary_json(spec, result, out_prefix + "_summary.json");
  std::cout << "wrote " << out_prefix << "_summary.{csv,json}"
            << (result.raw.columns.empty() ? "" : " and raw replication table")
            << "; failures " << result.failures << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tucker-structured low-rank VAR estimation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for replication loops");

  auto* sim = app.add_subcommand("simulate", "draw a model and write a simulated series");
  std::string sim_kind = "superdiagonal_core", sim_ranks, sim_sparsity, sim_superdiag = "2,2,2";
  Index sim_n = 10, sim_p = 5, sim_t = 400, sim_burn = kDefaultBurnIn;
  std::uint64_t sim_seed = 1;
  std::string sim_out = "series.csv";
  sim->add_option("--dgp", sim_kind, "dgp kind");
  sim->add_option("--n", sim_n, "series dimension");
  sim->add_option("--p", sim_p, "lag order");
  sim->add_option("--ranks", sim_ranks, "r1,r2,r3");
  sim->add_option("--sparsity", sim_sparsity, "s1,s2,s3");
  sim->add_option("--superdiag", sim_superdiag, "superdiagonal core values");
  sim->add_option("-T,--length", sim_t, "observations to keep");
  sim->add_option("--burn-in", sim_burn, "burn-in discarded");
  sim->add_option("--seed", sim_seed, "master seed");
  sim->add_option("--out", sim_out, "output CSV path");

  auto* fit = app.add_subcommand("fit", "fit an estimator and save the model");
  std::string fit_data, fit_config, fit_out = "model.json";
  std::uint64_t fit_seed = 0;
  bool fit_seed_given = false;
  fit->add_option("--data", fit_data, "input series CSV")->required();
  fit->add_option("--config", fit_config, "key = value configuration file");
  fit->add_option("--out", fit_out, "model JSON path");
  fit->add_option("--seed", fit_seed, "seed override")
      ->each([&](const std::string&) { fit_seed_given = true; });

  auto* rank = app.add_subcommand("select-rank", "ridge-ratio rank selection");
  std::string rank_data, rank_out;
  Index rank_p = 1;
  double rank_c = -1.0;
  rank->add_option("--data", rank_data, "input series CSV")->required();
  rank->add_option("--p", rank_p, "lag order");
  rank->add_option("--c", rank_c, "ridge parameter (default: auto)");
  rank->add_option("--out", rank_out, "optional JSON output path");

  auto* fc = app.add_subcommand("forecast", "one-step forecast from a saved model");
  std::string fc_model, fc_data, fc_out = "forecast.csv";
  fc->add_option("--model", fc_model, "model JSON")->required();
  fc->add_option("--data", fc_data, "history CSV")->required();
  fc->add_option("--out", fc_out, "forecast CSV path");

  auto* bench = app.add_subcommand("benchmark", "run an experiment spec");
  std::string bench_spec, bench_out = "experiment";
  bench->add_option("--spec", bench_spec, "experiment configuration file")->required();
  bench->add_option("--out", bench_out, "output path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_kind, sim_n, sim_p, sim_ranks, sim_sparsity,
                          sim_superdiag, sim_t, sim_burn, sim_seed, sim_out);
    if (fit->parsed())
      return cmd_fit(fit_data, fit_config, fit_out, fit_seed, fit_seed_given);
    if (rank->parsed()) return cmd_select_rank(rank_data, rank_p, rank_c, rank_out);
    if (fc->parsed()) return cmd_forecast(fc_model, fc_data, fc_out);
    if (bench->parsed()) return cmd_benchmark(bench_spec, bench_out, threads);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
