#include "mlrvar/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "mlrvar/factor_models.hpp"
#include "mlrvar/rng.hpp"

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

void parallel_for(int n_tasks, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n_tasks <= 1) {
    for (int i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const int n_workers = std::min(threads, n_tasks);
  pool.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

namespace {

struct LambdaRule {
  enum class Kind { fixed, rate, bic } kind = Kind::bic;
  double value = 1.0;          // fixed value or rate multiplier
  std::vector<double> grid;    // explicit BIC grid (absolute values)
};

LambdaRule parse_lambda_rule(const std::string& text) {
  LambdaRule rule;
  if (text.empty()) return rule;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) {
      rule.kind = LambdaRule::Kind::fixed;
      rule.value = v;
      return rule;
    }
  } catch (const std::exception&) {
  }
  const std::size_t colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (head == "rate") {
    rule.kind = LambdaRule::Kind::rate;
    rule.value = tail.empty() ? 1.0 : std::stod(tail);
  } else if (head == "bic") {
    rule.kind = LambdaRule::Kind::bic;
    if (!tail.empty()) {
      std::stringstream ss(tail);
      std::string item;
      while (std::getline(ss, item, ',')) rule.grid.push_back(std::stod(item));
    }
  } else {
    throw std::invalid_argument("unknown lambda rule '" + text + "'");
  }
  return rule;
}

// Rate anchor for the joint factorized penalty. The raw high-dimensional
// rate sqrt(log(N^2 P)/T) applies to the Kronecker-product l1 norm, whose
// value is the product of the factor norms; dividing by the geometric mean
// of the per-factor products (computed at the initializer) expresses the
// anchor on the per-factor threshold scale.
double shorr_rate_lambda(const Design& d, const Tensor3d& init,
                         std::array<Index, 3> ranks) {
  const double dim = static_cast<double>(d.n_series() * d.n_series() * d.P);
  const double raw = std::sqrt(std::log(dim) / static_cast<double>(d.t_eff()));
  const TuckerDecompd d0 = hosvd_truncated(init, ranks);
  const double norm_prod = d0.U1.cwiseAbs().sum() * d0.U2.cwiseAbs().sum() *
                           d0.U3.cwiseAbs().sum();
  return raw / std::pow(std::max(norm_prod, 1e-12), 2.0 / 3.0);
}

std::vector<double> default_grid(double rate_value) {
  return {0.25 * rate_value, 0.5 * rate_value, rate_value, 2.0 * rate_value,
          4.0 * rate_value};
}

double generic_bic(const Design& d, const MatrixXd& a1, Index df) {
  const double t_eff = static_cast<double>(d.t_eff());
  const double n = static_cast<double>(d.n_series());
  const double rss = (d.Y - d.X * a1.transpose()).squaredNorm();
  return std::log(rss / (t_eff * n)) + static_cast<double>(df) * std::log(t_eff) / t_eff;
}

Index numerical_rank(const MatrixXd& m) {
  const VectorXd sv = Eigen::JacobiSVD<MatrixXd>(m).singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  Index r = 0;
  while (r < sv.size() && sv(r) > 1e-8 * sv(0)) ++r;
  return r;
}

MatrixXd residual_covariance(const Design& d, const Tensor3d& coeff) {
  const MatrixXd resid = d.Y - d.X * matricize(coeff, 1).transpose();
  return resid.transpose() * resid / static_cast<double>(d.t_eff());
}

// BIC over a penalty grid for the convex estimators; df is the nonzero
// count for the l1 penalty and the rank-based parameter count for the
// nuclear norm.
ConvexFit convex_fit_bic(const Design& d, bool nuclear,
                         const std::vector<double>& grid,
                         const ConvexOptions& opts, double* lambda_out) {
  double best_bic = std::numeric_limits<double>::infinity();
  ConvexFit best;
  for (double lambda : grid) {
    ConvexFit fit = nuclear ? fit_nn(d, lambda, opts) : fit_lasso(d, lambda, opts);
    const MatrixXd a1 = matricize(fit.coeff, 1);
    Index df;
    if (nuclear) {
      const Index r = numerical_rank(a1);
      df = r * (a1.rows() + a1.cols() - r);
    } else {
      df = (a1.cwiseAbs().array() > 1e-12).count();
    }
    const double bic = generic_bic(d, a1, df);
    if (bic < best_bic) {
      best_bic = bic;
      best = std::move(fit);
      if (lambda_out) *lambda_out = lambda;
    }
  }
  return best;
}

}  // namespace

FitReport fit_estimator(const Design& d, const FitRequest& req) {
  const auto start_time = std::chrono::steady_clock::now();
  FitReport report;
  report.estimator = req.estimator;
  report.seed = req.seed;

  std::array<Index, 3> ranks = req.ranks;
  if (req.auto_ranks) {
    const RankChoice choice = select_ranks_auto(d);
    ranks = choice.ranks;
  }
  report.ranks = ranks;

  const LambdaRule rule = parse_lambda_rule(req.lambda_rule);

  if (req.estimator == "ols") {
    report.coeff = fit_ols(d);
  } else if (req.estimator == "rrr") {
    if (ranks[0] < 1) throw std::invalid_argument("fit_estimator: rrr needs a rank");
    report.coeff = fit_rrr(d, ranks[0]);
  } else if (req.estimator == "nn" || req.estimator == "lasso") {
    const bool nuclear = req.estimator == "nn";
    const double rate = nuclear ? default_nn_lambda(d) : default_lasso_lambda(d);
    ConvexFit fit;
    double lambda = 0.0;
    switch (rule.kind) {
      case LambdaRule::Kind::fixed:
        lambda = rule.value;
        fit = nuclear ? fit_nn(d, lambda, req.convex) : fit_lasso(d, lambda, req.convex);
        break;
      case LambdaRule::Kind::rate:
        lambda = rule.value * rate;
        fit = nuclear ? fit_nn(d, lambda, req.convex) : fit_lasso(d, lambda, req.convex);
        break;
      case LambdaRule::Kind::bic:
        fit = convex_fit_bic(d, nuclear,
                             rule.grid.empty() ? default_grid(rate) : rule.grid,
                             req.convex, &lambda);
        break;
    }
    report.coeff = fit.coeff;
    report.lambda = lambda;
    report.objective_trace = std::move(fit.objective_trace);
    report.iterations = fit.iterations;
    report.converged = fit.converged;
  } else if (req.estimator == "mlr") {
    for (Index r : ranks)
      if (r < 1) throw std::invalid_argument("fit_estimator: mlr needs ranks");
    MlrFit fit;
    if (req.n_starts > 1) {
      const Tensor3d pre = d.t_eff() >= d.X.cols()
                               ? fit_rrr(d, d.n_series())
                               : fit_nn(d, default_nn_lambda(d)).coeff;
      fit = fit_mlr_multistart(d, ranks, pre, req.n_starts, req.seed, req.mlr);
    } else {
      fit = fit_mlr(d, ranks, req.mlr);
    }
    report.coeff = fit.coeff;
    report.decomp = fit.decomp;
    report.objective_trace = std::move(fit.objective_trace);
    report.iterations = fit.iterations;
    report.converged = fit.converged;
  } else if (req.estimator == "shorr") {
    for (Index r : ranks)
      if (r < 1) throw std::invalid_argument("fit_estimator: shorr needs ranks");
    const Tensor3d pre = fit_nn(d, default_nn_lambda(d)).coeff;
    ShorrFit fit;
    double lambda = 0.0;
    if (rule.kind == LambdaRule::Kind::bic) {
      const double anchor = shorr_rate_lambda(d, pre, ranks);
      const std::vector<double> grid =
          rule.grid.empty()
              ? std::vector<double>{anchor, 2 * anchor, 4 * anchor, 8 * anchor,
                                    16 * anchor}
              : rule.grid;
      BicSelection sel = select_lambda_bic(d, ranks, grid, req.shorr, pre);
      fit = std::move(sel.best);
      lambda = sel.lambda;
    } else {
      lambda = rule.kind == LambdaRule::Kind::fixed
                   ? rule.value
                   : rule.value * shorr_rate_lambda(d, pre, ranks);
      fit = req.n_starts > 1
                ? shorr_multistart(d, ranks, lambda, req.n_starts, req.seed, req.shorr)
                : fit_shorr(d, ranks, lambda, pre, req.shorr);
    }
    report.coeff = fit.coeff;
    report.decomp = fit.decomp;
    report.lambda = lambda;
    report.objective_trace = std::move(fit.objective_trace);
    report.iterations = fit.iterations;
    report.converged = fit.converged;
    report.primal_residual = fit.primal_residual;
    report.support = fit.support;
  } else {
    throw std::invalid_argument("fit_estimator: unknown estimator '" + req.estimator + "'");
  }

  report.sigma_eps = residual_covariance(d, report.coeff);
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time)
          .count();
  return report;
}

namespace {

struct RepOutcome {
  std::vector<double> values;
  bool ok = false;
};

// replication loop with per-task seeds, in-order reduction and the 10%
// failure budget
std::vector<RepOutcome> run_reps(int reps, int threads, std::uint64_t seed_base,
                                 std::vector<std::uint64_t>* seeds,
                                 const std::function<std::vector<double>(std::uint64_t)>& rep_fn) {
  std::vector<RepOutcome> outcomes(static_cast<std::size_t>(reps));
  std::vector<std::uint64_t> rep_seeds(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r)
    rep_seeds[static_cast<std::size_t>(r)] =
        derive_seed(seed_base, static_cast<std::uint64_t>(r));
  parallel_for(reps, threads, [&](int r) {
    try {
      outcomes[static_cast<std::size_t>(r)].values =
          rep_fn(rep_seeds[static_cast<std::size_t>(r)]);
      outcomes[static_cast<std::size_t>(r)].ok = true;
    } catch (const std::exception&) {
      outcomes[static_cast<std::size_t>(r)].ok = false;
    }
  });
  if (seeds)
    seeds->insert(seeds->end(), rep_seeds.begin(), rep_seeds.end());
  return outcomes;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void check_failure_budget(int failures, int reps) {
  if (failures * 10 > reps)
    throw std::runtime_error("run_experiment: " + std::to_string(failures) + " of " +
                             std::to_string(reps) + " replications failed");
}

std::array<Index, 3> truth_ranks(const ExperimentSpec& spec) {
  if (spec.dgp_kind == DgpKind::superdiagonal_core) {
    const Index r = spec.dgp.superdiagonal.size();
    return {r, r, r};
  }
  return spec.dgp.ranks;
}

ExperimentResult experiment_rank_consistency(const ExperimentSpec& spec) {
  ExperimentResult result;
  result.summary.columns = {"T", "prop_correct", "reps", "failures"};
  result.raw.columns = {"T", "seed_low32", "correct"};
  const std::array<Index, 3> truth = truth_ranks(spec);

  for (std::size_t ti = 0; ti < spec.t_grid.size(); ++ti) {
    const Index t_len = spec.t_grid[ti];
    auto outcomes = run_reps(
        spec.replications, spec.threads, derive_seed(spec.seed, ti), &result.rep_seeds,
        [&](std::uint64_t rep_seed) -> std::vector<double> {
          const Dgp dgp = make_dgp(spec.dgp_kind, spec.dgp, rep_seed);
          const TimeSeries ts =
              simulate(dgp.model, t_len, kDefaultBurnIn, derive_seed(rep_seed, 1));
          const Design d = build_design(ts, spec.dgp.P);
          const RankChoice choice = select_ranks_auto(d);
          return {choice.ranks == truth ? 1.0 : 0.0};
        });
    int failures = 0;
    std::vector<double> correct;
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      if (!outcomes[r].ok) {
        ++failures;
        continue;
      }
      correct.push_back(outcomes[r].values[0]);
      result.raw.rows.push_back(
          {static_cast<double>(t_len),
           static_cast<double>(result.rep_seeds[result.rep_seeds.size() -
                                                outcomes.size() + r] & 0xFFFFFFFFULL),
           outcomes[r].values[0]});
    }
    check_failure_budget(failures, spec.replications);
    result.failures += failures;
    result.summary.rows.push_back({static_cast<double>(t_len), mean_of(correct),
                                   static_cast<double>(correct.size()),
                                   static_cast<double>(failures)});
  }
  return result;
}

ExperimentResult experiment_bias_variance(const ExperimentSpec& spec) {
  ExperimentResult result;
  result.summary.columns = {"T",         "sq_bias_ols", "evar_ols", "avar_ols",
                            "sq_bias_rrr", "evar_rrr",  "avar_rrr", "sq_bias_mlr",
                            "evar_mlr",  "avar_mlr",    "failures"};
  const Dgp dgp = make_dgp(spec.dgp_kind, spec.dgp, spec.seed);
  for (std::size_t ti = 0; ti < spec.t_grid.size(); ++ti) {
    const Index t_len = spec.t_grid[ti];
    const EmpiricalVsAsymptotic rep = empirical_vs_asymptotic(
        dgp.model, spec.dgp.ranks, t_len, spec.replications,
        derive_seed(spec.seed, 1000 + ti));
    check_failure_budget(rep.failures, spec.replications);
    result.failures += rep.failures;
    result.summary.rows.push_back(
        {static_cast<double>(t_len), rep.ols.sq_bias, rep.ols.evar, rep.ols.avar,
         rep.rrr.sq_bias, rep.rrr.evar, rep.rrr.avar, rep.mlr.sq_bias, rep.mlr.evar,
         rep.mlr.avar, static_cast<double>(rep.failures)});
  }
  return result;
}

ExperimentResult experiment_gamma_scaling(const ExperimentSpec& spec) {
  ExperimentResult result;
  result.summary.columns = {"gamma",      "T",          "mse_mean",  "mse_sd",
                            "max_orth_gap", "max_ao_gap", "max_primal", "reps",
                            "failures"};
  result.raw.columns = {"gamma", "T", "sq_error", "orth_gap", "ao_gap", "primal",
                        "converged"};
  const auto [s1, s2, s3] = spec.dgp.sparsity;
  const double big_s = static_cast<double>(s1 * s2 * s3);
  const double log_dim =
      std::log(static_cast<double>(spec.dgp.N * spec.dgp.N * spec.dgp.P));

  for (std::size_t gi = 0; gi < spec.gamma_grid.size(); ++gi) {
    const double gamma = spec.gamma_grid[gi];
    const Index t_len = static_cast<Index>(std::lround(big_s * log_dim / gamma));
    auto outcomes = run_reps(
        spec.replications, spec.threads, derive_seed(spec.seed, 2000 + gi),
        &result.rep_seeds, [&](std::uint64_t rep_seed) -> std::vector<double> {
          const Dgp dgp = make_dgp(spec.dgp_kind, spec.dgp, rep_seed);
          const TimeSeries ts =
              simulate(dgp.model, t_len, kDefaultBurnIn, derive_seed(rep_seed, 1));
          const Design d = build_design(ts, spec.dgp.P);
          FitRequest req;
          req.estimator = "shorr";
          req.ranks = spec.dgp.ranks;
          req.lambda_rule = spec.lambda_rule;
          req.shorr = spec.shorr;
          req.seed = rep_seed;
          const FitReport fit = fit_estimator(d, req);

          // constraint diagnostics for the converged-fit acceptance checks
          double orth_gap = 0.0;
          if (fit.decomp) {
            for (const MatrixXd& u : {fit.decomp->U1, fit.decomp->U2, fit.decomp->U3})
              orth_gap = std::max(
                  orth_gap, (u.transpose() * u -
                             MatrixXd::Identity(u.cols(), u.cols()))
                                .cwiseAbs()
                                .maxCoeff());
          }
          double ao_gap = 0.0, primal = 0.0;
          if (fit.decomp) {
            for (int mode = 1; mode <= 3; ++mode) {
              const MatrixXd g = matricize(fit.decomp->core, mode);
              const MatrixXd gram = g * g.transpose();
              const double scale = std::max(gram.diagonal().maxCoeff(), 1e-30);
              const MatrixXd off = gram - MatrixXd(gram.diagonal().asDiagonal());
              ao_gap = std::max(ao_gap, off.cwiseAbs().maxCoeff() / scale);
            }
          }
          primal = fit.primal_residual.value_or(0.0);
          const double err = (fit.coeff - dgp.model.coeff).norm();
          return {err * err, orth_gap, ao_gap, primal,
                  fit.converged ? 1.0 : 0.0};
        });
    int failures = 0;
    std::vector<double> sq, orth, ao, primal;
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      if (!outcomes[r].ok) {
        ++failures;
        continue;
      }
      const auto& v = outcomes[r].values;
      sq.push_back(v[0]);
      orth.push_back(v[1]);
      ao.push_back(v[2]);
      primal.push_back(v[3]);
      result.raw.rows.push_back({gamma, static_cast<double>(t_len), v[0], v[1], v[2],
                                 v[3], v[4]});
    }
    check_failure_budget(failures, spec.replications);
    result.failures += failures;
    result.summary.rows.push_back(
        {gamma, static_cast<double>(t_len), mean_of(sq), sd_of(sq),
         orth.empty() ? 0.0 : *std::max_element(orth.begin(), orth.end()),
         ao.empty() ? 0.0 : *std::max_element(ao.begin(), ao.end()),
         primal.empty() ? 0.0 : *std::max_element(primal.begin(), primal.end()),
         static_cast<double>(sq.size()), static_cast<double>(failures)});
  }
  return result;
}

ExperimentResult experiment_estimator_comparison(const ExperimentSpec& spec) {
  ExperimentResult result;
  result.summary.columns = {"T"};
  for (const std::string& est : spec.estimators) {
    result.summary.columns.push_back("mean_" + est);
    result.summary.columns.push_back("sd_" + est);
  }
  result.summary.columns.push_back("failures");
  result.raw.columns = {"T"};
  for (const std::string& est : spec.estimators)
    result.raw.columns.push_back("err_" + est);

  for (std::size_t ti = 0; ti < spec.t_grid.size(); ++ti) {
    const Index t_len = spec.t_grid[ti];
    auto outcomes = run_reps(
        spec.replications, spec.threads, derive_seed(spec.seed, 3000 + ti),
        &result.rep_seeds, [&](std::uint64_t rep_seed) -> std::vector<double> {
          const Dgp dgp = make_dgp(spec.dgp_kind, spec.dgp, rep_seed);
          const TimeSeries ts =
              simulate(dgp.model, t_len, kDefaultBurnIn, derive_seed(rep_seed, 1));
          const Design d = build_design(ts, spec.dgp.P);
          const RankChoice choice = select_ranks_auto(d);
          std::vector<double> errors;
          errors.reserve(spec.estimators.size());
          for (const std::string& est : spec.estimators) {
            FitRequest req;
            req.estimator = est;
            req.ranks = choice.ranks;
            req.lambda_rule = spec.lambda_rule;
            req.shorr = spec.shorr;
            req.seed = rep_seed;
            const FitReport fit = fit_estimator(d, req);
            errors.push_back((fit.coeff - dgp.model.coeff).norm());
          }
          return errors;
        });
    int failures = 0;
    std::vector<std::vector<double>> per_est(spec.estimators.size());
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      if (!outcomes[r].ok) {
        ++failures;
        continue;
      }
      std::vector<double> raw_row{static_cast<double>(t_len)};
      for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
        per_est[e].push_back(outcomes[r].values[e]);
        raw_row.push_back(outcomes[r].values[e]);
      }
      result.raw.rows.push_back(std::move(raw_row));
    }
    check_failure_budget(failures, spec.replications);
    result.failures += failures;
    std::vector<double> row{static_cast<double>(t_len)};
    for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
      row.push_back(mean_of(per_est[e]));
      row.push_back(sd_of(per_est[e]));
    }
    row.push_back(static_cast<double>(failures));
    result.summary.rows.push_back(std::move(row));
  }
  return result;
}

ExperimentResult experiment_factor_comparison(const ExperimentSpec& spec) {
  ExperimentResult result;
  result.summary.columns = {"T",
                            "sub_sfm_mean",
                            "sub_mlr_mean",
                            "pred_dfm_mean",
                            "pred_mlr_mean",
                            "failures"};
  result.raw.columns = {"T", "sub_sfm", "sub_mlr", "pred_dfm", "pred_mlr"};
  const bool dfm_dgp =
      spec.dgp_kind == DgpKind::dfm1 || spec.dgp_kind == DgpKind::dfm2;

  for (std::size_t ti = 0; ti < spec.t_grid.size(); ++ti) {
    const Index t_len = spec.t_grid[ti];
    auto outcomes = run_reps(
        spec.replications, spec.threads, derive_seed(spec.seed, 4000 + ti),
        &result.rep_seeds, [&](std::uint64_t rep_seed) -> std::vector<double> {
          const Dgp dgp = make_dgp(spec.dgp_kind, spec.dgp, rep_seed);
          TimeSeries ts;
          MatrixXd truth_basis;     // span target for the subspace metric
          VectorXd truth_mean;      // E(y_{T+1} | F_T)
          Index factor_count, var_p;
          if (dfm_dgp) {
            const DfmSimulation sim = simulate_dfm(*dgp.dfm, t_len, kDefaultBurnIn,
                                                   derive_seed(rep_seed, 1));
            ts = sim.ys;
            truth_basis = dgp.dfm->loadings;
            truth_mean = dgp.dfm->loadings * dgp.dfm->transition *
                         sim.factors.row(sim.factors.rows() - 1).transpose();
            factor_count = dgp.dfm->loadings.cols();
            var_p = 1;
          } else {
            ts = simulate(dgp.model, t_len, kDefaultBurnIn, derive_seed(rep_seed, 1));
            truth_basis = dgp.truth->U1;
            truth_mean = one_step_forecast(dgp.model.coeff, ts.values);
            factor_count = dgp.truth->core.dim(1);
            var_p = spec.dgp.P;
          }

          const Design d = build_design(ts, var_p);
          const RankChoice choice = select_ranks_auto(d);
          FitRequest req;
          req.estimator = "mlr";
          req.ranks = choice.ranks;
          req.seed = rep_seed;
          const FitReport mlr = fit_estimator(d, req);

          const SfmFit sfm = fit_sfm(ts, factor_count);
          const double sub_sfm = subspace_distance(sfm.loadings, truth_basis);
          const double sub_mlr = subspace_distance(mlr.decomp->U1, truth_basis);
          const DfmForecast dfm = dfm_forecast(ts, factor_count, 1);
          const VectorXd mlr_pred = one_step_forecast(mlr.coeff, ts.values);
          return {sub_sfm * sub_sfm, sub_mlr * sub_mlr,
                  (dfm.forecast - truth_mean).norm(),
                  (mlr_pred - truth_mean).norm()};
        });
    int failures = 0;
    std::array<std::vector<double>, 4> metric;
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      if (!outcomes[r].ok) {
        ++failures;
        continue;
      }
      std::vector<double> raw_row{static_cast<double>(t_len)};
      for (int m = 0; m < 4; ++m) {
        metric[static_cast<std::size_t>(m)].push_back(outcomes[r].values[static_cast<std::size_t>(m)]);
        raw_row.push_back(outcomes[r].values[static_cast<std::size_t>(m)]);
      }
      result.raw.rows.push_back(std::move(raw_row));
    }
    check_failure_budget(failures, spec.replications);
    result.failures += failures;
    result.summary.rows.push_back({static_cast<double>(t_len), mean_of(metric[0]),
                                   mean_of(metric[1]), mean_of(metric[2]),
                                   mean_of(metric[3]),
                                   static_cast<double>(failures)});
  }
  return result;
}

ExperimentResult experiment_rolling(const ExperimentSpec& spec) {
  const Dgp dgp = make_dgp(spec.dgp_kind, spec.dgp, spec.seed);
  const Index t_len = spec.t_grid.empty() ? spec.last_end + 1 : spec.t_grid[0];
  const TimeSeries ts =
      simulate(dgp.model, t_len, kDefaultBurnIn, derive_seed(spec.seed, 1));
  RollingSpec roll;
  roll.P = spec.dgp.P;
  roll.first_end = spec.first_end;
  roll.last_end = spec.last_end;
  roll.window_length = spec.window_length;
  roll.estimators = spec.estimators;
  roll.lambda_rule = spec.lambda_rule;
  roll.seed = spec.seed;
  roll.shorr = spec.shorr;
  const RollingResult res = rolling_forecast(ts, roll);

  ExperimentResult result;
  result.summary.columns = {"estimator_index", "l2", "linf", "windows_used",
                            "windows_skipped"};
  for (std::size_t e = 0; e < res.estimators.size(); ++e)
    result.summary.rows.push_back({static_cast<double>(e), res.l2[e], res.linf[e],
                                   static_cast<double>(res.windows_used),
                                   static_cast<double>(res.windows_skipped)});
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.replications < 1)
    throw std::invalid_argument("run_experiment: replications must be >= 1");
  switch (spec.kind) {
    case ExperimentKind::rank_consistency: return experiment_rank_consistency(spec);
    case ExperimentKind::bias_variance: return experiment_bias_variance(spec);
    case ExperimentKind::gamma_scaling: return experiment_gamma_scaling(spec);
    case ExperimentKind::estimator_comparison:
      return experiment_estimator_comparison(spec);
    case ExperimentKind::factor_comparison: return experiment_factor_comparison(spec);
    case ExperimentKind::rolling_forecast: return experiment_rolling(spec);
  }
  throw std::invalid_argument("run_experiment: unknown experiment kind");
}

RollingResult rolling_forecast(const TimeSeries& ts, const RollingSpec& spec) {
  const Index t_len = ts.length();
  if (spec.first_end <= spec.P || spec.last_end < spec.first_end ||
      spec.last_end >= t_len)
    throw std::invalid_argument("rolling_forecast: invalid window range");

  RollingResult result;
  result.estimators = spec.estimators;
  std::array<Index, 3> ranks = spec.ranks;
  double shorr_lambda = -1.0;

  std::vector<std::vector<double>> stacked(spec.estimators.size());
  for (Index end = spec.first_end; end <= spec.last_end; ++end) {
    const Index start = spec.window_length > 0
                            ? std::max<Index>(0, end - spec.window_length)
                            : 0;
    TimeSeries history;
    history.values = ts.values.middleRows(start, end - start);
    history.names = ts.names;
    try {
      const Design d = build_design(history, spec.P);
      if (end == spec.first_end) {
        if (spec.auto_ranks) ranks = select_ranks_auto(d).ranks;
        result.ranks_used = ranks;
        // tuning selected once, on the first window, then held fixed
        const LambdaRule rule = parse_lambda_rule(spec.lambda_rule);
        if (rule.kind == LambdaRule::Kind::bic) {
          for (const std::string& est : spec.estimators)
            if (est == "shorr") {
              const Tensor3d pre = fit_nn(d, default_nn_lambda(d)).coeff;
              const double anchor = shorr_rate_lambda(d, pre, ranks);
              const std::vector<double> grid =
                  rule.grid.empty()
                      ? std::vector<double>{anchor, 2 * anchor, 4 * anchor,
                                            8 * anchor, 16 * anchor}
                      : rule.grid;
              BicSelection sel = select_lambda_bic(d, ranks, grid, spec.shorr, pre);
              shorr_lambda = sel.lambda;
            }
        }
      }

      std::vector<VectorXd> forecasts;
      forecasts.reserve(spec.estimators.size());
      for (const std::string& est : spec.estimators) {
        FitRequest req;
        req.estimator = est;
        req.ranks = ranks;
        req.lambda_rule = spec.lambda_rule;
        req.shorr = spec.shorr;
        req.seed = spec.seed;
        if (est == "shorr" && shorr_lambda > 0.0) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.17g", shorr_lambda);
          req.lambda_rule = buf;
        }
        const FitReport fit = fit_estimator(d, req);
        forecasts.push_back(one_step_forecast(fit.coeff, history.values));
      }
      const VectorXd actual = ts.values.row(end).transpose();
      for (std::size_t e = 0; e < forecasts.size(); ++e) {
        const VectorXd err = actual - forecasts[e];
        for (Index i = 0; i < err.size(); ++i) stacked[e].push_back(err(i));
      }
      ++result.windows_used;
    } catch (const std::exception&) {
      ++result.windows_skipped;
    }
  }

  result.l2.resize(spec.estimators.size(), 0.0);
  result.linf.resize(spec.estimators.size(), 0.0);
  for (std::size_t e = 0; e < stacked.size(); ++e) {
    double sq = 0.0, mx = 0.0;
    for (double v : stacked[e]) {
      sq += v * v;
      mx = std::max(mx, std::abs(v));
    }
    result.l2[e] = std::sqrt(sq);
    result.linf[e] = mx;
  }
  return result;
}

void write_table_csv(const ResultTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_table_csv: cannot open '" + path + "'");
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out << ',';
    out << table.columns[c];
  }
  out << '\n';
  char buf[64];
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

void write_summary_json(const ExperimentSpec& spec, const ExperimentResult& result,
                        const std::string& path) {
  json doc;
  doc["schema_version"] = 1;
  doc["experiment"] = static_cast<int>(spec.kind);
  doc["seed"] = spec.seed;
  doc["replications"] = spec.replications;
  doc["estimators"] = spec.estimators;
  doc["lambda_rule"] = spec.lambda_rule;
  doc["failures"] = result.failures;
  doc["rep_seeds"] = result.rep_seeds;
  json table;
  table["columns"] = result.summary.columns;
  table["rows"] = result.summary.rows;
  doc["summary"] = table;
  std::ofstream out(path);
  if (!out) throw DataError("write_summary_json: cannot open '" + path + "'");
  out << doc.dump(2) << '\n';
}

}  // namespace mlrvar
