// Command-line front end for the mixed-model moment estimation library.
//
// Subcommands:
//   fit           estimate fixed effects and error/effect moments from a CSV
//   simulate      generate a synthetic grouped dataset plus its truth spec
//   mc            Monte Carlo study: replicate simulate -> fit -> estimate
//   check-oracle  verify the closed-form estimators against brute force
//
// Exit codes: 0 success, 1 check failure or runtime failure, 2 usage or
// input error, 3 singular design or unexpected internal error.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lmmom/asymptotics.hpp"
#include "lmmom/dataset.hpp"
#include "lmmom/errors.hpp"
#include "lmmom/firststep.hpp"
#include "lmmom/gls.hpp"
#include "lmmom/mc.hpp"
#include "lmmom/moments.hpp"
#include "lmmom/oracle.hpp"
#include "lmmom/sim.hpp"

namespace {

using nlohmann::json;

std::string fmt(double v) { return lmmom::detail::format_double(v); }

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct FitArgs {
  std::string data_path;
  std::vector<int> orders{2, 3, 4};
  std::string variant = "efficient";
  std::string policy = "drop";
  std::string spec_path;
  std::string out = "table";
};

std::vector<int> normalize_orders(std::vector<int> orders) {
  if (orders.empty()) throw lmmom::UsageError("--orders must not be empty");
  std::sort(orders.begin(), orders.end());
  orders.erase(std::unique(orders.begin(), orders.end()), orders.end());
  for (const int k : orders) {
    if (k < 2 || k > 4) {
      throw lmmom::UsageError("--orders entries must be 2, 3, or 4");
    }
  }
  return orders;
}

json estimates_json(const lmmom::MomentEstimates& est) {
  json block;
  block["variant"] = lmmom::variant_name(est.variant);
  json ge, gb, nu, Nu;
  for (const auto& [k, v] : est.eps) ge[std::to_string(k)] = v;
  for (const auto& [k, v] : est.b) gb[std::to_string(k)] = v;
  for (const auto& [k, v] : est.groups_used) nu[std::to_string(k)] = v;
  for (const auto& [k, v] : est.rows_used) Nu[std::to_string(k)] = v;
  block["gamma_eps"] = std::move(ge);
  block["gamma_b"] = std::move(gb);
  block["n_used"] = std::move(nu);
  block["N_used"] = std::move(Nu);
  block["warnings"] = est.warnings;
  return block;
}

void print_estimates_table(const lmmom::MomentEstimates& est,
                           const lmmom::StandardErrors* se, std::ostream& os) {
  os << lmmom::variant_name(est.variant) << " estimates:\n";
  for (const auto& [k, v] : est.eps) {
    os << "  gamma_eps" << k << " = " << fmt(v);
    if (se) {
      const auto it = se->se.find("eps" + std::to_string(k));
      if (it != se->se.end()) os << "  (se " << fmt(it->second) << ")";
    }
    os << "\n";
  }
  for (const auto& [k, v] : est.b) {
    os << "  gamma_b" << k << "   = " << fmt(v);
    if (se) {
      const auto it = se->se.find("b" + std::to_string(k));
      if (it != se->se.end()) os << "  (se " << fmt(it->second) << ")";
    }
    os << "\n";
  }
  for (const auto& [k, v] : est.groups_used) {
    os << "  order " << k << " used " << v << " groups, "
       << est.rows_used.at(k) << " rows\n";
  }
  for (const auto& w : est.warnings) os << "  warning: " << w << "\n";
  if (se) {
    for (const auto& o : se->omitted) os << "  se omitted: " << o << "\n";
  }
}

int run_fit(const FitArgs& args) {
  const lmmom::GroupedDataset ds = lmmom::load_csv(args.data_path);
  const std::vector<int> orders = normalize_orders(args.orders);
  const auto policy = args.policy == "strict" ? lmmom::SizePolicy::strict
                                              : lmmom::SizePolicy::drop;

  // Under strict policy this throws GroupTooSmall naming the offender.
  // The filter result is only used for reporting; the fit itself always
  // uses every group (small groups still inform alpha and beta) and the
  // moment estimators apply their per-order thresholds internally.
  std::map<int, lmmom::SizeFilterReport> dropped;
  for (const int k : orders) {
    dropped[k] = lmmom::validate_for_order(ds, k, policy).second;
  }

  const lmmom::FixedEffectsFit fit = lmmom::gls_fit(ds);
  const lmmom::DesignDiagnostics diag = lmmom::design_diagnostics(ds);
  const double quad = lmmom::sigma_inv_quad(fit, diag.x0);
  const lmmom::GroupPowerSums ps = lmmom::power_sums(fit);

  const bool want_eff = args.variant == "efficient" || args.variant == "both";
  const bool want_fs = args.variant == "firststep" || args.variant == "both";
  std::optional<lmmom::MomentEstimates> eff, fs;
  std::optional<lmmom::PluginFourth> plugin;
  if (want_eff) eff = lmmom::efficient_estimates(ps, orders);
  if (want_fs) {
    fs = lmmom::firststep_estimates(ps, orders);
    if (std::find(orders.begin(), orders.end(), 4) != orders.end()) {
      plugin = lmmom::fs_gamma_plugin4(ps, lmmom::gamma_b2(ps),
                                       lmmom::gamma_eps2(ps));
    }
  }

  std::optional<lmmom::MomentSpec> spec;
  if (!args.spec_path.empty()) spec = lmmom::MomentSpec::load(args.spec_path);
  std::optional<lmmom::StandardErrors> eff_se, fs_se;
  std::optional<lmmom::VarianceReport> var_report;
  std::vector<std::string> spec_warnings;
  if (spec) {
    spec_warnings = spec->validate();
    var_report = lmmom::variance_report(*spec, diag.c_n, diag.d_n, quad);
    if (eff) {
      eff_se = lmmom::standard_errors(*eff, *spec, fit.n, fit.N, diag.c_n,
                                      diag.d_n, quad);
    }
    if (fs) {
      fs_se = lmmom::standard_errors(*fs, *spec, fit.n, fit.N, diag.c_n,
                                     diag.d_n, quad);
    }
  }

  if (args.out == "json") {
    json j;
    j["alpha"] = fit.alpha;
    j["beta"] = to_vec(fit.beta);
    j["sigma"] = matrix_json(fit.sigma);
    j["n"] = fit.n;
    j["N"] = fit.N;
    j["diagnostics"] = {{"c_n", diag.c_n},
                        {"d_n", diag.d_n},
                        {"mean_group_size", diag.mean_group_size},
                        {"x0", to_vec(diag.x0)},
                        {"sigma_inv_quad", quad}};
    json drop_block;
    for (const auto& [k, report] : dropped) {
      json list = json::array();
      for (const auto& [id, size] : report.dropped) {
        list.push_back({{"group", id}, {"size", size}});
      }
      drop_block[std::to_string(k)] = std::move(list);
    }
    j["dropped"] = std::move(drop_block);
    // Headline estimates mirror the efficient block when present.
    const lmmom::MomentEstimates& head = eff ? *eff : *fs;
    json ge, gb;
    for (const auto& [k, v] : head.eps) ge[std::to_string(k)] = v;
    for (const auto& [k, v] : head.b) gb[std::to_string(k)] = v;
    j["gamma_eps"] = std::move(ge);
    j["gamma_b"] = std::move(gb);
    json blocks;
    if (eff) blocks["efficient"] = estimates_json(*eff);
    if (fs) {
      json fs_block = estimates_json(*fs);
      if (plugin) {
        fs_block["plugin4"] = {{"eps4", plugin->eps4}, {"b4", plugin->b4}};
      }
      blocks["first_step"] = std::move(fs_block);
    }
    j["estimates"] = std::move(blocks);
    if (spec) {
      json se_block;
      const auto se_json = [](const lmmom::StandardErrors& se) {
        json s;
        for (const auto& [key, v] : se.se) s[key] = v;
        return json{{"se", std::move(s)}, {"omitted", se.omitted}};
      };
      if (eff_se) se_block["efficient"] = se_json(*eff_se);
      if (fs_se) se_block["first_step"] = se_json(*fs_se);
      j["se"] = std::move(se_block);
      json vr;
      vr["c"] = var_report->c;
      vr["d"] = var_report->d;
      vr["quad"] = var_report->quad;
      json me, mb;
      for (const auto& [k, v] : var_report->mu_eps) me[std::to_string(k)] = v;
      for (const auto& [k, v] : var_report->mu_b) mb[std::to_string(k)] = v;
      vr["mu_eps"] = std::move(me);
      vr["mu_b"] = std::move(mb);
      if (var_report->first_step3) {
        vr["first_step3"] = {{"mu_star", var_report->first_step3->mu_star},
                             {"inflation", var_report->first_step3->inflation},
                             {"total", var_report->first_step3->total()}};
      }
      if (var_report->first_step4) {
        vr["first_step4"] = {{"mu_star", var_report->first_step4->mu_star},
                             {"inflation", var_report->first_step4->inflation},
                             {"total", var_report->first_step4->total()}};
      }
      vr["notes"] = var_report->notes;
      j["variance_report"] = std::move(vr);
      j["spec_warnings"] = spec_warnings;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  // Plain-text report.
  std::ostream& os = std::cout;
  os << "fit: " << fit.n << " groups, " << fit.N << " rows\n";
  os << "alpha = " << fmt(fit.alpha) << "\n";
  for (Eigen::Index k = 0; k < fit.beta.size(); ++k) {
    os << "beta" << (k + 1) << " = " << fmt(fit.beta(k)) << "\n";
  }
  if (fit.sigma.size() > 0) {
    os << "sigma (pooled within-group scatter):\n";
    for (Eigen::Index i = 0; i < fit.sigma.rows(); ++i) {
      os << " ";
      for (Eigen::Index k = 0; k < fit.sigma.cols(); ++k) {
        os << " " << fmt(fit.sigma(i, k));
      }
      os << "\n";
    }
  }
  os << "diagnostics: c_n=" << fmt(diag.c_n) << " d_n=" << fmt(diag.d_n)
     << " mean_group_size=" << fmt(diag.mean_group_size)
     << " sigma_inv_quad=" << fmt(quad) << "\n";
  for (const auto& [k, report] : dropped) {
    if (report.dropped.empty()) continue;
    os << "order " << k << " drops:";
    for (const auto& [id, size] : report.dropped) {
      os << " " << id << "(" << size << " rows)";
    }
    os << "\n";
  }
  if (eff) print_estimates_table(*eff, eff_se ? &*eff_se : nullptr, os);
  if (fs) {
    print_estimates_table(*fs, fs_se ? &*fs_se : nullptr, os);
    if (plugin) {
      os << "  plug-in fourth: gamma_eps4 = " << fmt(plugin->eps4)
         << "  gamma_b4 = " << fmt(plugin->b4) << "\n";
    }
  }
  if (var_report) {
    os << "limit variances (per observation / per group):\n";
    for (const auto& [k, v] : var_report->mu_eps) {
      os << "  mu_eps" << k << " = " << fmt(v) << "\n";
    }
    for (const auto& [k, v] : var_report->mu_b) {
      os << "  mu_b" << k << "   = " << fmt(v) << "\n";
    }
    if (var_report->first_step3) {
      os << "  first-step order 3: mu_star=" << fmt(var_report->first_step3->mu_star)
         << " inflation=" << fmt(var_report->first_step3->inflation)
         << " total=" << fmt(var_report->first_step3->total()) << "\n";
    }
    if (var_report->first_step4) {
      os << "  first-step order 4: mu_star=" << fmt(var_report->first_step4->mu_star)
         << " inflation=" << fmt(var_report->first_step4->inflation)
         << " total=" << fmt(var_report->first_step4->total()) << "\n";
    }
    for (const auto& note : var_report->notes) os << "  note: " << note << "\n";
  }
  for (const auto& w : spec_warnings) os << "spec warning: " << w << "\n";
  return 0;
}

struct SimArgs {
  std::string scenario = "a";
  long n = 100;
  std::uint64_t seed = 1;
  std::string out_path;
  std::string sizes;
};

lmmom::ScenarioConfig scenario_from(const std::string& scenario, long n,
                                    std::uint64_t seed,
                                    const std::string& sizes) {
  if (scenario.size() != 1) {
    throw lmmom::UsageError("--case must be a single letter a..e");
  }
  lmmom::ScenarioConfig cfg;
  cfg.scenario = scenario[0];
  cfg.n = n;
  cfg.seed = seed;
  if (!sizes.empty()) cfg.sizes = lmmom::GroupSizeLaw::parse(sizes);
  cfg.validate();
  return cfg;
}

int run_simulate(const SimArgs& args) {
  const lmmom::ScenarioConfig cfg =
      scenario_from(args.scenario, args.n, args.seed, args.sizes);
  const lmmom::SimulationResult sim = lmmom::simulate(cfg);
  lmmom::save_csv(sim.data, args.out_path);

  const std::string truth_path = args.out_path + ".truth";
  std::ofstream truth(truth_path);
  if (!truth) {
    throw lmmom::UsageError("cannot open \"" + truth_path + "\" for writing");
  }
  truth << "# truth moments for case " << cfg.scenario << " (n=" << cfg.n
        << ", seed=" << cfg.seed << ", sizes=" << cfg.sizes.describe()
        << ")\n";
  sim.truth.write(truth);

  std::cout << "wrote " << args.out_path << " (" << sim.data.group_count()
            << " groups, " << sim.data.total_rows() << " rows) and "
            << truth_path << "\n";
  return 0;
}

struct McArgs {
  std::string scenario = "a";
  long n = 100;
  long reps = 1000;
  std::uint64_t seed = 1;
  std::string variant = "efficient";
  std::string format = "table";
  std::string sizes;
  int threads = 0;
};

int run_mc_cmd(const McArgs& args) {
  lmmom::McConfig cfg;
  cfg.base = scenario_from(args.scenario, args.n, args.seed, args.sizes);
  cfg.reps = args.reps;
  cfg.threads = args.threads;
  cfg.run_efficient = args.variant == "efficient" || args.variant == "both";
  cfg.run_first_step = args.variant == "firststep" || args.variant == "both";

  const lmmom::McReport report = lmmom::run_mc(cfg);
  if (args.format == "csv") {
    lmmom::write_csv(report, std::cout);
  } else if (args.format == "json") {
    lmmom::write_json(report, std::cout);
  } else {
    lmmom::write_table(report, std::cout);
    if (cfg.run_efficient && cfg.run_first_step) {
      const auto comparison = lmmom::compare_variants(report, report);
      std::cout << "variance comparison (first-step vs efficient):\n";
      for (const auto& c : comparison) {
        std::cout << "  " << c.first_step_name << " vs " << c.efficient_name
                  << ": ratio " << fmt(c.variance_ratio) << ", z "
                  << fmt(c.z)
                  << (c.first_step_worse ? " (first-step worse at 1%)" : "")
                  << "\n";
      }
    }
  }
  return 0;
}

struct OracleArgs {
  std::uint64_t seed = 1;
  long trials = 200;
};

int run_check_oracle(const OracleArgs& args) {
  if (args.trials <= 0) {
    throw lmmom::UsageError("--trials must be positive");
  }
  const lmmom::OracleCheckResult res =
      lmmom::run_oracle_checks(args.seed, args.trials, args.trials);
  std::cout << "estimator checks: " << args.trials << " datasets, "
            << res.estimator_comparisons << " comparisons, max deviation "
            << fmt(res.max_rel_estimators) << " at " << res.worst_estimator
            << "\n";
  std::cout << "expansion checks: " << args.trials << " draws, "
            << res.expansion_comparisons << " comparisons, max deviation "
            << fmt(res.max_rel_expansion) << " at " << res.worst_expansion
            << "\n";
  const bool ok = res.max_rel_estimators <= lmmom::kOracleTolerance &&
                  res.max_rel_expansion <= lmmom::kOracleTolerance;
  if (!ok) {
    std::cout << "FAILED: deviation exceeds " << fmt(lmmom::kOracleTolerance)
              << " (seed " << args.seed << ")\n";
    return 1;
  }
  std::cout << "all identities hold within " << fmt(lmmom::kOracleTolerance)
            << "\n";
  return 0;
}

template <typename Body>
int dispatch(Body&& body) {
  try {
    return body();
  } catch (const lmmom::SingularDesign& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const lmmom::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lmmom::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lmmom::EmptyData& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lmmom::GroupTooSmall& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lmmom::MissingMoment& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lmmom::MomentUndefined& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lmmom::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Moment estimation for grouped data with a shared random intercept:\n"
      "generalized least squares for the fixed effects, closed-form\n"
      "estimators for the 2nd..4th moments of the errors and the random\n"
      "effects, and a Monte Carlo harness around them."};
  app.require_subcommand(1);
  app.footer(
      "Examples:\n"
      "  lmmom simulate --case a --n 100 --seed 7 --out data.csv\n"
      "  lmmom fit data.csv --variant both --spec data.csv.truth --out json\n"
      "  lmmom fit data.csv --orders 2,3 --policy strict\n"
      "  lmmom mc --case d --n 100 --reps 1000 --variant both\n"
      "  lmmom check-oracle --seed 1 --trials 200");

  FitArgs fit_args;
  CLI::App* fit_cmd =
      app.add_subcommand("fit", "Estimate fixed effects and moments from CSV");
  fit_cmd->add_option("data", fit_args.data_path, "grouped CSV input")
      ->required();
  fit_cmd->add_option("--orders", fit_args.orders,
                      "moment orders to estimate (subset of 2,3,4)")
      ->delimiter(',');
  fit_cmd
      ->add_option("--variant", fit_args.variant,
                   "estimator family: efficient, firststep, or both")
      ->check(CLI::IsMember({"efficient", "firststep", "both"}));
  fit_cmd
      ->add_option("--policy", fit_args.policy,
                   "small-group handling: drop (skip per order) or strict "
                   "(refuse the dataset)")
      ->check(CLI::IsMember({"strict", "drop"}));
  fit_cmd->add_option("--spec", fit_args.spec_path,
                      "moment spec file for standard errors");
  fit_cmd->add_option("--out", fit_args.out, "output form: table or json")
      ->check(CLI::IsMember({"table", "json"}));

  SimArgs sim_args;
  CLI::App* sim_cmd =
      app.add_subcommand("simulate", "Generate a synthetic dataset + truth");
  sim_cmd->add_option("--case", sim_args.scenario,
                      "scenario letter a..e selecting the error/effect laws");
  sim_cmd->add_option("--n", sim_args.n, "number of groups");
  sim_cmd->add_option("--seed", sim_args.seed, "RNG seed");
  sim_cmd->add_option("--out", sim_args.out_path, "output CSV path")
      ->required();
  sim_cmd->add_option(
      "--group-sizes", sim_args.sizes,
      "group-size law: fixed:L, poisson:M, poisson:M,min:K, poisson:M,plus:K");

  McArgs mc_args;
  CLI::App* mc_cmd =
      app.add_subcommand("mc", "Monte Carlo study of the estimators");
  mc_cmd->add_option("--case", mc_args.scenario, "scenario letter a..e");
  mc_cmd->add_option("--n", mc_args.n, "groups per replication");
  mc_cmd->add_option("--reps", mc_args.reps, "number of replications");
  mc_cmd->add_option("--seed", mc_args.seed, "master RNG seed");
  mc_cmd
      ->add_option("--variant", mc_args.variant,
                   "estimator family: efficient, firststep, or both")
      ->check(CLI::IsMember({"efficient", "firststep", "both"}));
  mc_cmd->add_option("--format", mc_args.format, "table, csv, or json")
      ->check(CLI::IsMember({"table", "csv", "json"}));
  mc_cmd->add_option("--group-sizes", mc_args.sizes,
                     "group-size law override (see simulate)");
  mc_cmd->add_option("--threads", mc_args.threads,
                     "worker threads (0 = LMM_THREADS env or hardware)");

  OracleArgs oracle_args;
  CLI::App* oracle_cmd = app.add_subcommand(
      "check-oracle",
      "Cross-check closed forms against brute-force distinct-index sums");
  oracle_cmd->add_option("--seed", oracle_args.seed, "RNG seed");
  oracle_cmd->add_option("--trials", oracle_args.trials,
                         "random instances per check family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;
  }

  if (*fit_cmd) return dispatch([&] { return run_fit(fit_args); });
  if (*sim_cmd) return dispatch([&] { return run_simulate(sim_args); });
  if (*mc_cmd) return dispatch([&] { return run_mc_cmd(mc_args); });
  if (*oracle_cmd) return dispatch([&] { return run_check_oracle(oracle_args); });
  return 2;
}
