#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lmmom/accum.hpp"
#include "lmmom/dataset.hpp"
#include "lmmom/errors.hpp"
#include "lmmom/firststep.hpp"
#include "lmmom/gls.hpp"
#include "lmmom/moments.hpp"
#include "lmmom/sim.hpp"

namespace lmmom {

/// Monte Carlo driver: generate, fit, estimate, aggregate. Replications
/// run on worker threads but every result lands in a slot indexed by its
/// replication number and aggregation walks the slots in index order, so
/// the report is byte-identical no matter how many threads ran.

struct McConfig {
  ScenarioConfig base;       // scenario letter, n, master seed, sizes, truth inputs
  long reps = 1000;
  bool run_efficient = true;
  bool run_first_step = false;
  int threads = 0;           // 0 = LMM_THREADS env, else hardware count
  bool keep_samples = true;  // per-rep estimates retained for paired tests

  void validate() const {
    base.validate();
    if (reps < 2) throw UsageError("Monte Carlo needs at least 2 replications");
    if (threads < 0) throw UsageError("threads must be >= 0");
    if (!run_efficient && !run_first_step) {
      throw UsageError("enable at least one of the estimator variants");
    }
  }
};

struct McRow {
  std::string estimand;
  double truth = 0.0;
  double mean = 0.0;
  double std_dev = 0.0;  // divisor reps_used - 1
  double rmse = 0.0;     // sqrt of mean squared deviation from truth
  long reps_used = 0;
  std::vector<double> samples;  // one per replication, NaN where it failed
};

struct McReport {
  McConfig config;
  std::vector<McRow> rows;
  long failures = 0;
  std::vector<std::string> failure_messages;  // capped, first few only
  std::vector<long> rep_rows;    // total observations per replication, 0 on failure
  std::vector<long> rep_groups;  // groups per replication, 0 on failure

  const McRow& row(const std::string& estimand) const {
    for (const auto& r : rows) {
      if (r.estimand == estimand) return r;
    }
    throw UsageError("no such estimand in report: " + estimand);
  }
};

namespace detail {

inline constexpr std::uint64_t kRepSeedRole = 7;
inline constexpr std::size_t kMaxFailureMessages = 5;

inline int resolve_threads(int configured, long reps) {
  long t = configured;
  if (t <= 0) {
    if (const char* env = std::getenv("LMM_THREADS")) {
      char* end = nullptr;
      const long parsed = std::strtol(env, &end, 10);
      if (end && *end == '\0' && parsed > 0) t = parsed;
    }
  }
  if (t <= 0) t = static_cast<long>(std::thread::hardware_concurrency());
  if (t <= 0) t = 1;
  return static_cast<int>(std::min(t, reps));
}

struct RepSlot {
  bool ok = false;
  std::string error;
  std::vector<double> values;
  long rows = 0;
  long groups = 0;
};

}  // namespace detail

/// Names of everything a run with this config will estimate, in report
/// order. Fixed effects first, then shared second moments, then the
/// variant-specific third and fourth moments.
inline std::vector<std::string> mc_estimands(const McConfig& cfg) {
  std::vector<std::string> names;
  names.emplace_back("alpha");
  for (Eigen::Index k = 0; k < cfg.base.beta.size(); ++k) {
    names.push_back("beta" + std::to_string(k + 1));
  }
  names.emplace_back("eps2");
  names.emplace_back("b2");
  if (cfg.run_efficient) {
    for (const char* s : {"eps3", "b3", "eps4", "b4"}) names.emplace_back(s);
  }
  if (cfg.run_first_step) {
    for (const char* s : {"fs_eps3", "fs_b3", "fs_eps4", "fs_b4",
                          "fs_plugin_eps4", "fs_plugin_b4"}) {
      names.emplace_back(s);
    }
  }
  return names;
}

/// True parameter value behind each estimand name under this config.
inline double mc_truth(const McConfig& cfg, const std::string& estimand) {
  if (estimand == "alpha") return cfg.base.alpha;
  if (estimand.rfind("beta", 0) == 0) {
    const long k = std::strtol(estimand.c_str() + 4, nullptr, 10);
    if (k >= 1 && k <= cfg.base.beta.size()) return cfg.base.beta(k - 1);
    throw UsageError("unknown estimand: " + estimand);
  }
  const MomentSpec truth = scenario_truth(cfg.base.scenario);
  // First-step and plug-in estimators target the same moments as the
  // efficient ones; strip the prefixes to find the order.
  std::string key = estimand;
  if (key.rfind("fs_plugin_", 0) == 0) key = key.substr(10);
  else if (key.rfind("fs_", 0) == 0) key = key.substr(3);
  if (key.size() == 4 && key.rfind("eps", 0) == 0) {
    return truth.eps_moment(key[3] - '0');
  }
  if (key.size() == 2 && key[0] == 'b') {
    return truth.b_moment(key[1] - '0');
  }
  throw UsageError("unknown estimand: " + estimand);
}

namespace detail {

inline RepSlot run_one_rep(const McConfig& cfg, long rep,
                           const std::vector<std::string>& names) {
  RepSlot slot;
  try {
    ScenarioConfig rep_cfg = cfg.base;
    rep_cfg.seed =
        rng::substream(cfg.base.seed, static_cast<std::uint64_t>(rep), 0,
                       kRepSeedRole)
            .next_u64();
    const SimulationResult sim = simulate(rep_cfg);
    const FixedEffectsFit fit = gls_fit(sim.data);
    const GroupPowerSums ps = power_sums(fit);

    std::map<std::string, double> est;
    est["alpha"] = fit.alpha;
    for (Eigen::Index k = 0; k < fit.beta.size(); ++k) {
      est["beta" + std::to_string(k + 1)] = fit.beta(k);
    }
    const double g_eps2 = gamma_eps2(ps);
    const double g_b2 = gamma_b2(ps);
    est["eps2"] = g_eps2;
    est["b2"] = g_b2;
    if (cfg.run_efficient) {
      est["eps3"] = gamma_eps3(ps);
      est["b3"] = gamma_b3(ps);
      est["eps4"] = gamma_eps4(ps);
      est["b4"] = gamma_b4(ps);
    }
    if (cfg.run_first_step) {
      est["fs_eps3"] = fs_gamma_eps3(ps);
      est["fs_b3"] = fs_gamma_b3(ps);
      est["fs_eps4"] = fs_gamma_eps4(ps);
      est["fs_b4"] = fs_gamma_b4(ps);
      const PluginFourth plugin = fs_gamma_plugin4(ps, g_b2, g_eps2);
      est["fs_plugin_eps4"] = plugin.eps4;
      est["fs_plugin_b4"] = plugin.b4;
    }

    slot.values.reserve(names.size());
    for (const auto& name : names) slot.values.push_back(est.at(name));
    slot.rows = fit.N;
    slot.groups = fit.n;
    slot.ok = true;
  } catch (const Error& e) {
    slot.error = e.what();
  } catch (const std::exception& e) {
    slot.error = std::string("unexpected: ") + e.what();
  }
  return slot;
}

}  // namespace detail

inline McReport run_mc(const McConfig& cfg) {
  cfg.validate();
  const std::vector<std::string> names = mc_estimands(cfg);
  const int threads = detail::resolve_threads(cfg.threads, cfg.reps);

  std::vector<detail::RepSlot> slots(static_cast<std::size_t>(cfg.reps));
  std::atomic<long> next{0};
  const auto worker = [&] {
    for (;;) {
      const long rep = next.fetch_add(1, std::memory_order_relaxed);
      if (rep >= cfg.reps) return;
      slots[static_cast<std::size_t>(rep)] = detail::run_one_rep(cfg, rep, names);
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  McReport report;
  report.config = cfg;
  report.rep_rows.resize(static_cast<std::size_t>(cfg.reps), 0);
  report.rep_groups.resize(static_cast<std::size_t>(cfg.reps), 0);
  for (long rep = 0; rep < cfg.reps; ++rep) {
    const auto& slot = slots[static_cast<std::size_t>(rep)];
    if (slot.ok) {
      report.rep_rows[static_cast<std::size_t>(rep)] = slot.rows;
      report.rep_groups[static_cast<std::size_t>(rep)] = slot.groups;
    } else {
      ++report.failures;
      if (report.failure_messages.size() < detail::kMaxFailureMessages) {
        report.failure_messages.push_back("replication " + std::to_string(rep) +
                                          ": " + slot.error);
      }
    }
  }
  if (report.failures * 100 > cfg.reps) {
    std::string msg = std::to_string(report.failures) + " of " +
                      std::to_string(cfg.reps) +
                      " replications failed (limit is 1%)";
    if (!report.failure_messages.empty()) {
      msg += "; first: " + report.failure_messages.front();
    }
    throw Error(msg);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t e = 0; e < names.size(); ++e) {
    McRow row;
    row.estimand = names[e];
    row.truth = mc_truth(cfg, names[e]);
    if (cfg.keep_samples) row.samples.reserve(static_cast<std::size_t>(cfg.reps));

    // Two passes in replication order: mean first, then spread about it.
    detail::KahanSum sum;
    long used = 0;
    for (long rep = 0; rep < cfg.reps; ++rep) {
      const auto& slot = slots[static_cast<std::size_t>(rep)];
      const double v = slot.ok ? slot.values[e] : nan;
      if (cfg.keep_samples) row.samples.push_back(v);
      if (slot.ok) {
        sum.add(v);
        ++used;
      }
    }
    row.reps_used = used;
    row.mean = sum.value() / static_cast<double>(used);

    detail::KahanSum sq_dev;
    detail::KahanSum sq_err;
    for (long rep = 0; rep < cfg.reps; ++rep) {
      const auto& slot = slots[static_cast<std::size_t>(rep)];
      if (!slot.ok) continue;
      const double d = slot.values[e] - row.mean;
      sq_dev.add(d * d);
      const double err = slot.values[e] - row.truth;
      sq_err.add(err * err);
    }
    row.std_dev = used > 1
                      ? std::sqrt(sq_dev.value() / static_cast<double>(used - 1))
                      : 0.0;
    row.rmse = std::sqrt(sq_err.value() / static_cast<double>(used));
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline std::vector<std::string> mc_variant_names(const McConfig& cfg) {
  std::vector<std::string> v;
  if (cfg.run_efficient) v.emplace_back("efficient");
  if (cfg.run_first_step) v.emplace_back("first_step");
  return v;
}

inline void write_table(const McReport& report, std::ostream& os) {
  const auto& cfg = report.config;
  os << "scenario " << cfg.base.scenario << "  n=" << cfg.base.n
     << "  reps=" << cfg.reps << "  seed=" << cfg.base.seed
     << "  sizes=" << cfg.base.sizes.describe() << "\n";
  os << "variants:";
  for (const auto& v : mc_variant_names(cfg)) os << " " << v;
  os << "\n";
  os << std::left << std::setw(16) << "estimand" << std::right << std::setw(12)
     << "truth" << std::setw(12) << "mean" << std::setw(12) << "std"
     << std::setw(12) << "rmse" << std::setw(8) << "reps" << "\n";
  os << std::fixed << std::setprecision(6);
  for (const auto& row : report.rows) {
    os << std::left << std::setw(16) << row.estimand << std::right
       << std::setw(12) << row.truth << std::setw(12) << row.mean
       << std::setw(12) << row.std_dev << std::setw(12) << row.rmse
       << std::setw(8) << row.reps_used << "\n";
  }
  os.unsetf(std::ios_base::floatfield);
  os << std::setprecision(6);
  if (report.failures > 0) {
    os << "failed replications: " << report.failures << "\n";
    for (const auto& msg : report.failure_messages) os << "  " << msg << "\n";
  }
}

inline void write_csv(const McReport& report, std::ostream& os) {
  os << "estimand,truth,mean,std,rmse,reps_used,failures\n";
  for (const auto& row : report.rows) {
    os << row.estimand << ',' << detail::format_double(row.truth) << ','
       << detail::format_double(row.mean) << ','
       << detail::format_double(row.std_dev) << ','
       << detail::format_double(row.rmse) << ',' << row.reps_used << ','
       << report.failures << "\n";
  }
}

inline void write_json(const McReport& report, std::ostream& os) {
  nlohmann::json j;
  const auto& cfg = report.config;
  j["scenario"] = std::string(1, cfg.base.scenario);
  j["n"] = cfg.base.n;
  j["reps"] = cfg.reps;
  j["seed"] = cfg.base.seed;
  j["group_sizes"] = cfg.base.sizes.describe();
  j["variants"] = mc_variant_names(cfg);
  j["failures"] = report.failures;
  j["failure_messages"] = report.failure_messages;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["estimand"] = row.estimand;
    r["truth"] = row.truth;
    r["mean"] = row.mean;
    r["std"] = row.std_dev;
    r["rmse"] = row.rmse;
    r["reps_used"] = row.reps_used;
    j["rows"].push_back(std::move(r));
  }
  os << j.dump(2) << "\n";
}

/// Paired variance comparison between the two estimator variants run on
/// identical replications. For each matched pair the statistic is the mean
/// of d_r = (y_r - ybar)^2 - (x_r - xbar)^2 over its standard error, where
/// y is the first-step estimate and x the efficient one. Positive z means
/// the first-step variant scattered more; the flag fires at the one-sided
/// 1% level.
struct VariantComparison {
  std::string efficient_name;
  std::string first_step_name;
  double var_efficient = 0.0;
  double var_first_step = 0.0;
  double variance_ratio = 0.0;  // first_step / efficient
  double z = 0.0;
  bool first_step_worse = false;
  long reps = 0;
};

inline constexpr double kOneSidedZ99 = 2.3263478740408408;

inline std::vector<VariantComparison> compare_variants(const McReport& eff,
                                                       const McReport& fs) {
  const auto& a = eff.config;
  const auto& b = fs.config;
  if (a.base.scenario != b.base.scenario || a.base.n != b.base.n ||
      a.reps != b.reps || a.base.seed != b.base.seed ||
      a.base.sizes.describe() != b.base.sizes.describe()) {
    throw UsageError(
        "variant comparison needs identical scenario, n, reps, seed and "
        "group-size settings");
  }
  if (!a.keep_samples || !b.keep_samples) {
    throw UsageError("variant comparison needs per-replication samples");
  }

  // Pairing is by target moment. On each side the first present row wins,
  // so a report that only ran one variant can stand in for the other;
  // feeding the same single-variant report twice then compares every row
  // with itself and yields ratio exactly 1.
  struct Pair {
    const char* label;
    std::vector<const char*> eff_names;
    std::vector<const char*> fs_names;
  };
  static const std::vector<Pair> kPairs = {
      {"eps3", {"eps3", "fs_eps3"}, {"fs_eps3", "eps3"}},
      {"b3", {"b3", "fs_b3"}, {"fs_b3", "b3"}},
      {"eps4", {"eps4", "fs_eps4"}, {"fs_eps4", "eps4"}},
      {"b4", {"b4", "fs_b4"}, {"fs_b4", "b4"}},
      {"eps4 (plugin)", {"eps4"}, {"fs_plugin_eps4"}},
      {"b4 (plugin)", {"b4"}, {"fs_plugin_b4"}},
  };
  const auto find_row = [](const McReport& report,
                           const std::vector<const char*>& names) -> const McRow* {
    for (const char* name : names) {
      for (const auto& r : report.rows) {
        if (r.estimand == name) return &r;
      }
    }
    return nullptr;
  };

  std::vector<VariantComparison> out;
  for (const auto& pair : kPairs) {
    const McRow* x = find_row(eff, pair.eff_names);
    const McRow* y = find_row(fs, pair.fs_names);
    if (!x || !y) continue;

    VariantComparison c;
    c.efficient_name = x->estimand;
    c.first_step_name = y->estimand;
    c.var_efficient = x->std_dev * x->std_dev;
    c.var_first_step = y->std_dev * y->std_dev;
    c.variance_ratio =
        c.var_efficient > 0.0 ? c.var_first_step / c.var_efficient
                              : std::numeric_limits<double>::quiet_NaN();

    // Replications where either run failed drop out of the paired test.
    const auto R = static_cast<long>(x->samples.size());
    detail::KahanSum d_sum;
    long used = 0;
    for (long r = 0; r < R; ++r) {
      const double dx = x->samples[static_cast<std::size_t>(r)] - x->mean;
      const double dy = y->samples[static_cast<std::size_t>(r)] - y->mean;
      if (std::isnan(dx) || std::isnan(dy)) continue;
      d_sum.add(dy * dy - dx * dx);
      ++used;
    }
    if (used < 2) {
      throw UsageError("variant comparison needs at least 2 shared replications");
    }
    c.reps = used;
    const double d_mean = d_sum.value() / static_cast<double>(used);
    detail::KahanSum d_sq;
    for (long r = 0; r < R; ++r) {
      const double dx = x->samples[static_cast<std::size_t>(r)] - x->mean;
      const double dy = y->samples[static_cast<std::size_t>(r)] - y->mean;
      if (std::isnan(dx) || std::isnan(dy)) continue;
      const double d = (dy * dy - dx * dx) - d_mean;
      d_sq.add(d * d);
    }
    const double d_sd =
        std::sqrt(d_sq.value() / static_cast<double>(used - 1));
    c.z = d_sd > 0.0
              ? d_mean / (d_sd / std::sqrt(static_cast<double>(used)))
              : 0.0;
    c.first_step_worse = c.z > kOneSidedZ99;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace lmmom
