#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lmmom/accum.hpp"
#include "lmmom/errors.hpp"
#include "lmmom/firststep.hpp"
#include "lmmom/gls.hpp"
#include "lmmom/moments.hpp"
#include "lmmom/sim.hpp"

namespace lmmom {

/// Brute-force reference implementations of every estimator in this
/// library, written as sums over tuples of distinct indices instead of
/// polynomials in power sums. The two routes share no intermediate
/// arithmetic, so their agreement is the repository's central correctness
/// check. Everything here is test-scale machinery: O(l^4) per group by
/// construction, with a hard cap on group size.

namespace detail {

inline constexpr long kOracleGroupCap = 64;

/// Sum of products e[t1]^p1 ... e[tr]^pr over all ordered tuples of
/// distinct indices. `magnitudes` accumulates the same sum with every
/// factor replaced by its absolute value, giving the cancellation scale the
/// comparisons below divide by.
inline double u_stat_impl(const Eigen::VectorXd& e, std::span<const int> powers,
                          double* magnitudes) {
  const long l = e.size();
  const auto r = static_cast<long>(powers.size());
  if (r < 1 || r > 4) throw UsageError("u_stat handles degrees 1..4");
  if (l > kOracleGroupCap) {
    throw UsageError("oracle group cap is " + std::to_string(kOracleGroupCap) +
                     " rows (O(l^4) reference code)");
  }
  if (l < r) throw GroupTooSmall("(oracle)", l, static_cast<int>(r));

  std::array<Eigen::VectorXd, 4> pw;
  std::array<Eigen::VectorXd, 4> pw_abs;
  for (long a = 0; a < r; ++a) {
    pw[static_cast<std::size_t>(a)] =
        e.array().pow(powers[static_cast<std::size_t>(a)]);
    pw_abs[static_cast<std::size_t>(a)] =
        pw[static_cast<std::size_t>(a)].cwiseAbs();
  }

  KahanSum sum;
  KahanSum abs_sum;
  std::array<long, 4> idx{};
  const auto distinct = [&](long depth) {
    for (long a = 0; a < depth; ++a) {
      if (idx[static_cast<std::size_t>(a)] == idx[static_cast<std::size_t>(depth)]) {
        return false;
      }
    }
    return true;
  };
  // Four explicit nested loops would repeat the body; a tiny manual stack
  // keeps the tuple walk readable at these sizes.
  const auto walk = [&](auto&& self, long depth, double prod,
                        double prod_abs) -> void {
    if (depth == r) {
      sum.add(prod);
      abs_sum.add(prod_abs);
      return;
    }
    for (idx[static_cast<std::size_t>(depth)] = 0;
         idx[static_cast<std::size_t>(depth)] < l;
         ++idx[static_cast<std::size_t>(depth)]) {
      if (!distinct(depth)) continue;
      const long j = idx[static_cast<std::size_t>(depth)];
      self(self, depth + 1,
           prod * pw[static_cast<std::size_t>(depth)](j),
           prod_abs * pw_abs[static_cast<std::size_t>(depth)](j));
    }
  };
  walk(walk, 0, 1.0, 1.0);
  if (magnitudes) *magnitudes = abs_sum.value();
  return sum.value();
}

}  // namespace detail

/// Public distinct-index sum, e.g. u_stat(e, {{2, 1}}) = sum_{j != k} e_j^2 e_k.
inline double u_stat(const Eigen::VectorXd& e, std::span<const int> powers) {
  return detail::u_stat_impl(e, powers, nullptr);
}

/// A value along with the magnitude of the terms it was assembled from.
/// |value| can be far below `scale` after cancellation; error comparisons
/// must divide by the scale, not the value, to stay meaningful.
struct OracleEntry {
  double value = 0.0;
  double scale = 0.0;
};

/// f_m^k = S_m S_1^{k-m} evaluated directly from residuals by fresh loops
/// (no shared code with the power-sum module).
inline double direct_f(const Eigen::VectorXd& e, int m, int k) {
  if (m < 1 || k < 2 || k > 4 || m > k) {
    throw UsageError("direct_f needs 1 <= m <= k and k in {2,3,4}");
  }
  double sm = 0.0;
  double s1 = 0.0;
  for (Eigen::Index j = 0; j < e.size(); ++j) {
    sm += std::pow(e(j), m);
    s1 += e(j);
  }
  double value = sm;
  for (int t = 0; t < k - m; ++t) value *= s1;
  return value;
}

/// Binomial double-sum expansion of f_m^k for e_ij = b_i + eps_ij:
///
///   f_m^k(i) = sum_{t=0}^{k} sum_{s} C(m,s) C(k-m,t-s)
///              (sum_j eps^s) (sum_j eps)^{t-s} b^{k-t} l^{k-m-t+s}
///
/// with s ranging over max(0, t-k+m) .. min(t, m) and sum_j eps^0 = l.
/// This identity is what turns expectations of group statistics into
/// polynomials in the error and effect moments; evaluating it termwise
/// gives a reference for f computed from e directly. The returned scale is
/// the sum of absolute termwise contributions.
inline OracleEntry expand_group_product(const Eigen::VectorXd& eps, double b,
                                        int m, int k) {
  if (m < 1 || k < 2 || k > 4 || m > k) {
    throw UsageError("expansion needs 1 <= m <= k and k in {2,3,4}");
  }
  static constexpr std::array<std::array<double, 5>, 5> kChoose{{
      {1, 0, 0, 0, 0},
      {1, 1, 0, 0, 0},
      {1, 2, 1, 0, 0},
      {1, 3, 3, 1, 0},
      {1, 4, 6, 4, 1},
  }};
  const double l = static_cast<double>(eps.size());
  std::array<double, 5> eps_pow_sum{};  // index s: sum_j eps^s, with l at s=0
  eps_pow_sum[0] = l;
  for (int s = 1; s <= m; ++s) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < eps.size(); ++j) acc += std::pow(eps(j), s);
    eps_pow_sum[static_cast<std::size_t>(s)] = acc;
  }
  const double eps_sum = eps.sum();

  detail::KahanSum sum;
  detail::KahanSum abs_sum;
  for (int t = 0; t <= k; ++t) {
    const int s_lo = std::max(0, t - (k - m));
    const int s_hi = std::min(t, m);
    for (int s = s_lo; s <= s_hi; ++s) {
      const double term =
          kChoose[static_cast<std::size_t>(m)][static_cast<std::size_t>(s)] *
          kChoose[static_cast<std::size_t>(k - m)]
                 [static_cast<std::size_t>(t - s)] *
          eps_pow_sum[static_cast<std::size_t>(s)] *
          std::pow(eps_sum, t - s) * std::pow(b, k - t) *
          std::pow(l, k - m - t + s);
      sum.add(term);
      abs_sum.add(std::abs(term));
    }
  }
  return {sum.value(), abs_sum.value()};
}

/// All estimators recomputed through their distinct-index forms, keyed
/// like the Monte Carlo estimands: eps2, b2, eps3, b3, eps4, b4, fs_eps3,
/// fs_b3, fs_eps4, fs_b4, fs_plugin_eps4, fs_plugin_b4. The plug-in pair
/// subtracts 3 * plugin_b2 * plugin_eps2 with externally supplied values so
/// a comparison against the polynomial route can inject identical ones.
/// Group eligibility thresholds mirror the estimators exactly.
using OracleReport = std::map<std::string, OracleEntry>;

inline OracleReport oracle_estimates(
    const std::vector<Eigen::VectorXd>& residuals, double plugin_b2,
    double plugin_eps2) {
  struct Term {
    const char* key;
    long min_l;
    bool per_row;
    double (*term)(const Eigen::VectorXd&, double* scale);
  };

  // Each lambda returns one group's contribution plus the magnitude of the
  // pieces it was assembled from.
  static const auto sum_pow = [](const Eigen::VectorXd& e, int m) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < e.size(); ++j) acc += std::pow(e(j), m);
    return acc;
  };
  static const auto abs_sum_pow = [](const Eigen::VectorXd& e, int m) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < e.size(); ++j) acc += std::pow(std::abs(e(j)), m);
    return acc;
  };

  static const Term kTerms[] = {
      {"eps2", 2, true,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double mag = 0.0;
         const int p11[] = {1, 1};
         const double u11 = detail::u_stat_impl(e, p11, &mag);
         *scale = abs_sum_pow(e, 2) + mag / (l - 1.0);
         return sum_pow(e, 2) - u11 / (l - 1.0);
       }},
      {"b2", 2, false,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double mag = 0.0;
         const int p11[] = {1, 1};
         const double u11 = detail::u_stat_impl(e, p11, &mag);
         *scale = mag / (l * (l - 1.0));
         return u11 / (l * (l - 1.0));
       }},
      {"eps3", 3, true,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m111 = 0.0, m21 = 0.0;
         const int p111[] = {1, 1, 1};
         const int p21[] = {2, 1};
         const double u111 = detail::u_stat_impl(e, p111, &m111);
         const double u21 = detail::u_stat_impl(e, p21, &m21);
         *scale = 2.0 * m111 / ((l - 1.0) * (l - 2.0)) + 3.0 * m21 / (l - 1.0) +
                  abs_sum_pow(e, 3);
         return 2.0 * u111 / ((l - 1.0) * (l - 2.0)) - 3.0 * u21 / (l - 1.0) +
                sum_pow(e, 3);
       }},
      {"b3", 3, false,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double mag = 0.0;
         const int p111[] = {1, 1, 1};
         const double u111 = detail::u_stat_impl(e, p111, &mag);
         const double div = l * (l - 1.0) * (l - 2.0);
         *scale = mag / div;
         return u111 / div;
       }},
      {"eps4", 4, true,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m4 = 0.0, m31 = 0.0, m211 = 0.0;
         const int p1111[] = {1, 1, 1, 1};
         const int p31[] = {3, 1};
         const int p211[] = {2, 1, 1};
         const double u1111 = detail::u_stat_impl(e, p1111, &m4);
         const double u31 = detail::u_stat_impl(e, p31, &m31);
         const double u211 = detail::u_stat_impl(e, p211, &m211);
         const double d3 = (l - 1.0) * (l - 2.0) * (l - 3.0);
         *scale = 3.0 * m4 / d3 + 4.0 * m31 / (l - 1.0) +
                  6.0 * m211 / ((l - 1.0) * (l - 2.0)) + abs_sum_pow(e, 4);
         return -3.0 * u1111 / d3 - 4.0 * u31 / (l - 1.0) +
                6.0 * u211 / ((l - 1.0) * (l - 2.0)) + sum_pow(e, 4);
       }},
      {"b4", 4, false,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double mag = 0.0;
         const int p1111[] = {1, 1, 1, 1};
         const double u1111 = detail::u_stat_impl(e, p1111, &mag);
         const double div = l * (l - 1.0) * (l - 2.0) * (l - 3.0);
         *scale = mag / div;
         return u1111 / div;
       }},
      {"fs_eps3", 2, true,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m21 = 0.0;
         const int p21[] = {2, 1};
         const double u21 = detail::u_stat_impl(e, p21, &m21);
         *scale = abs_sum_pow(e, 3) + m21 / (l - 1.0);
         return sum_pow(e, 3) - u21 / (l - 1.0);
       }},
      {"fs_b3", 2, false,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m21 = 0.0;
         const int p21[] = {2, 1};
         const double u21 = detail::u_stat_impl(e, p21, &m21);
         *scale = m21 / (l * (l - 1.0));
         return u21 / (l * (l - 1.0));
       }},
      {"fs_eps4", 3, true,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m31 = 0.0, m211 = 0.0;
         const int p31[] = {3, 1};
         const int p211[] = {2, 1, 1};
         const double u31 = detail::u_stat_impl(e, p31, &m31);
         const double u211 = detail::u_stat_impl(e, p211, &m211);
         *scale = abs_sum_pow(e, 4) + 5.0 * m31 / (2.0 * (l - 1.0)) +
                  3.0 * m211 / (2.0 * (l - 1.0) * (l - 2.0));
         return sum_pow(e, 4) - 5.0 * u31 / (2.0 * (l - 1.0)) +
                3.0 * u211 / (2.0 * (l - 1.0) * (l - 2.0));
       }},
      {"fs_b4", 3, false,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m31 = 0.0, m211 = 0.0;
         const int p31[] = {3, 1};
         const int p211[] = {2, 1, 1};
         const double u31 = detail::u_stat_impl(e, p31, &m31);
         const double u211 = detail::u_stat_impl(e, p211, &m211);
         const double div = 2.0 * l * (l - 1.0) * (l - 2.0);
         *scale = (3.0 * m211 + (l - 2.0) * m31) / div;
         return (3.0 * u211 - (l - 2.0) * u31) / div;
       }},
      {"fs_plugin_eps4", 2, true,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m31 = 0.0;
         const int p31[] = {3, 1};
         const double u31 = detail::u_stat_impl(e, p31, &m31);
         *scale = abs_sum_pow(e, 4) + m31 / (l - 1.0);
         return sum_pow(e, 4) - u31 / (l - 1.0);
       }},
      {"fs_plugin_b4", 2, false,
       [](const Eigen::VectorXd& e, double* scale) {
         const double l = static_cast<double>(e.size());
         double m31 = 0.0;
         const int p31[] = {3, 1};
         const double u31 = detail::u_stat_impl(e, p31, &m31);
         *scale = m31 / (l * (l - 1.0));
         return u31 / (l * (l - 1.0));
       }},
  };

  OracleReport report;
  for (const Term& t : kTerms) {
    detail::KahanSum acc;
    detail::KahanSum scale_acc;
    long groups = 0;
    long rows = 0;
    for (const auto& e : residuals) {
      if (e.size() < t.min_l) continue;
      double scale = 0.0;
      acc.add(t.term(e, &scale));
      scale_acc.add(scale);
      ++groups;
      rows += e.size();
    }
    if (groups == 0) {
      throw EmptyData(std::string("oracle: no group large enough for ") + t.key);
    }
    const double divisor = static_cast<double>(t.per_row ? rows : groups);
    report[t.key] = {acc.value() / divisor, scale_acc.value() / divisor};
  }

  // The plug-in fourth moments subtract the mixed second-moment term.
  const double cross = 3.0 * plugin_b2 * plugin_eps2;
  for (const char* key : {"fs_plugin_eps4", "fs_plugin_b4"}) {
    auto& entry = report[key];
    entry.value -= cross;
    entry.scale += std::abs(cross);
  }
  return report;
}

/// Random small dataset for identity checking: 2..6 groups of 4..8 rows,
/// p in {0,1,2}, laws cycling through the five scenarios so all three
/// distributions appear. Built directly from streams (not via `simulate`)
/// to keep the oracle path independent of the generator's internals.
inline GroupedDataset oracle_check_dataset(std::uint64_t seed, long trial) {
  const char scenario = static_cast<char>('a' + trial % 5);
  const DistributionLaw eps_law = scenario_eps_law(scenario);
  const DistributionLaw b_law = scenario_b_law(scenario);
  const auto tr = static_cast<std::uint64_t>(trial);

  auto shape_stream = rng::substream(seed, tr, 0, 100);
  const long n = 2 + static_cast<long>(shape_stream.next_u64() % 5);
  const auto p = static_cast<Eigen::Index>(shape_stream.next_u64() % 3);
  const double beta_full[2] = {0.7, -0.4};

  GroupedDataset ds;
  ds.p = p;
  ds.groups.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    Group& g = ds.groups[static_cast<std::size_t>(i)];
    g.id = std::to_string(i + 1);
    auto group_stream = rng::substream(seed, tr, static_cast<std::uint64_t>(i) + 1, 101);
    const long l = 4 + static_cast<long>(group_stream.next_u64() % 5);
    const double b = b_law.sample(group_stream);
    g.x.resize(l, p);
    g.y.resize(l);
    for (long j = 0; j < l; ++j) {
      double xb = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) {
        g.x(j, k) = group_stream.normal();
        xb += g.x(j, k) * beta_full[k];
      }
      g.y(j) = 0.3 + xb + b + eps_law.sample(group_stream);
    }
  }
  return ds;
}

/// Agreement threshold for the polynomial-vs-distinct-index and expansion
/// checks, shared by the CLI subcommand and the acceptance suite.
inline constexpr double kOracleTolerance = 1e-10;

/// Worst observed deviation across a batch of randomized checks, with a
/// description of where it occurred. `rel` is |poly - oracle| divided by
/// max(|poly|, |oracle|, scale) where scale is the summed magnitude of the
/// oracle's terms; without that floor a heavily cancelling statistic would
/// report garbage digits as disagreement.
struct OracleCheckResult {
  double max_rel_estimators = 0.0;
  double max_rel_expansion = 0.0;
  std::string worst_estimator;
  std::string worst_expansion;
  long estimator_comparisons = 0;
  long expansion_comparisons = 0;
};

namespace detail {

inline double guarded_rel(double a, double b, double scale) {
  const double denom = std::max({std::abs(a), std::abs(b), scale, 1e-300});
  return std::abs(a - b) / denom;
}

}  // namespace detail

/// Run `dataset_trials` full estimator cross-checks (polynomial route vs
/// distinct-index route on randomized fits) and `expansion_trials` checks
/// of the binomial decomposition against directly computed group products.
inline OracleCheckResult run_oracle_checks(std::uint64_t seed,
                                           long dataset_trials,
                                           long expansion_trials) {
  if (dataset_trials < 1 || expansion_trials < 1) {
    throw UsageError("oracle checks need at least one trial of each kind");
  }
  OracleCheckResult result;

  for (long trial = 0; trial < dataset_trials; ++trial) {
    const GroupedDataset ds = oracle_check_dataset(seed, trial);
    const FixedEffectsFit fit = gls_fit(ds);
    const GroupPowerSums ps = power_sums(fit);

    // Identical plug-in second moments on both routes, so the comparison
    // isolates the fourth-moment combination itself.
    const double g_eps2 = gamma_eps2(ps);
    const double g_b2 = gamma_b2(ps);

    std::map<std::string, double> poly;
    poly["eps2"] = g_eps2;
    poly["b2"] = g_b2;
    poly["eps3"] = gamma_eps3(ps);
    poly["b3"] = gamma_b3(ps);
    poly["eps4"] = gamma_eps4(ps);
    poly["b4"] = gamma_b4(ps);
    poly["fs_eps3"] = fs_gamma_eps3(ps);
    poly["fs_b3"] = fs_gamma_b3(ps);
    poly["fs_eps4"] = fs_gamma_eps4(ps);
    poly["fs_b4"] = fs_gamma_b4(ps);
    const PluginFourth plugin = fs_gamma_plugin4(ps, g_b2, g_eps2);
    poly["fs_plugin_eps4"] = plugin.eps4;
    poly["fs_plugin_b4"] = plugin.b4;

    const OracleReport oracle = oracle_estimates(fit.residuals, g_b2, g_eps2);
    for (const auto& [key, entry] : oracle) {
      const double rel = detail::guarded_rel(poly.at(key), entry.value, entry.scale);
      ++result.estimator_comparisons;
      if (rel > result.max_rel_estimators) {
        result.max_rel_estimators = rel;
        result.worst_estimator = key + " (trial " + std::to_string(trial) + ")";
      }
    }
  }

  for (long trial = 0; trial < expansion_trials; ++trial) {
    auto stream = rng::substream(seed, static_cast<std::uint64_t>(trial), 0, 200);
    const long l = 2 + static_cast<long>(stream.next_u64() % 7);
    Eigen::VectorXd eps(l);
    for (long j = 0; j < l; ++j) eps(j) = 2.0 * stream.normal();
    const double b = 1.5 * stream.normal();
    const Eigen::VectorXd e = eps.array() + b;
    for (int k = 2; k <= 4; ++k) {
      for (int m = 1; m <= k; ++m) {
        const OracleEntry expanded = expand_group_product(eps, b, m, k);
        const double direct = direct_f(e, m, k);
        const double rel =
            detail::guarded_rel(direct, expanded.value, expanded.scale);
        ++result.expansion_comparisons;
        if (rel > result.max_rel_expansion) {
          result.max_rel_expansion = rel;
          result.worst_expansion = "f_" + std::to_string(m) + "^" +
                                   std::to_string(k) + " (trial " +
                                   std::to_string(trial) + ")";
        }
      }
    }
  }

  return result;
}

}  // namespace lmmom
