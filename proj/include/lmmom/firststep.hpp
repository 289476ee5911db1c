#pragma once

#include <vector>

#include "lmmom/errors.hpp"
#include "lmmom/moments.hpp"

namespace lmmom {

/// First-step moment estimators.
///
/// These are the simpler estimating equations one writes down first: each
/// order-k equation uses the statistics S_k and S_{k-1} S_1 only, instead
/// of the full f_m^k family the efficient estimators combine. They need
/// smaller groups (order 3 works from l_i >= 2) and are easier to derive,
/// but on unbalanced designs their error-side variance is strictly larger;
/// the Monte Carlo harness exposes that inefficiency empirically and the
/// asymptotics module quantifies it.

/// First-step third moment of the errors,
///   fs_gamma_eps3 = (1/N) sum_i [ l_i S_3 - S_2 S_1 ] / (l_i - 1).
/// Groups need l_i >= 2.
inline double fs_gamma_eps3(const GroupPowerSums& ps,
                            long* groups_used = nullptr,
                            long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 2, true,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        return (l * g.s[2] - g.s[1] * g.s[0]) / (l - 1.0);
      },
      groups_used, rows_used);
}

/// First-step third moment of the random effects,
///   fs_gamma_b3 = (1/n) sum_i [ S_2 S_1 - S_3 ] / (l_i (l_i - 1)).
inline double fs_gamma_b3(const GroupPowerSums& ps,
                          long* groups_used = nullptr,
                          long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 2, false,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        return (g.s[1] * g.s[0] - g.s[2]) / (l * (l - 1.0));
      },
      groups_used, rows_used);
}

/// Modified first-step fourth moment of the errors,
///   fs_gamma_eps4 = (1/N) sum_i [ (2 l_i^2 - l_i) S_4 - (5 l_i - 4) S_3 S_1
///                                 + 3 S_2 S_1^2 - 3 S_2^2 ]
///                              / (2 (l_i - 1)(l_i - 2)).
/// The combination eliminates the second-moment nuisance terms that the
/// plain plug-in version below must subtract explicitly. Groups need
/// l_i >= 3.
inline double fs_gamma_eps4(const GroupPowerSums& ps,
                            long* groups_used = nullptr,
                            long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 3, true,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        const double s1 = g.s[0], s2 = g.s[1], s3 = g.s[2], s4 = g.s[3];
        return ((2.0 * l * l - l) * s4 - (5.0 * l - 4.0) * s3 * s1 +
                3.0 * s2 * s1 * s1 - 3.0 * s2 * s2) /
               (2.0 * (l - 1.0) * (l - 2.0));
      },
      groups_used, rows_used);
}

/// Modified first-step fourth moment of the random effects,
///   fs_gamma_b4 = (1/n) sum_i [ 3 S_2 S_1^2 - 3 S_2^2 - (l_i + 4) S_3 S_1
///                               + (l_i + 4) S_4 ]
///                            / (2 l_i (l_i - 1)(l_i - 2)).
inline double fs_gamma_b4(const GroupPowerSums& ps,
                          long* groups_used = nullptr,
                          long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 3, false,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        const double s1 = g.s[0], s2 = g.s[1], s3 = g.s[2], s4 = g.s[3];
        return (3.0 * s2 * s1 * s1 - 3.0 * s2 * s2 - (l + 4.0) * s3 * s1 +
                (l + 4.0) * s4) /
               (2.0 * l * (l - 1.0) * (l - 2.0));
      },
      groups_used, rows_used);
}

/// Plug-in first-step fourth moments. Both subtract the mixed term
/// 3 gamma_b2 gamma_eps2 using externally supplied second-moment estimates:
///
///   plugin b4  = (1/n) sum_i [ S_3 S_1 - S_4 ] / (l_i (l_i - 1))
///                - 3 g_b2 g_eps2
///   plugin eps4 = (1/N) sum_i [ l_i S_4 - S_3 S_1 ] / (l_i - 1)
///                - 3 g_b2 g_eps2
///
/// Groups need only l_i >= 2, which makes these the fallback when a design
/// has many pairs but few triples.
struct PluginFourth {
  double b4 = 0.0;
  double eps4 = 0.0;
};

inline PluginFourth fs_gamma_plugin4(const GroupPowerSums& ps, double g_b2,
                                     double g_eps2,
                                     long* groups_used = nullptr,
                                     long* rows_used = nullptr) {
  PluginFourth out;
  const double cross = 3.0 * g_b2 * g_eps2;
  out.b4 = detail::group_sum(
               ps, 2, false,
               [](const GroupPowerSums::Entry& g) {
                 const double l = static_cast<double>(g.l);
                 return (g.s[2] * g.s[0] - g.s[3]) / (l * (l - 1.0));
               },
               groups_used, rows_used) -
           cross;
  out.eps4 = detail::group_sum(ps, 2, true,
                               [](const GroupPowerSums::Entry& g) {
                                 const double l = static_cast<double>(g.l);
                                 return (l * g.s[3] - g.s[2] * g.s[0]) /
                                        (l - 1.0);
                               }) -
             cross;
  return out;
}

/// Run the first-step estimators for the requested orders (subset of
/// {2,3,4}). Order 2 has no separate first-step form; the efficient
/// second-moment estimators are reused so that downstream plug-ins always
/// have them. Order 4 uses the modified combinations; the plug-in pair is
/// available separately via fs_gamma_plugin4.
inline MomentEstimates firststep_estimates(const GroupPowerSums& ps,
                                           const std::vector<int>& orders = {
                                               2, 3, 4}) {
  MomentEstimates est;
  est.variant = Variant::first_step;
  for (const int k : orders) {
    long n = 0, N = 0;
    switch (k) {
      case 2:
        est.eps[2] = gamma_eps2(ps, &n, &N);
        est.b[2] = gamma_b2(ps);
        break;
      case 3:
        est.eps[3] = fs_gamma_eps3(ps, &n, &N);
        est.b[3] = fs_gamma_b3(ps);
        break;
      case 4:
        est.eps[4] = fs_gamma_eps4(ps, &n, &N);
        est.b[4] = fs_gamma_b4(ps);
        break;
      default:
        throw UsageError("moment order must be 2, 3, or 4");
    }
    est.groups_used[k] = n;
    est.rows_used[k] = N;
  }
  detail::warn_if_negative_even(est);
  return est;
}

}  // namespace lmmom
