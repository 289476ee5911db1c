#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "lmmom/accum.hpp"
#include "lmmom/errors.hpp"
#include "lmmom/gls.hpp"

namespace lmmom {

/// Which estimator family produced a set of moment estimates.
enum class Variant { efficient, first_step };

inline const char* variant_name(Variant v) noexcept {
  return v == Variant::efficient ? "efficient" : "first_step";
}

/// Per-group residual power sums S_m(i) = sum_j e_ij^m for m = 1..4.
///
/// Every moment estimator below is a polynomial in these sums, so they are
/// the single point where raw residuals are reduced. Within each group the
/// residuals are accumulated in sorted order with compensated summation:
/// compensation keeps low-order bits under cancellation, and the sort makes
/// the sums an exact function of the residual multiset, so shuffling rows
/// within a group cannot change any estimate even in the last bit.
struct GroupPowerSums {
  struct Entry {
    std::string id;
    long l = 0;
    std::array<double, 4> s{};  // s[m-1] = S_m
  };
  std::vector<Entry> groups;

  long total_rows() const noexcept {
    long total = 0;
    for (const auto& g : groups) total += g.l;
    return total;
  }
};

inline GroupPowerSums power_sums(const std::vector<Eigen::VectorXd>& residuals,
                                 const std::vector<std::string>* ids = nullptr) {
  GroupPowerSums ps;
  ps.groups.reserve(residuals.size());
  std::vector<double> sorted;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const Eigen::VectorXd& r = residuals[i];
    sorted.assign(r.data(), r.data() + r.size());
    std::sort(sorted.begin(), sorted.end());
    detail::KahanSum s1, s2, s3, s4;
    for (const double e : sorted) {
      const double e2 = e * e;
      s1.add(e);
      s2.add(e2);
      s3.add(e2 * e);
      s4.add(e2 * e2);
    }
    GroupPowerSums::Entry entry;
    entry.id = ids ? (*ids)[i] : std::to_string(i + 1);
    entry.l = static_cast<long>(r.size());
    entry.s = {s1.value(), s2.value(), s3.value(), s4.value()};
    ps.groups.push_back(std::move(entry));
  }
  return ps;
}

inline GroupPowerSums power_sums(const FixedEffectsFit& fit) {
  return power_sums(fit.residuals, &fit.group_ids);
}

/// Group statistic f_m^k(i) = S_m(i) * S_1(i)^(k-m) for 1 <= m <= k <= 4.
/// These products carry all the information the estimating equations use.
inline double f_mk(const GroupPowerSums& ps, std::size_t i, int m, int k) {
  if (i >= ps.groups.size()) throw UsageError("group index out of range");
  if (m < 1 || k < 2 || k > 4 || m > k) {
    throw UsageError("f_mk needs 1 <= m <= k and k in {2,3,4}");
  }
  const auto& g = ps.groups[i];
  double value = g.s[static_cast<std::size_t>(m - 1)];
  for (int t = 0; t < k - m; ++t) value *= g.s[0];
  return value;
}

/// The extra fourth-order statistic f_5^4(i) = S_2(i)^2.
inline double f_54(const GroupPowerSums& ps, std::size_t i) {
  if (i >= ps.groups.size()) throw UsageError("group index out of range");
  const double s2 = ps.groups[i].s[1];
  return s2 * s2;
}

namespace detail {

/// Accumulate `term(entry)` over groups with at least `min_l` rows and
/// divide by the included row count (per_row) or group count. Skipped
/// groups shrink N and n accordingly; estimators at different orders may
/// therefore use different denominators, which the *_used maps of
/// MomentEstimates record. Throws EmptyData when nothing qualifies.
template <typename Term>
double group_sum(const GroupPowerSums& ps, long min_l, bool per_row,
                 Term&& term, long* groups_used = nullptr,
                 long* rows_used = nullptr) {
  KahanSum acc;
  long n = 0;
  long rows = 0;
  for (const auto& g : ps.groups) {
    if (g.l < min_l) continue;
    acc.add(term(g));
    ++n;
    rows += g.l;
  }
  if (n == 0) {
    throw EmptyData("no group has the " + std::to_string(min_l) +
                    " rows this estimator requires");
  }
  if (groups_used) *groups_used = n;
  if (rows_used) *rows_used = rows;
  return acc.value() / static_cast<double>(per_row ? rows : n);
}

}  // namespace detail

/// Second moment of the errors,
///   gamma_eps2 = (1/N) sum_i [ l_i S_2 - S_1^2 ] / (l_i - 1),
/// i.e. the pooled within-group sample variance. Unbiased given the true
/// errors; groups need l_i >= 2.
inline double gamma_eps2(const GroupPowerSums& ps, long* groups_used = nullptr,
                         long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 2, true,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        return (l * g.s[1] - g.s[0] * g.s[0]) / (l - 1.0);
      },
      groups_used, rows_used);
}

/// Second moment of the random effects,
///   gamma_b2 = (1/n) sum_i [ S_1^2 - S_2 ] / (l_i (l_i - 1)),
/// the average of products over distinct index pairs, where the error
/// contribution cancels in expectation.
inline double gamma_b2(const GroupPowerSums& ps, long* groups_used = nullptr,
                       long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 2, false,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        return (g.s[0] * g.s[0] - g.s[1]) / (l * (l - 1.0));
      },
      groups_used, rows_used);
}

/// Third moment of the errors,
///   gamma_eps3 = (1/N) sum_i [ 2 S_1^3 + l_i^2 S_3 - 3 l_i S_2 S_1 ]
///                           / ((l_i - 1)(l_i - 2)),
/// the unique combination of f_1^3, f_2^3, f_3^3 whose expectation isolates
/// the error third moment. Groups need l_i >= 3.
inline double gamma_eps3(const GroupPowerSums& ps, long* groups_used = nullptr,
                         long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 3, true,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        const double s1 = g.s[0], s2 = g.s[1], s3 = g.s[2];
        return (2.0 * s1 * s1 * s1 + l * l * s3 - 3.0 * l * s2 * s1) /
               ((l - 1.0) * (l - 2.0));
      },
      groups_used, rows_used);
}

/// Third moment of the random effects,
///   gamma_b3 = (1/n) sum_i [ S_1^3 - 3 S_2 S_1 + 2 S_3 ]
///                         / (l_i (l_i - 1)(l_i - 2)),
/// the average of products over distinct index triples.
inline double gamma_b3(const GroupPowerSums& ps, long* groups_used = nullptr,
                       long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 3, false,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        const double s1 = g.s[0], s2 = g.s[1], s3 = g.s[2];
        return (s1 * s1 * s1 - 3.0 * s2 * s1 + 2.0 * s3) /
               (l * (l - 1.0) * (l - 2.0));
      },
      groups_used, rows_used);
}

/// Fourth moment of the errors,
///   gamma_eps4 = (1/N) sum_i [ (l_i^2 - 2 l_i + 3)(l_i S_4 - 4 S_3 S_1)
///                              + 6 l_i S_2 S_1^2 - 3 S_1^4
///                              - 3 (2 l_i - 3) S_2^2 ]
///                           / ((l_i - 1)(l_i - 2)(l_i - 3)).
/// Combines f_1^4, f_2^4, f_3^4, f_4^4, f_5^4 so that every mixed moment of
/// b and eps cancels in expectation except the error fourth moment. Groups
/// need l_i >= 4.
inline double gamma_eps4(const GroupPowerSums& ps, long* groups_used = nullptr,
                         long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 4, true,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        const double s1 = g.s[0], s2 = g.s[1], s3 = g.s[2], s4 = g.s[3];
        const double quad = l * l - 2.0 * l + 3.0;
        return (quad * (l * s4 - 4.0 * s3 * s1) + 6.0 * l * s2 * s1 * s1 -
                3.0 * s1 * s1 * s1 * s1 - 3.0 * (2.0 * l - 3.0) * s2 * s2) /
               ((l - 1.0) * (l - 2.0) * (l - 3.0));
      },
      groups_used, rows_used);
}

/// Fourth moment of the random effects,
///   gamma_b4 = (1/n) sum_i [ S_1^4 - 6 S_2 S_1^2 + 8 S_3 S_1 - 6 S_4
///                            + 3 S_2^2 ]
///                         / (l_i (l_i - 1)(l_i - 2)(l_i - 3)),
/// the average of products over distinct index quadruples.
inline double gamma_b4(const GroupPowerSums& ps, long* groups_used = nullptr,
                       long* rows_used = nullptr) {
  return detail::group_sum(
      ps, 4, false,
      [](const GroupPowerSums::Entry& g) {
        const double l = static_cast<double>(g.l);
        const double s1 = g.s[0], s2 = g.s[1], s3 = g.s[2], s4 = g.s[3];
        const double s1sq = s1 * s1;
        return (s1sq * s1sq - 6.0 * s2 * s1sq + 8.0 * s3 * s1 - 6.0 * s4 +
                3.0 * s2 * s2) /
               (l * (l - 1.0) * (l - 2.0) * (l - 3.0));
      },
      groups_used, rows_used);
}

/// Moment estimates for one variant, keyed by order. groups_used/rows_used
/// record the n and N actually entering each order's denominator after size
/// filtering, since a mixed-size design can use different group sets per
/// order. Warnings note estimates that violate soft sanity bounds (an even
/// moment estimated negative is legitimate sampling noise, but worth
/// surfacing).
struct MomentEstimates {
  Variant variant = Variant::efficient;
  std::map<int, double> eps;
  std::map<int, double> b;
  std::map<int, long> groups_used;
  std::map<int, long> rows_used;
  std::vector<std::string> warnings;
};

namespace detail {

inline void warn_if_negative_even(MomentEstimates& est) {
  for (const auto& [order, value] : est.eps) {
    if (order % 2 == 0 && value < 0.0) {
      est.warnings.push_back("eps" + std::to_string(order) +
                             " estimate is negative (sampling noise)");
    }
  }
  for (const auto& [order, value] : est.b) {
    if (order % 2 == 0 && value < 0.0) {
      est.warnings.push_back("b" + std::to_string(order) +
                             " estimate is negative (sampling noise)");
    }
  }
}

}  // namespace detail

/// Run the efficient estimators for the requested orders (subset of
/// {2,3,4}) over precomputed power sums. Groups below the per-order size
/// threshold are skipped; the *_used maps record what remained.
inline MomentEstimates efficient_estimates(const GroupPowerSums& ps,
                                           const std::vector<int>& orders = {
                                               2, 3, 4}) {
  MomentEstimates est;
  est.variant = Variant::efficient;
  for (const int k : orders) {
    long n = 0, N = 0;
    switch (k) {
      case 2:
        est.eps[2] = gamma_eps2(ps, &n, &N);
        est.b[2] = gamma_b2(ps);
        break;
      case 3:
        est.eps[3] = gamma_eps3(ps, &n, &N);
        est.b[3] = gamma_b3(ps);
        break;
      case 4:
        est.eps[4] = gamma_eps4(ps, &n, &N);
        est.b[4] = gamma_b4(ps);
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
