// Release gate: every acceptance criterion in one binary, one verdict line
// each. Exit status is the number of failed criteria.
//
// The Monte Carlo criteria run at fixed seeds. Their tolerance bands are
// statistical, and the seeds were chosen once (not tuned per criterion):
// seed 1 everywhere, with design sizes recorded next to each check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lmmom/mc.hpp"
#include "lmmom/oracle.hpp"

namespace {

int g_failures = 0;

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

void verdict(int criterion, const char* label, bool pass, const std::string& detail) {
  std::printf("criterion %d (%s): %s  %s\n", criterion, label,
              pass ? "PASS" : "FAIL", detail.c_str());
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Mean and sample standard deviation of a vector.
struct Stats {
  double mean = 0.0;
  double sd = 0.0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  for (const double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double acc = 0.0;
  for (const double x : xs) acc += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  return s;
}

// ---------------------------------------------------------------- criteria 1+2

void criterion_oracle() {
  auto start = std::chrono::steady_clock::now();
  const auto est = lmmom::run_oracle_checks(1, 200, 1);
  const double t1 = elapsed_s(start);
  verdict(1, "estimator oracle equivalence",
          est.max_rel_estimators <= lmmom::kOracleTolerance && t1 < 10.0,
          "max rel " + fmt(est.max_rel_estimators) + " over " +
              std::to_string(est.estimator_comparisons) + " comparisons (tol 1e-10, " +
              fmt(t1) + "s), worst " + est.worst_estimator);

  start = std::chrono::steady_clock::now();
  const auto exp = lmmom::run_oracle_checks(1, 1, 500);
  const double t2 = elapsed_s(start);
  verdict(2, "product expansion identity",
          exp.max_rel_expansion <= lmmom::kOracleTolerance && t2 < 5.0,
          "max rel " + fmt(exp.max_rel_expansion) + " over " +
              std::to_string(exp.expansion_comparisons) + " comparisons (tol 1e-10, " +
              fmt(t2) + "s), worst " + exp.worst_expansion);
}

// ------------------------------------------------------------------ criterion 3

// Monte Carlo mean of each per-group estimating function over independent
// groups of true errors e_ij = b_i + eps_ij (all half-scaled normal,
// l = 6), against the exact expectation, within 4 MC standard errors.
void criterion_unbiasedness() {
  const auto start = std::chrono::steady_clock::now();
  constexpr long kGroups = 100000;
  constexpr long kL = 6;
  const double l = static_cast<double>(kL);

  struct Identity {
    const char* name;
    double target;
    std::vector<double> values;
  };
  // Moments of the half-scaled normal: m2 = 0.1875 + ... targets derived
  // from eps2 = b2 = 0.25, eps4 = b4 = 0.1875, odd moments zero. The plain
  // f expectations use E e^2 = 0.5, E e^4 = 0.75 for e = b + eps.
  std::vector<Identity> ids = {
      {"second moment, error side", 0.25, {}},
      {"second moment, effect side", 0.25, {}},
      {"third moment, error side", 0.0, {}},
      {"third moment, effect side", 0.0, {}},
      {"fourth moment, error side", 0.1875, {}},
      {"fourth moment, effect side", 0.1875, {}},
      {"first-step third, error side", 0.0, {}},
      {"first-step third, effect side", 0.0, {}},
      {"first-step fourth, error side", 0.1875, {}},
      {"first-step fourth, effect side", 0.1875, {}},
      {"E[S4]", 4.5, {}},
      {"E[S3 S1]", 15.75, {}},
      {"E[S2 S1^2]", 68.25, {}},
      {"E[S2^2]", 15.75, {}},
      {"E[S2 S1^2 - S2^2]", 52.5, {}},
  };
  for (auto& id : ids) id.values.reserve(kGroups);

  for (long i = 0; i < kGroups; ++i) {
    auto stream = lmmom::rng::substream(1, static_cast<std::uint64_t>(i), 0, 42);
    const double b = 0.5 * stream.normal();
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    for (long j = 0; j < kL; ++j) {
      const double e = b + 0.5 * stream.normal();
      const double e2 = e * e;
      s1 += e;
      s2 += e2;
      s3 += e2 * e;
      s4 += e2 * e2;
    }
    const double d2 = l * (l - 1.0);
    const double d3 = d2 * (l - 2.0);
    const double d4 = d3 * (l - 3.0);
    ids[0].values.push_back((l * s2 - s1 * s1) / d2);
    ids[1].values.push_back((s1 * s1 - s2) / d2);
    ids[2].values.push_back((2 * s1 * s1 * s1 + l * l * s3 - 3 * l * s2 * s1) / d3);
    ids[3].values.push_back((s1 * s1 * s1 - 3 * s2 * s1 + 2 * s3) / d3);
    ids[4].values.push_back(((l * l - 2 * l + 3) * (l * s4 - 4 * s3 * s1) +
                             6 * l * s2 * s1 * s1 - 3 * s1 * s1 * s1 * s1 -
                             3 * (2 * l - 3) * s2 * s2) /
                            d4);
    ids[5].values.push_back((s1 * s1 * s1 * s1 - 6 * s2 * s1 * s1 +
                             8 * s3 * s1 - 6 * s4 + 3 * s2 * s2) /
                            d4);
    ids[6].values.push_back((l * s3 - s2 * s1) / d2);
    ids[7].values.push_back((s2 * s1 - s3) / d2);
    ids[8].values.push_back(((2 * l * l - l) * s4 - (5 * l - 4) * s3 * s1 +
                             3 * s2 * s1 * s1 - 3 * s2 * s2) /
                            (2 * d3));
    ids[9].values.push_back((3 * s2 * s1 * s1 - 3 * s2 * s2 -
                             (l + 4) * s3 * s1 + (l + 4) * s4) /
                            (2 * d3));
    ids[10].values.push_back(s4);
    ids[11].values.push_back(s3 * s1);
    ids[12].values.push_back(s2 * s1 * s1);
    ids[13].values.push_back(s2 * s2);
    ids[14].values.push_back(s2 * s1 * s1 - s2 * s2);
  }

  bool all_pass = true;
  double worst_sigma = 0.0;
  std::string worst_name;
  for (const auto& id : ids) {
    const Stats s = stats_of(id.values);
    const double se = s.sd / std::sqrt(static_cast<double>(kGroups));
    const double sigmas = std::abs(s.mean - id.target) / se;
    if (sigmas > worst_sigma) {
      worst_sigma = sigmas;
      worst_name = id.name;
    }
    if (sigmas > 4.0) {
      all_pass = false;
      std::printf("  unbiasedness violation: %s mean %.6g vs %.6g (%.2f MC SE)\n",
                  id.name, s.mean, id.target, sigmas);
    }
  }
  verdict(3, "estimating-function unbiasedness", all_pass,
          std::to_string(ids.size()) + " identities over " +
              std::to_string(kGroups) + " groups, worst " + fmt(worst_sigma) +
              " MC SE (" + worst_name + ", limit 4), " +
              fmt(elapsed_s(start)) + "s");
}

// -------------------------------------------------------------- criteria 4+5+6

lmmom::McReport run_report(char scenario, long n, long reps, std::uint64_t seed,
                           const char* sizes, bool first_step) {
  lmmom::McConfig cfg;
  cfg.base.scenario = scenario;
  cfg.base.n = n;
  cfg.base.seed = seed;
  if (sizes) cfg.base.sizes = lmmom::GroupSizeLaw::parse(sizes);
  cfg.reps = reps;
  cfg.run_first_step = first_step;
  cfg.run_efficient = true;
  return lmmom::run_mc(cfg);
}

struct BandCheck {
  const char* estimand;
  double mean_target;
  double mean_abs_tol;
  double std_target;
  double std_rel_tol;
};

bool check_bands(const lmmom::McReport& report, const std::vector<BandCheck>& checks,
                 std::string& detail) {
  bool pass = true;
  double worst_mean = 0.0, worst_std = 0.0;
  for (const auto& c : checks) {
    const auto& row = report.row(c.estimand);
    const double mean_dev = std::abs(row.mean - c.mean_target);
    const double std_dev_rel =
        std::abs(row.std_dev - c.std_target) / c.std_target;
    worst_mean = std::max(worst_mean, mean_dev / c.mean_abs_tol);
    worst_std = std::max(worst_std, std_dev_rel / c.std_rel_tol);
    if (mean_dev > c.mean_abs_tol) {
      pass = false;
      detail += std::string(" [") + c.estimand + " mean " + fmt(row.mean) +
                " vs " + fmt(c.mean_target) + "]";
    }
    if (std_dev_rel > c.std_rel_tol) {
      pass = false;
      detail += std::string(" [") + c.estimand + " std " + fmt(row.std_dev) +
                " vs " + fmt(c.std_target) + "]";
    }
  }
  detail = "worst mean dev " + fmt(worst_mean) + "x band, worst std dev " +
           fmt(worst_std) + "x band" + detail;
  return pass;
}

void criterion_tables() {
  // Reference values: the published n=100 Monte Carlo rows. Mean bands are
  // absolute, std bands relative.
  auto start = std::chrono::steady_clock::now();
  const auto case_a = run_report('a', 100, 1000, 1, nullptr, false);
  std::string detail_a;
  const bool pass_a = check_bands(case_a,
                                  {{"alpha", 1.0, 0.01, 0.0544, 0.20},
                                   {"beta1", 1.0, 0.01, 0.0307, 0.20},
                                   {"beta2", 2.0, 0.01, 0.0302, 0.20},
                                   {"eps2", 0.2496, 0.01, 0.0128, 0.20},
                                   {"b2", 0.2476, 0.01, 0.0392, 0.20}},
                                  detail_a);
  verdict(4, "second-moment table reproduction", pass_a,
          detail_a + " (" + fmt(elapsed_s(start)) + "s)");

  start = std::chrono::steady_clock::now();
  const auto case_c = run_report('c', 100, 1000, 1, nullptr, false);
  std::string detail_5;
  bool pass_5 = check_bands(case_a,
                            {{"eps3", -0.0002, 0.02, 0.0125, 0.25},
                             {"eps4", 0.1867, 0.02, 0.0234, 0.25},
                             {"b3", 0.0005, 0.02, 0.0362, 0.25},
                             {"b4", 0.1835, 0.02, 0.0688, 0.25}},
                            detail_5);
  std::string detail_5c;
  if (!check_bands(case_c,
                   {{"eps3", 0.0002, 0.02, 0.0123, 0.25},
                    {"eps4", 0.1848, 0.02, 0.0216, 0.25},
                    {"b3", 0.2380, 0.02, 0.1778, 0.25},
                    {"b4", 0.5317, 0.02, 0.6445, 0.25}},
                   detail_5c)) {
    pass_5 = false;
  }
  verdict(5, "higher-moment table reproduction", pass_5,
          "case a: " + detail_5 + "; case c: " + detail_5c + " (" +
              fmt(elapsed_s(start)) + "s)");
}

void criterion_variances() {
  // Scaled empirical variances against the limit variances. Group size 48:
  // the limits assume sizes growing with n, and at the default mean size 9
  // the error-side third moment still carries a visible finite-size gap.
  const auto start = std::chrono::steady_clock::now();
  const auto case_a = run_report('a', 400, 1000, 1, "fixed:48", false);
  const auto case_c = run_report('c', 400, 1000, 1, "fixed:48", false);
  const double N = 48.0 * 400.0;
  const double n = 400.0;

  struct VarCheck {
    const char* estimand;
    const lmmom::McReport* report;
    double scale;  // N for error side, n for effect side
    double mu;
    double tol;
  };
  const std::vector<VarCheck> checks = {
      {"eps2", &case_a, N, 0.125, 0.20},
      {"b2", &case_a, n, 0.125, 0.20},
      {"eps3", &case_a, N, 0.09375, 0.20},
      {"b3", &case_c, n, 3.375, 0.20},
      {"eps4", &case_a, N, 0.375, 0.30},
      {"b4", &case_a, n, 0.375, 0.30},
  };
  bool pass = true;
  std::string detail;
  for (const auto& c : checks) {
    const auto& row = c.report->row(c.estimand);
    const double scaled = c.scale * row.std_dev * row.std_dev;
    const double rel = (scaled - c.mu) / c.mu;
    detail += std::string(" ") + c.estimand + " " + fmt(rel * 100) + "%";
    if (std::abs(rel) > c.tol) {
      pass = false;
      detail += "(FAIL)";
    }
  }
  verdict(6, "limit variance match", pass,
          "relative deviations:" + detail + " (" + fmt(elapsed_s(start)) + "s)");
}

// ------------------------------------------------------------------ criterion 7

void criterion_efficiency() {
  const auto start = std::chrono::steady_clock::now();

  // Part 1: heavy-tailed errors with random effects present; the first-step
  // third moment must be strictly noisier. One-sided test at the 1% level
  // via a bootstrap over replications of the variance difference.
  const auto report = run_report('d', 100, 2000, 1, nullptr, true);
  const auto& eff = report.row("eps3");
  const auto& fs = report.row("fs_eps3");
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t r = 0; r < eff.samples.size(); ++r) {
    if (std::isnan(eff.samples[r]) || std::isnan(fs.samples[r])) continue;
    pairs.emplace_back(eff.samples[r], fs.samples[r]);
  }
  const long R = static_cast<long>(pairs.size());
  constexpr long kBoot = 2000;
  auto boot_stream = lmmom::rng::substream(2025, 0, 0, 3);
  std::vector<double> diffs;
  diffs.reserve(kBoot);
  for (long bb = 0; bb < kBoot; ++bb) {
    double sx = 0, sy = 0, sxx = 0, syy = 0;
    for (long r = 0; r < R; ++r) {
      const auto& p =
          pairs[static_cast<std::size_t>(boot_stream.next_u64() % static_cast<std::uint64_t>(R))];
      sx += p.first;
      sy += p.second;
      sxx += p.first * p.first;
      syy += p.second * p.second;
    }
    const double vx = (sxx - sx * sx / R) / (R - 1);
    const double vy = (syy - sy * sy / R) / (R - 1);
    diffs.push_back(vy - vx);
  }
  std::sort(diffs.begin(), diffs.end());
  const double q01 = diffs[static_cast<std::size_t>(0.01 * kBoot)];
  const bool part1 = q01 > 0.0;

  // Part 2: equal sizes, so the first-step limit reduces to the efficient
  // variance plus 4 b2 (eps4 - eps2^2). For the heavy-tailed errors with
  // a t-distributed effect: 11/6 + 4 (1/3)(7/18) = 2.35185...
  const auto equal = run_report('d', 100, 2000, 1, "fixed:5", true);
  const auto& fs_eq = equal.row("fs_eps3");
  const double N = 5.0 * 100.0;
  const double scaled = N * fs_eq.std_dev * fs_eq.std_dev;
  const double target = 1.8333333333333333 + 4.0 * (1.0 / 3.0) * (0.5 - 1.0 / 9.0);
  const double rel = (scaled - target) / target;
  const bool part2 = std::abs(rel) <= 0.20;

  verdict(7, "first-step efficiency loss", part1 && part2,
          "bootstrap 1% quantile of var difference " + fmt(q01) +
              " (> 0 required; var ratio " +
              fmt(fs.std_dev * fs.std_dev / (eff.std_dev * eff.std_dev)) +
              "); equal-size scaled variance " + fmt(scaled) + " vs " +
              fmt(target) + " (" + fmt(rel * 100) + "%, band 20%) (" +
              fmt(elapsed_s(start)) + "s)");
}

// ------------------------------------------------------------------ criterion 8

std::string run_cmd(const std::string& cmd) {
  std::string out;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return out;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, got);
  ::pclose(pipe);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_determinism() {
  const auto start = std::chrono::steady_clock::now();
  const std::string cli = "\"" LMM_CLI_PATH "\"";
  const auto tmp = std::filesystem::temp_directory_path();
  const std::string f1 = (tmp / "lmmom_accept_sim1.csv").string();
  const std::string f2 = (tmp / "lmmom_accept_sim2.csv").string();

  bool pass = true;
  std::string detail;

  run_cmd(cli + " simulate --case c --n 50 --seed 3 --out " + f1);
  run_cmd(cli + " simulate --case c --n 50 --seed 3 --out " + f2);
  const std::string d1 = slurp(f1);
  if (d1.empty() || d1 != slurp(f2) || slurp(f1 + ".truth") != slurp(f2 + ".truth")) {
    pass = false;
    detail += " [simulate outputs differ]";
  }

  const std::string mc_flags = " mc --case a --n 50 --reps 100 --seed 3";
  const std::string mc1 = run_cmd("LMM_THREADS=1 " + cli + mc_flags);
  const std::string mc1b = run_cmd("LMM_THREADS=1 " + cli + mc_flags);
  const std::string mc8 = run_cmd("LMM_THREADS=8 " + cli + mc_flags);
  if (mc1.empty() || mc1 != mc1b) {
    pass = false;
    detail += " [mc rerun differs]";
  }
  if (mc1 != mc8) {
    pass = false;
    detail += " [mc thread counts differ]";
  }

  for (const auto& f : {f1, f2, f1 + ".truth", f2 + ".truth"}) {
    std::error_code ec;
    std::filesystem::remove(f, ec);
  }
  verdict(8, "end-to-end determinism", pass,
          (pass ? "simulate and mc byte-identical across reruns and thread counts"
                : detail) +
              " (" + fmt(elapsed_s(start)) + "s)");
}

}  // namespace

int main() {
  std::printf("acceptance gate: library and command line criteria\n");
  criterion_oracle();
  criterion_unbiasedness();
  criterion_tables();
  criterion_variances();
  criterion_efficiency();
  criterion_determinism();
  std::printf("%d/8 criteria passed\n", 8 - g_failures);
  return g_failures;
}
