// Distribution laws, scenario wiring, group-size laws, and the dataset
// generator itself.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lmmom/gls.hpp"
#include "lmmom/sim.hpp"

using lmmom::DistributionLaw;
using lmmom::GroupSizeLaw;
using lmmom::LawKind;
using lmmom::MomentUndefined;
using lmmom::ScenarioConfig;
using lmmom::UsageError;

TEST_CASE("central moments of the half-scaled normal") {
  const DistributionLaw law{LawKind::scaled_normal};
  CHECK(law.central_moment(1) == 0.0);
  CHECK(law.central_moment(2) == Catch::Approx(0.25).margin(1e-15));
  CHECK(law.central_moment(3) == 0.0);
  CHECK(law.central_moment(4) == Catch::Approx(0.1875).margin(1e-15));
  CHECK(law.central_moment(5) == 0.0);
  CHECK(law.central_moment(6) == Catch::Approx(0.234375).margin(1e-15));
  CHECK(law.central_moment(8) == Catch::Approx(0.41015625).margin(1e-15));
}

TEST_CASE("central moments of the half-scaled t with 8 degrees of freedom") {
  const DistributionLaw law{LawKind::scaled_t8};
  CHECK(law.central_moment(2) == Catch::Approx(1.0 / 3.0).margin(1e-15));
  CHECK(law.central_moment(3) == 0.0);
  CHECK(law.central_moment(4) == Catch::Approx(0.5).margin(1e-15));
  CHECK(law.central_moment(6) == Catch::Approx(2.5).margin(1e-15));
  CHECK(law.has_moment(7));
  CHECK_FALSE(law.has_moment(8));
  CHECK_THROWS_AS(law.central_moment(8), MomentUndefined);
}

TEST_CASE("central moments of the centered half-scaled exponential") {
  // Central moments of Exp(1) are the subfactorials 1, 2, 9, 44, 265,
  // 1854, 14833 for orders 2..8; scaling by one half multiplies order k
  // by 2^-k and the centering shift drops out.
  const DistributionLaw law{LawKind::shifted_scaled_gamma};
  CHECK(law.central_moment(2) == Catch::Approx(0.25).margin(1e-15));
  CHECK(law.central_moment(3) == Catch::Approx(0.25).margin(1e-15));
  CHECK(law.central_moment(4) == Catch::Approx(0.5625).margin(1e-15));
  CHECK(law.central_moment(5) == Catch::Approx(1.375).margin(1e-15));
  CHECK(law.central_moment(6) == Catch::Approx(4.140625).margin(1e-15));
  CHECK(law.central_moment(7) == Catch::Approx(14.484375).margin(1e-15));
  CHECK(law.central_moment(8) == Catch::Approx(57.94140625).margin(1e-15));
}

TEST_CASE("moment table rejects orders outside 1..8") {
  const DistributionLaw law{LawKind::scaled_normal};
  CHECK_THROWS_AS(law.central_moment(0), UsageError);
  CHECK_THROWS_AS(law.central_moment(9), UsageError);
}

TEST_CASE("sample moments match the tables") {
  constexpr long kDraws = 200000;
  auto check_law = [&](LawKind kind, int max_order) {
    const DistributionLaw law{kind};
    auto stream = lmmom::rng::substream(313, static_cast<std::uint64_t>(kind));
    std::vector<double> sums(5, 0.0);
    for (long r = 0; r < kDraws; ++r) {
      const double v = law.sample(stream);
      double p = v;
      for (int k = 2; k <= 4; ++k) {
        p *= v;
        sums[static_cast<std::size_t>(k)] += p;
      }
    }
    for (int k = 2; k <= max_order; ++k) {
      const double mean_k = sums[static_cast<std::size_t>(k)] / kDraws;
      const double target = law.central_moment(k);
      // Monte Carlo standard error of the k-th sample moment.
      const double var =
          law.central_moment(2 * k) - target * target;
      const double band = 3.5 * std::sqrt(var / kDraws);
      INFO("law " << law.name() << " order " << k);
      CHECK(std::abs(mean_k - target) < band);
    }
  };
  check_law(LawKind::scaled_normal, 4);
  check_law(LawKind::shifted_scaled_gamma, 4);
  check_law(LawKind::scaled_t8, 3);  // order 4 has no finite error bound
}

TEST_CASE("scenario letters select their laws") {
  CHECK(lmmom::scenario_eps_law('a').kind == LawKind::scaled_normal);
  CHECK(lmmom::scenario_eps_law('c').kind == LawKind::scaled_normal);
  CHECK(lmmom::scenario_eps_law('d').kind == LawKind::scaled_t8);
  CHECK(lmmom::scenario_b_law('a').kind == LawKind::scaled_normal);
  CHECK(lmmom::scenario_b_law('b').kind == LawKind::scaled_t8);
  CHECK(lmmom::scenario_b_law('c').kind == LawKind::shifted_scaled_gamma);
  CHECK(lmmom::scenario_b_law('e').kind == LawKind::shifted_scaled_gamma);
  CHECK_THROWS_AS(lmmom::scenario_eps_law('f'), UsageError);
}

TEST_CASE("scenario truth tables") {
  const auto a = lmmom::scenario_truth('a');
  CHECK(a.eps_moment(2) == 0.25);
  CHECK(a.eps_moment(3) == 0.0);
  CHECK(a.eps_moment(4) == 0.1875);
  CHECK(a.b_moment(4) == 0.1875);
  CHECK(a.has_eps(8));

  const auto c = lmmom::scenario_truth('c');
  CHECK(c.b_moment(2) == 0.25);
  CHECK(c.b_moment(3) == 0.25);
  CHECK(c.b_moment(4) == 0.5625);

  // Heavy-tailed errors lack the eighth moment entirely.
  const auto d = lmmom::scenario_truth('d');
  CHECK_FALSE(d.has_eps(8));
  CHECK(d.eps_moment(6) == 2.5);
  CHECK_FALSE(d.has_b(8));
}

TEST_CASE("group-size laws parse and describe themselves") {
  auto round_trip = [](const std::string& text) {
    return GroupSizeLaw::parse(text).describe();
  };
  CHECK(round_trip("fixed:48") == "fixed:48");
  CHECK(round_trip("poisson:5") == "poisson:5");
  CHECK(round_trip("poisson:5,min:4") == "poisson:5,min:4");
  CHECK(round_trip("poisson:5,plus:4") == "poisson:5,plus:4");
  CHECK(round_trip("poisson:2.5") == "poisson:2.5");

  CHECK_THROWS_AS(GroupSizeLaw::parse("fixed"), UsageError);
  CHECK_THROWS_AS(GroupSizeLaw::parse("fixed:0"), UsageError);
  CHECK_THROWS_AS(GroupSizeLaw::parse("poisson:0"), UsageError);
  CHECK_THROWS_AS(GroupSizeLaw::parse("poisson:5,max:4"), UsageError);
  CHECK_THROWS_AS(GroupSizeLaw::parse("gauss:3"), UsageError);
  CHECK_THROWS_AS(GroupSizeLaw::parse("poisson:abc"), UsageError);
}

TEST_CASE("group-size sampling honors floors and means") {
  constexpr long kDraws = 20000;
  auto stats = [&](const std::string& text) {
    const auto law = GroupSizeLaw::parse(text);
    auto stream = lmmom::rng::substream(99);
    long min_seen = 1 << 30;
    double sum = 0.0;
    for (long r = 0; r < kDraws; ++r) {
      const long l = law.sample(stream);
      min_seen = std::min(min_seen, l);
      sum += static_cast<double>(l);
    }
    return std::pair<long, double>(min_seen, sum / kDraws);
  };

  const auto [min_fixed, mean_fixed] = stats("fixed:6");
  CHECK(min_fixed == 6);
  CHECK(mean_fixed == 6.0);

  // Conditioning Poisson(5) on >= 4 lifts the mean to about 5.95.
  const auto [min_trunc, mean_trunc] = stats("poisson:5,min:4");
  CHECK(min_trunc >= 4);
  CHECK(mean_trunc == Catch::Approx(5.9549581321025356).margin(0.05));

  // Shifting by 4 gives exactly 4 + Poisson(5), mean 9.
  const auto [min_shift, mean_shift] = stats("poisson:5,plus:4");
  CHECK(min_shift >= 4);
  CHECK(mean_shift == Catch::Approx(9.0).margin(0.08));

  const auto [min_plain, mean_plain] = stats("poisson:5");
  CHECK(min_plain >= 1);
  CHECK(mean_plain == Catch::Approx(5.0).margin(0.08));
}

TEST_CASE("scenario config validation") {
  ScenarioConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  ScenarioConfig bad_letter;
  bad_letter.scenario = 'z';
  CHECK_THROWS_AS(bad_letter.validate(), UsageError);

  ScenarioConfig no_groups;
  no_groups.n = 0;
  CHECK_THROWS_AS(no_groups.validate(), UsageError);

  ScenarioConfig asym;
  asym.design_cov(0, 1) = 0.5;  // breaks symmetry
  CHECK_THROWS_AS(asym.validate(), UsageError);
}

TEST_CASE("simulation is deterministic and seed-sensitive") {
  ScenarioConfig cfg;
  cfg.scenario = 'c';
  cfg.n = 40;
  cfg.seed = 12345;
  const auto first = lmmom::simulate(cfg);
  const auto second = lmmom::simulate(cfg);
  REQUIRE(first.data.group_count() == second.data.group_count());
  for (Eigen::Index i = 0; i < first.data.group_count(); ++i) {
    const auto& g1 = first.data.groups[static_cast<std::size_t>(i)];
    const auto& g2 = second.data.groups[static_cast<std::size_t>(i)];
    REQUIRE(g1.rows() == g2.rows());
    CHECK((g1.y.array() == g2.y.array()).all());  // bit-equal
    CHECK((g1.x.array() == g2.x.array()).all());
  }

  cfg.seed = 12346;
  const auto third = lmmom::simulate(cfg);
  bool any_difference = third.data.groups[0].rows() != first.data.groups[0].rows();
  if (!any_difference) {
    any_difference =
        !(third.data.groups[0].y.array() == first.data.groups[0].y.array()).all();
  }
  CHECK(any_difference);
}

TEST_CASE("simulated truth sidecar carries the law moments") {
  ScenarioConfig cfg;
  cfg.scenario = 'a';
  const auto sim = lmmom::simulate(cfg);
  CHECK(sim.truth.eps_moment(2) == 0.25);
  CHECK(sim.truth.b_moment(2) == 0.25);
  CHECK(sim.truth.eps_moment(8) == 0.41015625);
}

TEST_CASE("intercept-only simulation works") {
  ScenarioConfig cfg;
  cfg.beta.resize(0);
  cfg.design_cov.resize(0, 0);
  cfg.n = 25;
  const auto sim = lmmom::simulate(cfg);
  CHECK(sim.data.p == 0);
  CHECK(sim.data.group_count() == 25);
}

TEST_CASE("generated data recovers the fixed effects on average") {
  constexpr long kReps = 200;
  ScenarioConfig cfg;
  cfg.scenario = 'a';
  cfg.n = 100;
  double sum_alpha = 0.0;
  Eigen::Vector2d sum_beta = Eigen::Vector2d::Zero();
  double sq_alpha = 0.0;
  Eigen::Vector2d sq_beta = Eigen::Vector2d::Zero();
  for (long rep = 0; rep < kReps; ++rep) {
    cfg.seed = 9000 + static_cast<std::uint64_t>(rep);
    const auto sim = lmmom::simulate(cfg);
    const auto fit = lmmom::gls_fit(sim.data);
    sum_alpha += fit.alpha;
    sum_beta += fit.beta;
    sq_alpha += fit.alpha * fit.alpha;
    sq_beta += fit.beta.cwiseProduct(fit.beta);
  }
  const double mean_alpha = sum_alpha / kReps;
  const Eigen::Vector2d mean_beta = sum_beta / kReps;
  const double sd_alpha =
      std::sqrt((sq_alpha / kReps - mean_alpha * mean_alpha) / kReps);
  CHECK(std::abs(mean_alpha - 1.0) < 3.5 * sd_alpha);
  for (int j = 0; j < 2; ++j) {
    const double sd = std::sqrt(
        (sq_beta(j) / kReps - mean_beta(j) * mean_beta(j)) / kReps);
    CHECK(std::abs(mean_beta(j) - cfg.beta(j)) < 3.5 * sd);
  }
}
