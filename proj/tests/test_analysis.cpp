#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

#include "geocause/analysis.hpp"
#include "oracles.hpp"

using namespace geocause;

namespace {

AteEstimate make_estimate(Funder funder, int sector, Specification spec,
                          double ate, double se = 1.0) {
  AteEstimate e;
  e.funder = funder;
  e.sector_code = sector;
  e.specification = spec;
  e.ate = ate;
  e.std_error = se;
  e.ci_low = ate - 1.96 * se;
  e.ci_high = ate + 1.96 * se;
  e.n_treated = 100;
  e.n_control = 900;
  return e;
}

SalienceMatrix make_salience(std::vector<std::string> rows,
                             std::vector<int> cols, Eigen::MatrixXd m) {
  SalienceMatrix s;
  s.covariate_names = std::move(rows);
  s.sector_codes = std::move(cols);
  s.entries = std::move(m);
  return s;
}

double coefficient(const MetaRegressionModel& model, const std::string& name) {
  for (const auto& c : model.coefficients)
    if (c.name == name) return c.estimate;
  FAIL("coefficient '" << name << "' not in model");
  return 0.0;
}

bool has_coefficient(const MetaRegressionModel& model, const std::string& name) {
  return std::any_of(model.coefficients.begin(), model.coefficients.end(),
                     [&](const auto& c) { return c.name == name; });
}

}  // namespace

// ---------------------------------------------------------------------------
// AUC
// ---------------------------------------------------------------------------

TEST_CASE("auc: hand fixtures") {
  std::vector<double> s1{0.9, 0.8, 0.1, 0.2};
  std::vector<int> l1{1, 1, 0, 0};
  CHECK(auc(s1, l1) == doctest::Approx(1.0));

  std::vector<double> s2{0.4, 0.4, 0.4, 0.4};
  CHECK(auc(s2, l1) == doctest::Approx(0.5));

  std::vector<double> s3{0.7, 0.3, 0.5, 0.2};
  CHECK(auc(s3, l1) == doctest::Approx(0.75));

  std::vector<int> one_class{1, 1, 1, 1};
  CHECK_THROWS_AS(auc(s1, one_class), DataError);
  std::vector<int> bad_labels{1, 2, 0, 0};
  CHECK_THROWS_AS(auc(s1, bad_labels), ValidationError);
  std::vector<double> short_scores{0.1};
  CHECK_THROWS_AS(auc(short_scores, l1), ValidationError);
}

TEST_CASE("auc: midranks agree with brute-force pair counting") {
  std::mt19937 gen(61);
  std::uniform_int_distribution<int> size(2, 200), tied(0, 9);
  for (int rep = 0; rep < 500; ++rep) {
    const int n = size(gen);
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    // A coarse score grid forces heavy ties.
    for (auto& s : scores) s = 0.1 * tied(gen);
    int n_pos = 0;
    for (auto& l : labels) n_pos += (l = static_cast<int>(gen() % 2));
    if (n_pos == 0) labels[0] = 1;
    if (n_pos == n) labels[static_cast<std::size_t>(n - 1)] = 0;

    const double fast = auc(scores, labels);
    const double slow = oracles::auc_pair_counting(scores, labels);
    CHECK(std::abs(fast - slow) < 1e-12);
  }
}

TEST_CASE("auc: invariant under strictly monotone score transforms") {
  std::mt19937 gen(67);
  std::uniform_int_distribution<int> tied(0, 9);
  std::vector<double> scores(80);
  std::vector<int> labels(80);
  for (auto& s : scores) s = 0.1 * tied(gen);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2 == 0;

  const double base = auc(scores, labels);
  auto scaled = scores;
  for (auto& s : scaled) s = 2.0 * s + 3.0;
  CHECK(auc(scaled, labels) == doctest::Approx(base).epsilon(1e-12));
  auto exped = scores;
  for (auto& s : exped) s = std::exp(s);
  CHECK(auc(exped, labels) == doctest::Approx(base).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Salience deltas
// ---------------------------------------------------------------------------

TEST_CASE("salience_delta: fixtures, alignment, and mismatch reporting") {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << -0.4, 0.2, 0.1, -0.3;
  b << 0.1, 0.2, -0.1, 0.3;
  auto wi = make_salience({"lights", "population"}, {110, 210}, a);
  auto to = make_salience({"lights", "population"}, {110, 210}, b);

  SUBCASE("identical matrices give zeros") {
    auto d = salience_delta(wi, wi);
    CHECK(d.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }

  SUBCASE("entrywise absolute-value arithmetic") {
    auto d = salience_delta(wi, to);
    CHECK(d(0, 0) == doctest::Approx(0.3));  // |-0.4| - |0.1|
    CHECK(d(0, 1) == doctest::Approx(0.0));
    CHECK(d(1, 0) == doctest::Approx(0.0));
    CHECK(d(1, 1) == doctest::Approx(0.0));
  }

  SUBCASE("alignment follows labels, not storage order") {
    Eigen::MatrixXd perm(2, 2);
    // Rows swapped and columns swapped relative to `to`.
    perm << 0.3, -0.1, 0.2, 0.1;
    auto shuffled = make_salience({"population", "lights"}, {210, 110}, perm);
    auto d1 = salience_delta(wi, to);
    auto d2 = salience_delta(wi, shuffled);
    CHECK((d1 - d2).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }

  SUBCASE("random pair equals the direct computation") {
    std::mt19937 gen(71);
    std::uniform_real_distribution<double> v(-1, 1);
    Eigen::MatrixXd ra(3, 3), rb(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        ra(i, j) = v(gen);
        rb(i, j) = v(gen);
      }
    auto wa = make_salience({"r0", "r1", "r2"}, {1, 2, 3}, ra);
    auto wb = make_salience({"r0", "r1", "r2"}, {1, 2, 3}, rb);
    auto d = salience_delta(wa, wb);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(d(i, j) ==
              doctest::Approx(std::abs(ra(i, j)) - std::abs(rb(i, j))));
  }

  SUBCASE("label mismatches are listed") {
    auto other = make_salience({"lights", "roads"}, {110, 210}, b);
    CHECK_THROWS_WITH_AS(salience_delta(wi, other),
                         doctest::Contains("'population' missing from second"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(salience_delta(wi, other),
                         doctest::Contains("'roads' missing from first"),
                         ValidationError);
    auto sector_gap = make_salience({"lights", "population"}, {110, 310}, b);
    CHECK_THROWS_WITH_AS(salience_delta(wi, sector_gap),
                         doctest::Contains("310"), ValidationError);
  }

  SUBCASE("matrix validation refuses duplicates and non-finite entries") {
    auto dup = make_salience({"lights", "lights"}, {110, 210}, a);
    CHECK_THROWS_AS(dup.validate(), ValidationError);
    Eigen::MatrixXd with_nan = a;
    with_nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
    auto nan_m = make_salience({"lights", "population"}, {110, 210}, with_nan);
    CHECK_THROWS_AS(nan_m.validate(), ValidationError);
  }
}

// ---------------------------------------------------------------------------
// Canonical correlation
// ---------------------------------------------------------------------------

TEST_CASE("leading_canonical_correlation: identity and invariances") {
  std::mt19937 gen(83);
  std::uniform_real_distribution<double> v(-2, 2);
  Eigen::MatrixXd a(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = v(gen);

  SUBCASE("a matrix against itself scores 1") {
    auto r = leading_canonical_correlation(a, a, 0.0);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.sectors_used == 6);
    CHECK(r.lambda == 0.0);
  }

  SUBCASE("orthogonal column mixing does not change the value") {
    Eigen::MatrixXd noise(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) noise(i, j) = v(gen);
    const Eigen::MatrixXd q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(noise).householderQ();
    auto r = leading_canonical_correlation(a, a * q, 1e-9);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("column rescaling is absorbed by standardization") {
    Eigen::MatrixXd b(6, 3);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 3; ++j) b(i, j) = v(gen);
    auto base = leading_canonical_correlation(a, b, 1e-3);
    Eigen::MatrixXd scaled = b;
    scaled.col(1) *= 10.0;
    scaled.col(2) *= 0.01;
    auto r = leading_canonical_correlation(a, scaled, 1e-3);
    CHECK(r.value == doctest::Approx(base.value).epsilon(1e-12));
  }

  SUBCASE("value stays inside [0, 1]") {
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::MatrixXd b(6, 3);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) b(i, j) = v(gen);
      auto r = leading_canonical_correlation(a, b, 1e-3);
      CHECK(r.value >= 0.0);
      CHECK(r.value <= 1.0);
    }
  }

  SUBCASE("fewer than 3 rows is insufficient data") {
    Eigen::MatrixXd tiny(2, 3);
    tiny << 1, 2, 3, 4, 5, 6;
    CHECK_THROWS_AS(leading_canonical_correlation(tiny, tiny, 1e-3),
                    DataError);
  }

  SUBCASE("row-count mismatch and negative ridge are caller errors") {
    Eigen::MatrixXd b(5, 3);
    b.setZero();
    CHECK_THROWS_AS(leading_canonical_correlation(a, b, 1e-3),
                    ValidationError);
    CHECK_THROWS_AS(leading_canonical_correlation(a, a, -0.1),
                    ValidationError);
  }
}

TEST_CASE("leading_canonical_correlation: matches alternating-max oracle") {
  std::mt19937 gen(89);
  std::uniform_real_distribution<double> v(-1, 1);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::MatrixXd a(6, 3), b(6, 3);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 3; ++j) {
        a(i, j) = v(gen);
        b(i, j) = v(gen);
      }
    const double fast = leading_canonical_correlation(a, b, 1e-3).value;
    const double slow = oracles::cca_alternating_max(
        a, b, 1e-3, 1000 + static_cast<std::uint64_t>(rep));
    CHECK(fast == doctest::Approx(slow).epsilon(1e-3));
  }
}

// ---------------------------------------------------------------------------
// Meta-regression
// ---------------------------------------------------------------------------

TEST_CASE("meta_regress_ate: exact linear fixture recovers -2 on imagery") {
  // ATE = 5 - 2 * has_m exactly, across two sectors and all four specs.
  std::vector<AteEstimate> rows;
  for (int sector : {110, 210}) {
    for (auto spec : {Specification::a_diffmeans, Specification::b_x_fe,
                      Specification::c1_m, Specification::c2_m_x_fe}) {
      const bool has_m =
          spec == Specification::c1_m || spec == Specification::c2_m_x_fe;
      rows.push_back(make_estimate(Funder::WorldBank, sector, spec,
                                   5.0 - 2.0 * (has_m ? 1.0 : 0.0)));
    }
  }
  auto res = meta_regress_ate(rows);

  CHECK(coefficient(res.additive, "intercept") ==
        doctest::Approx(5.0).epsilon(1e-10));
  CHECK(coefficient(res.additive, "has_m") ==
        doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(res.additive.adj_r2 == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(res.additive.n == 8);

  // has_x and has_fe are identical over the four specifications; exactly one
  // survives with a zero coefficient, the other is reported dropped.
  const bool x_kept = has_coefficient(res.additive, "has_x");
  const bool fe_kept = has_coefficient(res.additive, "has_fe");
  CHECK(x_kept != fe_kept);
  CHECK(coefficient(res.additive, x_kept ? "has_x" : "has_fe") ==
        doctest::Approx(0.0).epsilon(1e-10));
  REQUIRE_FALSE(res.additive.dropped.empty());
  CHECK(res.additive.dropped[0] == (x_kept ? "has_fe" : "has_x"));

  // Single funder: the funder dummy is reported dropped, not estimated.
  CHECK_FALSE(has_coefficient(res.additive, "funder_china"));
  CHECK(std::any_of(res.additive.dropped.begin(), res.additive.dropped.end(),
                    [](const std::string& d) {
                      return d.find("single funder") != std::string::npos;
                    }));

  // Model 2: combination dummies against the unadjusted reference.
  CHECK(coefficient(res.combinations, "intercept") ==
        doctest::Approx(5.0).epsilon(1e-10));
  CHECK(coefficient(res.combinations, "combo_m") ==
        doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(coefficient(res.combinations, "combo_x_fe") ==
        doctest::Approx(0.0).epsilon(1e-10));
  CHECK(coefficient(res.combinations, "combo_m_x_fe") ==
        doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(res.combinations.adj_r2 == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("meta_regress_ate: funder shift lands on the funder dummy") {
  std::vector<AteEstimate> rows;
  for (auto funder : {Funder::WorldBank, Funder::China}) {
    for (int sector : {110, 210}) {
      for (auto spec : {Specification::a_diffmeans, Specification::b_x_fe,
                        Specification::c1_m, Specification::c2_m_x_fe}) {
        const bool has_m =
            spec == Specification::c1_m || spec == Specification::c2_m_x_fe;
        const double shift = funder == Funder::China ? 1.5 : 0.0;
        rows.push_back(make_estimate(funder, sector, spec,
                                     5.0 - 2.0 * (has_m ? 1.0 : 0.0) + shift));
      }
    }
  }
  auto res = meta_regress_ate(rows);
  CHECK(coefficient(res.additive, "funder_china") ==
        doctest::Approx(1.5).epsilon(1e-10));
  CHECK(coefficient(res.combinations, "funder_china") ==
        doctest::Approx(1.5).epsilon(1e-10));
}

TEST_CASE("meta_regress_ate: 20-row fixture matches the normal equations") {
  std::mt19937 gen(97);
  std::uniform_real_distribution<double> ate(-10, 15);
  std::vector<AteEstimate> rows;
  const Specification all[4] = {Specification::a_diffmeans,
                                Specification::b_x_fe, Specification::c1_m,
                                Specification::c2_m_x_fe};
  // Funder alternates per block of four so it is not collinear with any
  // specification indicator.
  const auto funder_of = [](int i) {
    return (i / 4) % 2 ? Funder::China : Funder::WorldBank;
  };
  for (int i = 0; i < 20; ++i) {
    rows.push_back(
        make_estimate(funder_of(i), 100 + i / 4, all[i % 4], ate(gen)));
  }
  auto res = meta_regress_ate(rows);

  // Mirror the surviving additive design: intercept, the one surviving
  // member of the aliased has_x/has_fe pair, has_m, funder dummy.
  Eigen::MatrixXd x(20, 4);
  Eigen::VectorXd y(20);
  for (int i = 0; i < 20; ++i) {
    const auto spec = all[i % 4];
    const bool has_x =
        spec == Specification::b_x_fe || spec == Specification::c2_m_x_fe;
    const bool has_m =
        spec == Specification::c1_m || spec == Specification::c2_m_x_fe;
    x(i, 0) = 1.0;
    x(i, 1) = has_x;
    x(i, 2) = has_m;
    x(i, 3) = funder_of(i) == Funder::China ? 1.0 : 0.0;
    y[i] = rows[static_cast<std::size_t>(i)].ate;
  }
  auto oracle = oracles::ols_normal_equations(x, y);

  const std::string xfe =
      has_coefficient(res.additive, "has_x") ? "has_x" : "has_fe";
  const std::vector<std::pair<std::string, int>> layout{
      {"intercept", 0}, {xfe, 1}, {"has_m", 2}, {"funder_china", 3}};
  REQUIRE(res.additive.coefficients.size() == 4);
  for (const auto& [name, col] : layout) {
    CHECK(coefficient(res.additive, name) ==
          doctest::Approx(oracle.beta[col]).epsilon(1e-8));
    for (const auto& c : res.additive.coefficients) {
      if (c.name == name)
        CHECK(c.std_error ==
              doctest::Approx(oracle.std_errors[col]).epsilon(1e-8));
    }
  }
  CHECK(res.additive.adj_r2 == doctest::Approx(oracle.adj_r2).epsilon(1e-8));

  // Residuals from the reported coefficients are orthogonal to the design.
  Eigen::VectorXd beta(4);
  for (const auto& [name, col] : layout)
    beta[col] = coefficient(res.additive, name);
  const Eigen::VectorXd resid = y - x * beta;
  CHECK((x.transpose() * resid).cwiseAbs().maxCoeff() < 1e-8);

  // Model 2 against the same oracle machinery (combos sort as m, m_x_fe,
  // x_fe after the intercept).
  Eigen::MatrixXd x2 = Eigen::MatrixXd::Zero(20, 5);
  for (int i = 0; i < 20; ++i) {
    const auto spec = all[i % 4];
    x2(i, 0) = 1.0;
    if (spec == Specification::c1_m) x2(i, 1) = 1.0;
    if (spec == Specification::c2_m_x_fe) x2(i, 2) = 1.0;
    if (spec == Specification::b_x_fe) x2(i, 3) = 1.0;
    x2(i, 4) = funder_of(i) == Funder::China ? 1.0 : 0.0;
  }
  auto oracle2 = oracles::ols_normal_equations(x2, y);
  CHECK(coefficient(res.combinations, "combo_m") ==
        doctest::Approx(oracle2.beta[1]).epsilon(1e-8));
  CHECK(coefficient(res.combinations, "combo_m_x_fe") ==
        doctest::Approx(oracle2.beta[2]).epsilon(1e-8));
  CHECK(coefficient(res.combinations, "combo_x_fe") ==
        doctest::Approx(oracle2.beta[3]).epsilon(1e-8));
  CHECK(res.combinations.adj_r2 ==
        doctest::Approx(oracle2.adj_r2).epsilon(1e-8));
}

TEST_CASE("meta_regress_ate: degenerate inputs are refused") {
  std::vector<AteEstimate> one{
      make_estimate(Funder::WorldBank, 110, Specification::a_diffmeans, 3.0)};
  CHECK_THROWS_AS(meta_regress_ate(one), DataError);

  std::vector<AteEstimate> same_spec{
      make_estimate(Funder::WorldBank, 110, Specification::c1_m, 3.0),
      make_estimate(Funder::WorldBank, 210, Specification::c1_m, 4.0)};
  CHECK_THROWS_WITH_AS(meta_regress_ate(same_spec),
                       doctest::Contains("single specification"), DataError);
}

TEST_CASE("meta_regress_ate: saturated combination model is skipped") {
  // One estimate per specification: Model 2 would have one dummy per row.
  std::vector<AteEstimate> rows;
  for (auto spec : {Specification::a_diffmeans, Specification::b_x_fe,
                    Specification::c1_m, Specification::c2_m_x_fe})
    rows.push_back(make_estimate(Funder::WorldBank, 110, spec, 1.0));
  auto res = meta_regress_ate(rows);
  CHECK_FALSE(res.additive.coefficients.empty());
  CHECK(res.combinations.coefficients.empty());
  CHECK(std::any_of(res.combinations.dropped.begin(),
                    res.combinations.dropped.end(),
                    [](const std::string& d) {
                      return d.find("saturated") != std::string::npos;
                    }));

  auto text = format_meta_regression(res);
  CHECK(text.find("Model 1") != std::string::npos);
  CHECK(text.find("Model 2") != std::string::npos);
  CHECK(text.find("adjusted R^2") != std::string::npos);
  CHECK(text.find("dropped:") != std::string::npos);
  CHECK(text.find("has_m") != std::string::npos);
}

TEST_CASE("meta_regress_ate: equal variances make weighting a no-op") {
  std::mt19937 gen(101);
  std::uniform_real_distribution<double> ate(-5, 5);
  std::vector<AteEstimate> rows;
  const Specification all[4] = {Specification::a_diffmeans,
                                Specification::b_x_fe, Specification::c1_m,
                                Specification::c2_m_x_fe};
  for (int i = 0; i < 12; ++i)
    rows.push_back(make_estimate(Funder::WorldBank, 100 + i, all[i % 4],
                                 ate(gen), 2.0));
  auto plain = meta_regress_ate(rows, false);
  auto weighted = meta_regress_ate(rows, true);
  for (std::size_t i = 0; i < plain.additive.coefficients.size(); ++i) {
    CHECK(weighted.additive.coefficients[i].estimate ==
          doctest::Approx(plain.additive.coefficients[i].estimate)
              .epsilon(1e-10));
  }
}

// ---------------------------------------------------------------------------
// Two-way fixed effects
// ---------------------------------------------------------------------------

namespace {

std::vector<TwfePanelRow> exact_twfe_panel(double beta) {
  // 4 units x 3 periods, y = alpha_i + lambda_t + beta * a exactly.
  const double alpha[4] = {10, 20, 30, 40};
  const double lambda[3] = {0, 5, 9};
  const int a[4][3] = {{0, 1, 1}, {0, 0, 1}, {0, 0, 0}, {1, 1, 1}};
  std::vector<TwfePanelRow> rows;
  for (int u = 0; u < 4; ++u) {
    for (int t = 0; t < 3; ++t) {
      TwfePanelRow r;
      r.unit_id = "u" + std::to_string(u);
      r.period_index = t;
      r.treated = a[u][t];
      r.y = alpha[u] + lambda[t] + beta * a[u][t];
      r.cluster_id = u < 2 ? "c0" : "c1";
      rows.push_back(r);
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("twfe: exact fixture recovers beta with zero residual variance") {
  for (double beta : {-2.0, 0.0, 2.0}) {
    auto rows = exact_twfe_panel(beta);
    auto res = twfe(rows);
    CHECK(res.beta == doctest::Approx(beta).epsilon(1e-8));
    CHECK(res.clustered_se == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(res.n_obs == 12);
    CHECK(res.n_units == 4);
    CHECK(res.n_periods == 3);
    CHECK(res.n_switchers == 2);  // u0 and u1 change status; u2, u3 never
    CHECK(res.cluster_count == 2);
    CHECK(res.ci_low <= res.beta);
    CHECK(res.beta <= res.ci_high);
  }
}

TEST_CASE("twfe: invariant to unit-constant and period-constant shifts") {
  auto rows = exact_twfe_panel(2.0);
  // Add noise so the fit is not exact, then compare across shifts.
  std::mt19937 gen(107);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (auto& r : rows) r.y += noise(gen);
  const double base = twfe(rows).beta;

  auto shifted_period = rows;
  for (auto& r : shifted_period)
    if (r.period_index == 1) r.y += 7.0;
  CHECK(twfe(shifted_period).beta == doctest::Approx(base).epsilon(1e-9));

  auto shifted_unit = rows;
  for (auto& r : shifted_unit)
    if (r.unit_id == "u2") r.y -= 13.0;
  CHECK(twfe(shifted_unit).beta == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("twfe: beta and clustered SE match the dummy-regression oracle") {
  std::mt19937 gen(109);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> effect(-15, 15);

  for (int rep = 0; rep < 30; ++rep) {
    const double beta = effect(gen);
    const int n_units = 6, n_periods = 4;
    std::vector<TwfePanelRow> rows;
    std::vector<std::string> unit_ids, cluster_ids;
    std::vector<int> period_idx, treated;
    std::vector<double> y;
    for (int u = 0; u < n_units; ++u) {
      for (int t = 0; t < n_periods; ++t) {
        TwfePanelRow r;
        r.unit_id = "u" + std::to_string(u);
        r.period_index = t;
        // Units 0..3 switch on at a random period; 4..5 stay control.
        r.treated = (u < 4 && t >= static_cast<int>(gen() % 3) + 1) ? 1 : 0;
        r.y = 3.0 * u + 1.7 * t + beta * r.treated + noise(gen);
        r.cluster_id = "c" + std::to_string(u / 2);
        rows.push_back(r);
        unit_ids.push_back(r.unit_id);
        period_idx.push_back(t);
        treated.push_back(r.treated);
        y.push_back(r.y);
        cluster_ids.push_back(r.cluster_id);
      }
    }
    auto fast = twfe(rows);
    auto slow = oracles::twfe_dummy_regression(unit_ids, period_idx, y,
                                               treated, cluster_ids);
    CHECK(fast.beta == doctest::Approx(slow.beta).epsilon(1e-8));
    CHECK(fast.clustered_se ==
          doctest::Approx(slow.clustered_se).epsilon(1e-8));
  }
}

TEST_CASE("twfe: degenerate panels are refused with the right category") {
  CHECK_THROWS_AS(twfe(std::vector<TwfePanelRow>{}), ValidationError);

  SUBCASE("single period") {
    std::vector<TwfePanelRow> rows;
    for (int u = 0; u < 3; ++u) {
      TwfePanelRow r;
      r.unit_id = "u" + std::to_string(u);
      r.period_index = 0;
      r.treated = u == 0;
      r.y = u;
      r.cluster_id = "c" + std::to_string(u);
      rows.push_back(r);
    }
    CHECK_THROWS_WITH_AS(twfe(rows), doctest::Contains("at least 2 periods"),
                         DataError);
  }

  SUBCASE("treatment constant within every unit") {
    auto rows = exact_twfe_panel(2.0);
    for (auto& r : rows) r.treated = r.unit_id == "u0" ? 1 : 0;
    CHECK_THROWS_WITH_AS(twfe(rows), doctest::Contains("switches"), DataError);
  }

  SUBCASE("single cluster") {
    auto rows = exact_twfe_panel(2.0);
    for (auto& r : rows) r.cluster_id = "only";
    CHECK_THROWS_WITH_AS(twfe(rows), doctest::Contains("clusters"), DataError);
  }

  SUBCASE("treatment fully absorbed by period effects") {
    // Every unit switches on in the last period: A is a pure period effect,
    // so the residualized treatment carries no variance at all.
    auto rows = exact_twfe_panel(2.0);
    for (auto& r : rows) r.treated = r.period_index == 2 ? 1 : 0;
    for (auto& r : rows) r.y = 1.0 + r.period_index;
    CHECK_THROWS_AS(twfe(rows), NumericError);
  }

  SUBCASE("non-finite outcome") {
    auto rows = exact_twfe_panel(2.0);
    rows[3].y = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(twfe(rows), DataError);
  }
}
