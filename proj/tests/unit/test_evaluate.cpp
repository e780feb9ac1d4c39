#include <doctest.h>

#include <cmath>

#include "robtrack/divergence.hpp"
#include "robtrack/evaluate.hpp"
#include "robtrack/model.hpp"

using namespace robtrack;

namespace {

ScenarioSet three_scenarios() {
    ScenarioSet sc;
    sc.R.resize(3, 2);
    sc.R << 1.02, 1.00,
            0.99, 1.01,
            1.00, 1.00;
    sc.B.resize(3);
    sc.B << 1.01, 1.00, 1.00;
    return sc;
}

TableConfig small_table() {
    Vector mean(3);
    mean << 0.002, 0.003, 0.001;
    Matrix cov(3, 3);
    cov << 0.0020, 0.0002, 0.0, 0.0002, 0.0025, 0.0001, 0.0, 0.0001, 0.0012;
    Vector w(3);
    w << 0.4, 0.4, 0.2;
    TableConfig cfg(NominalModel::gaussian(mean, cov), IndexComposition(w));
    cfg.tracked = {0, 1};
    cfg.n_fit = 3000;
    cfg.n_eval = 3000;
    cfg.n_eta = 3000;
    cfg.loss = LossSpec::quadratic();
    cfg.rows = {{0.1, 0.5, KSign::Minus, std::nullopt}, {0.1, 2.0, KSign::Plus, std::nullopt},
                {0.1, std::nullopt, KSign::Minus, -3.0}};
    return cfg;
}

}  // namespace

TEST_CASE("tracking error and excess index") {
    ScenarioSet sc;
    sc.R = Matrix::Constant(1, 1, 1.03);
    sc.B = Vector::Constant(1, 1.01);
    const Vector u = Vector::Ones(1);
    CHECK(tracking_error(u, sc)(0) == doctest::Approx(4e-4).epsilon(1e-10));
    CHECK(excess_index(u, sc)(0) == doctest::Approx(0.02).epsilon(1e-12));
    sc.R(0, 0) = 0.99;
    CHECK(excess_index(u, sc)(0) == doctest::Approx(-0.02).epsilon(1e-12));
    // one-sided loss only charges shortfall
    CHECK(tracking_error(u, sc, LossSpec::smoothed_pos_sq(1e-4))(0) == doctest::Approx(4e-4).epsilon(1e-6));
    sc.R(0, 0) = 1.03;
    CHECK(tracking_error(u, sc, LossSpec::smoothed_pos_sq(1e-4))(0) < 1e-12);
    CHECK_THROWS(tracking_error(Vector::Ones(2), sc));
}

TEST_CASE("comparison on an enumerable scenario set") {
    const ScenarioSet sc = three_scenarios();
    Vector ur(2), un(2);
    ur << 0.5, 0.5;
    un << 1.0, 0.0;
    // shortfalls B - R u
    //   robust:     0.0,   0.0,  0.0
    //   non-robust: -0.01, 0.01, 0.0
    const ComparisonReport q = compare(ur, un, sc, LossSpec::quadratic());
    CHECK(q.n == 3);
    CHECK(q.tie_count == 1);
    CHECK(q.bt_percent == doctest::Approx(100.0));
    CHECK(q.bt_percent_excl_ties == doctest::Approx(100.0));
    CHECK(q.ete_robust == doctest::Approx(0.0).scale(1e-20));
    CHECK(q.ete_nonrobust == doctest::Approx(2e-4 / 3.0).epsilon(1e-10));
    CHECK(q.ete_diff == doctest::Approx(-2e-4 / 3.0).epsilon(1e-10));
    CHECK(q.eei_nonrobust == doctest::Approx(0.0).scale(1e-15));

    // under the one-sided loss the robust portfolio never loses, but the
    // outperforming scenario is a tie as well
    const ComparisonReport p = compare(ur, un, sc, LossSpec::smoothed_pos_sq(0.01));
    CHECK(p.tie_count == 2);
    CHECK(p.bt_percent == doctest::Approx(100.0));
    CHECK(p.bt_percent_excl_ties == doctest::Approx(100.0));

    // swap roles: the non-robust portfolio wins everywhere it is not tied
    const ComparisonReport s = compare(un, ur, sc, LossSpec::quadratic());
    CHECK(s.bt_percent == doctest::Approx(100.0 / 3.0));
    CHECK(s.bt_percent_excl_ties == doctest::Approx(0.0));
    CHECK(s.n - s.tie_count == 2);
}

TEST_CASE("identical portfolios") {
    const ScenarioSet sc = three_scenarios();
    Vector u(2);
    u << 0.3, 0.7;
    const ComparisonReport r = compare(u, u, sc, LossSpec::quadratic());
    CHECK(r.bt_percent == 100.0);
    CHECK(r.ete_diff == 0.0);
    CHECK(r.eei_diff == 0.0);
}

TEST_CASE("tie handling") {
    ScenarioSet sc;
    sc.R = Matrix::Constant(4, 2, 1.01);
    sc.B = Vector::Constant(4, 1.01);
    Vector a(2), b(2);
    a << 0.2, 0.8;
    b << 0.6, 0.4;
    const ComparisonReport inc = compare(a, b, sc, LossSpec::quadratic());
    CHECK(inc.tie_count == 4);
    CHECK(inc.bt_percent == 100.0);
    CHECK(std::isnan(inc.bt_percent_excl_ties));
    CHECK_THROWS_AS(compare(a, b, sc, LossSpec::quadratic(), TiePolicy::Exclude), std::invalid_argument);
    CHECK(parse_tie_policy("exclude") == TiePolicy::Exclude);
    CHECK(to_string(TiePolicy::Include) == "include");
    CHECK_THROWS(parse_tie_policy("drop"));
}

TEST_CASE("ETE is the mean tracking error") {
    const ScenarioSet sc = three_scenarios();
    Vector a(2), b(2);
    a << 0.25, 0.75;
    b << 0.9, 0.1;
    for (const LossSpec spec : {LossSpec::quadratic(), LossSpec::smoothed_pos_sq(0.01), LossSpec::smoothed_plus(0.01)}) {
        const ComparisonReport r = compare(a, b, sc, spec);
        CHECK(r.ete_robust == doctest::Approx(tracking_error(a, sc, spec).mean()));
        CHECK(r.ete_nonrobust == doctest::Approx(tracking_error(b, sc, spec).mean()));
        CHECK(r.eei_robust == doctest::Approx(excess_index(a, sc).mean()));
        CHECK(r.bt_percent >= 0.0);
        CHECK(r.bt_percent <= 100.0);
    }
}

TEST_CASE("tracking scenarios") {
    Matrix r(2, 3);
    r << 0.01, 0.02, 0.03, -0.01, 0.0, 0.01;
    Vector w(3);
    w << 0.5, 0.25, 0.25;
    const ScenarioSet sc = tracking_scenarios(r, IndexComposition(w), {2, 0}, 9);
    CHECK(sc.dimension() == 2);
    CHECK(sc.R(0, 0) == doctest::Approx(1.03));
    CHECK(sc.R(1, 1) == doctest::Approx(0.99));
    CHECK(sc.B(0) == doctest::Approx(1.0175));
    CHECK(sc.B(1) == doctest::Approx(0.9975));
}

TEST_CASE("simulation table") {
    const TableConfig cfg = small_table();
    const TableResult a = run_table(cfg);
    REQUIRE(a.rows.size() == 3);
    CHECK(a.u_nonrobust.sum() == doctest::Approx(1.0));
    for (const TableRow& row : a.rows) {
        CAPTURE(row.note);
        REQUIRE(row.ok);
        CHECK(row.status == SolveStatus::Converged);
        CHECK(row.report.n == cfg.n_eval);
        CHECK(row.u_robust.sum() == doctest::Approx(1.0));
        CHECK_FALSE(row.eta_from_mc);
    }
    const Vector mu = cfg.nominal.mean();
    CHECK(a.rows[0].k == doctest::Approx(k_from_eta(0.5, 0.1, mu, cfg.nominal.scale(), KSign::Minus)));
    CHECK(a.rows[1].k > 1.0);
    CHECK(a.rows[2].k == -3.0);
    CHECK(a.rows[2].eta == doctest::Approx(divergence_gaussian_equal_cov(mu, -3.0 * mu, cfg.nominal.scale(), 0.1)));

    SUBCASE("deterministic") {
        const TableResult b = run_table(cfg);
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].u_robust == b.rows[i].u_robust);
            CHECK(a.rows[i].report.bt_percent == b.rows[i].report.bt_percent);
            CHECK(a.rows[i].report.ete_diff == b.rows[i].report.ete_diff);
        }
    }
    SUBCASE("seeds are derived from the base seed") {
        TableConfig other = cfg;
        other.seed = 2;
        const TableResult b = run_table(other);
        CHECK(b.fit_seed != a.fit_seed);
        CHECK(a.fit_seed != a.eval_seed);
        CHECK(a.rows[0].u_robust != b.rows[0].u_robust);
    }
}

TEST_CASE("table rows with heavy tails and failures") {
    TableConfig cfg = small_table();
    cfg = TableConfig(NominalModel::student_t(cfg.nominal.mean(), cfg.nominal.scale(), 10.0), cfg.composition);
    cfg.tracked = {0, 1};
    cfg.n_fit = 3000;
    cfg.n_eval = 3000;
    cfg.n_eta = 20000;
    cfg.rows = {{0.1, std::nullopt, KSign::Minus, 1.0},
                {0.1, std::nullopt, KSign::Minus, -3.0},
                {0.1, 0.5, KSign::Minus, std::nullopt}};
    const TableResult t = run_table(cfg);
    REQUIRE(t.rows.size() == 3);
    // k = 1 leaves the law unchanged: estimate is zero and the floor applies
    CHECK(t.rows[0].eta_from_mc);
    CHECK(std::abs(t.rows[0].eta_estimate) <= 1e-12);
    CHECK(t.rows[0].eta == cfg.eta_floor);
    CHECK(t.rows[0].ok);
    CHECK(t.rows[1].ok);
    CHECK(t.rows[1].eta_std_error > 0.0);
    CHECK(t.rows[1].eta > 0.0);
    // eta rows need the Gaussian closed form
    CHECK_FALSE(t.rows[2].ok);
    CHECK(t.rows[2].note.find("Gaussian") != std::string::npos);
}
