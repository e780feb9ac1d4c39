#include <doctest.h>

#include "robtrack/backtest.hpp"
#include "robtrack/evaluate.hpp"
#include "robtrack/model.hpp"

using namespace robtrack;

namespace {

struct Data {
    Matrix assets;
    Vector index;
};

Data synthetic(Index periods, Seed seed) {
    Vector mean(5);
    mean << 0.003, 0.002, 0.004, 0.001, 0.002;
    Matrix cov = Matrix::Constant(5, 5, 2e-4);
    cov.diagonal() << 9e-4, 6e-4, 1.2e-3, 5e-4, 8e-4;
    const Matrix r = sample(NominalModel::gaussian(mean, cov), periods, seed);
    Vector w(5);
    w << 0.3, 0.2, 0.2, 0.2, 0.1;
    return {select_columns(r, {0, 1, 2}), synthesize_index(r, IndexComposition(w))};
}

}  // namespace

TEST_CASE("constant prices track perfectly") {
    const Matrix assets = Matrix::Zero(20, 3);
    const Vector index = Vector::Zero(20);
    BacktestConfig cfg;
    cfg.window = 10;
    cfg.out_of_sample = 5;
    const BacktestResult res = backtest_sliding(assets, index, cfg);
    CHECK(res.steps_count == 5);
    CHECK(res.plot.size() == 15);
    CHECK(res.bt_percent == 100.0);
    CHECK(res.ties == 5);
    CHECK(res.ete_out_of_sample_robust == 0.0);
    CHECK(res.ete_out_of_sample_nonrobust == 0.0);
    CHECK(res.failed_steps == 5);
    for (const BacktestStep& s : res.steps) {
        CHECK(s.carried_forward);
        CHECK(s.status == SolveStatus::Degenerate);
        CHECK(s.u_robust.sum() == doctest::Approx(1.0));
    }
}

TEST_CASE("sliding window bookkeeping") {
    const Data data = synthetic(80, 17);
    BacktestConfig cfg;
    cfg.window = 40;
    cfg.out_of_sample = 12;
    cfg.ball = {0.2, 0.05};
    const BacktestResult res = backtest_sliding(data.assets, data.index, cfg);
    REQUIRE(res.steps.size() == 12);
    CHECK(res.initial.converged());
    CHECK(res.plot.size() == 52);
    CHECK(res.failed_steps == 0);
    Index wins = 0;
    double ete = 0.0;
    for (std::size_t i = 0; i < res.steps.size(); ++i) {
        const BacktestStep& s = res.steps[i];
        const Index t = cfg.window + static_cast<Index>(i);
        CHECK(s.period == t);
        CHECK(s.window_begin == t - cfg.window);
        CHECK(s.window_end == t);
        CHECK(s.u_robust.sum() == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(s.u_nonrobust.sum() == doctest::Approx(1.0).epsilon(1e-10));

        // re-fit this window directly
        const ScenarioSet win = scenarios_from(data.assets.middleRows(s.window_begin, cfg.window),
                                               data.index.segment(s.window_begin, cfg.window));
        const RobustSolution direct = solve_robust(win, cfg.ball, cfg.loss, cfg.solver);
        CHECK((direct.u - s.u_robust).cwiseAbs().maxCoeff() <= 1e-12);

        const ScenarioSet one = scenarios_from(data.assets.middleRows(t, 1), data.index.segment(t, 1));
        CHECK(s.loss_robust == doctest::Approx(tracking_error(s.u_robust, one)(0)).epsilon(1e-12));
        CHECK(s.ei_nonrobust == doctest::Approx(excess_index(s.u_nonrobust, one)(0)).epsilon(1e-12));
        wins += s.robust_wins;
        ete += s.loss_robust;
        CHECK_FALSE(res.plot[static_cast<std::size_t>(t)].in_sample);
        CHECK(res.plot[static_cast<std::size_t>(t)].observed == doctest::Approx(1.0 + data.index(t)));
    }
    CHECK(res.steps.front().u_robust == res.initial.u);
    CHECK(res.wins == wins);
    CHECK(res.bt_percent == doctest::Approx(100.0 * wins / 12.0));
    CHECK(res.ete_out_of_sample_robust == doctest::Approx(ete / 12.0));
    CHECK(res.plot.front().in_sample);
    CHECK(res.plot.front().fitted == doctest::Approx(1.0 + data.assets.row(0).dot(res.initial.u)));
}

TEST_CASE("smoothed loss backtest") {
    const Data data = synthetic(60, 23);
    BacktestConfig cfg;
    cfg.window = 40;
    cfg.out_of_sample = 10;
    cfg.ball = {0.2, 0.05};
    cfg.loss = LossSpec::smoothed_pos_sq(0.01);
    const BacktestResult res = backtest_sliding(data.assets, data.index, cfg);
    CHECK(res.steps_count == 10);
    for (const BacktestStep& s : res.steps) {
        CHECK(s.exact_robust == doctest::Approx(exact_loss(cfg.loss, -s.ei_robust)).scale(1e-18));
        CHECK(s.robust_wins == (s.exact_robust <= s.exact_nonrobust));
    }
}

TEST_CASE("out-of-sample span is truncated to the data") {
    const Data data = synthetic(45, 29);
    BacktestConfig cfg;
    cfg.window = 40;
    cfg.out_of_sample = 52;
    cfg.ball = {0.2, 0.05};
    const BacktestResult res = backtest_sliding(data.assets, data.index, cfg);
    CHECK(res.steps_count == 5);
    CHECK(res.plot.size() == 45);
}

TEST_CASE("invalid backtests") {
    const Data data = synthetic(30, 31);
    BacktestConfig cfg;
    cfg.window = 5;  // below d + 3
    CHECK_THROWS_AS(backtest_sliding(data.assets, data.index, cfg), std::invalid_argument);
    cfg.window = 30;  // no period left to score
    CHECK_THROWS_AS(backtest_sliding(data.assets, data.index, cfg), std::invalid_argument);
    cfg.window = 20;
    cfg.out_of_sample = 0;
    CHECK_THROWS_AS(backtest_sliding(data.assets, data.index, cfg), std::invalid_argument);
    cfg.out_of_sample = 5;
    CHECK_THROWS_AS(backtest_sliding(data.assets, data.index.head(29), cfg), std::invalid_argument);
}
