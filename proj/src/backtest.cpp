#include "robtrack/backtest.hpp"

#include <algorithm>
#include <stdexcept>

#include "robtrack/evaluate.hpp"
#include "robtrack/model.hpp"

namespace robtrack {

void BacktestConfig::validate(Index dimension) const {
    ball.validate();
    loss.validate();
    solver.validate();
    if (window < dimension + 3) {
        throw std::invalid_argument("backtest: window must be at least d+3 = " +
                                    std::to_string(dimension + 3));
    }
    if (out_of_sample < 1) throw std::invalid_argument("backtest: out_of_sample must be >= 1");
}

namespace {

ScenarioSet window_set(const MatrixCRef& assets, const VectorCRef& index, Index begin, Index end) {
    return scenarios_from(assets.middleRows(begin, end - begin), index.segment(begin, end - begin),
                          0, ScenarioSource::HistoricalWindow);
}

struct Fit {
    RobustSolution robust;
    Vector nonrobust;
    bool robust_ok = false;
    bool nonrobust_ok = false;
    std::string note;
};

Fit fit_window(const ScenarioSet& sc, const BacktestConfig& cfg, const Vector& warm) {
    Fit f;
    f.robust = solve_robust(sc, cfg.ball, cfg.loss, cfg.solver);
    if (!f.robust.converged() && warm.size() == sc.dimension()) {
        SolverConfig retry = cfg.solver;
        retry.init_u = InitWeights::Given;
        retry.given_u = warm;
        RobustSolution second = solve_robust(sc, cfg.ball, cfg.loss, retry);
        if (second.converged()) f.robust = std::move(second);
    }
    f.robust_ok = f.robust.converged();
    if (!f.robust_ok) f.note = "robust: " + f.robust.message;
    try {
        f.nonrobust = solve_nonrobust(sc, cfg.loss);
        f.nonrobust_ok = f.nonrobust.allFinite();
    } catch (const std::exception& e) {
        f.note += (f.note.empty() ? "" : "; ") + std::string("non-robust: ") + e.what();
    }
    return f;
}

}  // namespace

BacktestResult backtest_sliding(const MatrixCRef& asset_returns, const VectorCRef& index_returns,
                                const BacktestConfig& cfg) {
    const Index total = asset_returns.rows();
    const Index d = asset_returns.cols();
    if (index_returns.size() != total) {
        throw std::invalid_argument("backtest: asset and index return lengths differ");
    }
    cfg.validate(d);
    if (total < cfg.window + 1) {
        throw std::invalid_argument("backtest: need at least window + 1 = " +
                                    std::to_string(cfg.window + 1) + " return periods, got " +
                                    std::to_string(total));
    }
    const Index oos = std::min(cfg.out_of_sample, total - cfg.window);

    BacktestResult res;
    const Vector uniform = Vector::Constant(d, 1.0 / static_cast<double>(d));

    const ScenarioSet first = window_set(asset_returns, index_returns, 0, cfg.window);
    Fit initial = fit_window(first, cfg, Vector());
    res.initial = initial.robust;
    Vector u_r = initial.robust_ok ? initial.robust.u : uniform;
    Vector u_n = initial.nonrobust_ok ? initial.nonrobust : uniform;
    res.initial_nonrobust = u_n;
    res.ete_in_sample_robust = tracking_error(u_r, first, cfg.loss).mean();
    res.ete_in_sample_nonrobust = tracking_error(u_n, first, cfg.loss).mean();
    const Vector fitted_in = first.R * u_r;
    for (Index t = 0; t < cfg.window; ++t) {
        res.plot.push_back({t, first.B(t), fitted_in(t), true});
    }

    double sum_r = 0.0;
    double sum_n = 0.0;
    for (Index t = cfg.window; t < cfg.window + oos; ++t) {
        BacktestStep step;
        step.period = t;
        step.window_begin = t - cfg.window;
        step.window_end = t;
        Fit f = t == cfg.window ? initial
                                : fit_window(window_set(asset_returns, index_returns,
                                                        step.window_begin, step.window_end),
                                             cfg, u_r);
        step.status = f.robust.status;
        step.note = f.note;
        if (f.robust_ok) {
            u_r = f.robust.u;
        } else {
            step.carried_forward = true;
            ++res.failed_steps;
        }
        if (f.nonrobust_ok) u_n = f.nonrobust;
        step.u_robust = u_r;
        step.u_nonrobust = u_n;

        const auto row = asset_returns.row(t);
        const double gross_r = 1.0 + row.dot(u_r);
        const double gross_n = 1.0 + row.dot(u_n);
        const double B = 1.0 + index_returns(t);
        step.loss_robust = loss_value(cfg.loss, B - gross_r);
        step.loss_nonrobust = loss_value(cfg.loss, B - gross_n);
        step.exact_robust = exact_loss(cfg.loss, B - gross_r);
        step.exact_nonrobust = exact_loss(cfg.loss, B - gross_n);
        step.ei_robust = gross_r - B;
        step.ei_nonrobust = gross_n - B;
        step.robust_wins = step.exact_robust <= step.exact_nonrobust;
        step.tie = step.exact_robust <= cfg.tie_tol && step.exact_nonrobust <= cfg.tie_tol;
        res.wins += step.robust_wins;
        res.ties += step.tie;
        sum_r += step.loss_robust;
        sum_n += step.loss_nonrobust;
        res.plot.push_back({t, B, gross_r, false});
        res.steps.push_back(std::move(step));
    }
    res.steps_count = oos;
    res.ete_out_of_sample_robust = sum_r / static_cast<double>(oos);
    res.ete_out_of_sample_nonrobust = sum_n / static_cast<double>(oos);
    res.bt_percent = 100.0 * static_cast<double>(res.wins) / static_cast<double>(oos);
    return res;
}

}  // namespace robtrack
