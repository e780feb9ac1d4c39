#pragma once

#include <string>
#include <vector>

#include "robtrack/divergence.hpp"
#include "robtrack/loss.hpp"
#include "robtrack/solver.hpp"
#include "robtrack/types.hpp"

namespace robtrack {

struct BacktestConfig {
    Index window = 104;
    Index out_of_sample = 52;
    DivergenceBall ball{0.2, 0.005};
    LossSpec loss = LossSpec::quadratic();
    SolverConfig solver;
    double tie_tol = 1e-12;

    void validate(Index dimension) const;
};

/// One out-of-sample period: weights fitted on returns [t - window, t) and
/// applied to the realised returns of period t.
struct BacktestStep {
    Index period = 0;
    Index window_begin = 0;
    Index window_end = 0;  // exclusive; equals period
    Vector u_robust;
    Vector u_nonrobust;
    double loss_robust = 0.0;  // loss of the spec
    double loss_nonrobust = 0.0;
    double exact_robust = 0.0;  // unsmoothed loss, used for beating time
    double exact_nonrobust = 0.0;
    double ei_robust = 0.0;
    double ei_nonrobust = 0.0;
    bool robust_wins = false;
    bool tie = false;
    SolveStatus status = SolveStatus::Converged;
    bool carried_forward = false;  // robust solve failed; previous weights reused
    std::string note;
};

/// Observed gross index return against the fitted portfolio return.
struct PlotPoint {
    Index period = 0;
    double observed = 0.0;
    double fitted = 0.0;
    bool in_sample = true;
};

struct BacktestResult {
    RobustSolution initial;  // robust solve on the first window
    Vector initial_nonrobust;
    double ete_in_sample_robust = 0.0;
    double ete_in_sample_nonrobust = 0.0;
    double ete_out_of_sample_robust = 0.0;
    double ete_out_of_sample_nonrobust = 0.0;
    Index wins = 0;  // ties counted as robust wins
    Index ties = 0;
    Index steps_count = 0;
    double bt_percent = 0.0;
    Index failed_steps = 0;
    std::vector<BacktestStep> steps;
    std::vector<PlotPoint> plot;  // window + out_of_sample rows
};

/// Myopic sliding-window backtest. Period t's weights come from the trailing
/// `window` returns and are scored on period t. The first window starts at
/// period 0; out-of-sample periods are window, ..., window + out_of_sample - 1.
BacktestResult backtest_sliding(const MatrixCRef& asset_returns, const VectorCRef& index_returns,
                                const BacktestConfig& config);

}  // namespace robtrack
