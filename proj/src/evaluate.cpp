#include "robtrack/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "robtrack/errors.hpp"
#include "robtrack/rng.hpp"

namespace robtrack {

namespace {

void check_weights(const VectorCRef& u, const ScenarioSet& sc) {
    if (u.size() != sc.dimension()) throw std::invalid_argument("weight dimension mismatch");
    if (sc.B.size() != sc.size()) throw std::invalid_argument("R and B row counts differ");
}

}  // namespace

Vector tracking_error(const VectorCRef& u, const ScenarioSet& scenarios, const LossSpec& spec) {
    check_weights(u, scenarios);
    const Vector x = scenarios.B - scenarios.R * u;
    return x.unaryExpr([&](double v) { return loss_value(spec, v); });
}

Vector excess_index(const VectorCRef& u, const ScenarioSet& scenarios) {
    check_weights(u, scenarios);
    return scenarios.R * u - scenarios.B;
}

std::string to_string(TiePolicy policy) {
    return policy == TiePolicy::Include ? "include" : "exclude";
}

TiePolicy parse_tie_policy(const std::string& name) {
    if (name == "include") return TiePolicy::Include;
    if (name == "exclude") return TiePolicy::Exclude;
    throw std::invalid_argument("unknown tie policy '" + name + "' (expected include or exclude)");
}

ComparisonReport compare(const VectorCRef& u_robust, const VectorCRef& u_nonrobust,
                         const ScenarioSet& actual, const LossSpec& spec, TiePolicy tie_policy,
                         double tie_tol) {
    check_weights(u_robust, actual);
    check_weights(u_nonrobust, actual);
    const Index n = actual.size();
    if (n == 0) throw std::invalid_argument("compare: empty scenario set");

    const Vector x_r = actual.B - actual.R * u_robust;
    const Vector x_n = actual.B - actual.R * u_nonrobust;
    Index wins = 0;
    Index wins_untied = 0;
    Index ties = 0;
    for (Index i = 0; i < n; ++i) {
        const double lr = exact_loss(spec, x_r(i));
        const double ln = exact_loss(spec, x_n(i));
        const bool win = lr <= ln;
        wins += win;
        if (lr <= tie_tol && ln <= tie_tol) {
            ++ties;
        } else {
            wins_untied += win;
        }
    }

    ComparisonReport rep;
    rep.n = n;
    rep.tie_count = ties;
    rep.bt_percent = 100.0 * static_cast<double>(wins) / static_cast<double>(n);
    if (ties == n) {
        if (tie_policy == TiePolicy::Exclude) {
            throw std::invalid_argument("compare: every scenario is a tie; nothing left after exclusion");
        }
        rep.bt_percent_excl_ties = std::numeric_limits<double>::quiet_NaN();
    } else {
        rep.bt_percent_excl_ties =
            100.0 * static_cast<double>(wins_untied) / static_cast<double>(n - ties);
    }
    rep.ete_robust = tracking_error(u_robust, actual, spec).mean();
    rep.ete_nonrobust = tracking_error(u_nonrobust, actual, spec).mean();
    rep.ete_diff = rep.ete_robust - rep.ete_nonrobust;
    rep.eei_robust = excess_index(u_robust, actual).mean();
    rep.eei_nonrobust = excess_index(u_nonrobust, actual).mean();
    rep.eei_diff = rep.eei_robust - rep.eei_nonrobust;
    return rep;
}

ScenarioSet tracking_scenarios(const MatrixCRef& constituent_returns,
                               const IndexComposition& composition,
                               const std::vector<Index>& tracked, Seed seed) {
    const Vector b = synthesize_index(constituent_returns, composition);
    const Matrix r = select_columns(constituent_returns, tracked);
    return scenarios_from(r, b, seed, ScenarioSource::Simulated);
}

TableResult run_table(const TableConfig& cfg) {
    cfg.loss.validate();
    if (cfg.composition.size() != cfg.nominal.dimension()) {
        throw std::invalid_argument("run_table: composition and nominal dimensions differ");
    }
    if (cfg.tracked.empty()) throw std::invalid_argument("run_table: no tracked assets");
    if (cfg.n_fit < 1 || cfg.n_eval < 1) throw std::invalid_argument("run_table: n must be >= 1");

    TableResult out;
    out.fit_seed = derive_seed(cfg.seed, 1);
    out.eval_seed = derive_seed(cfg.seed, 2);
    out.eta_seed = derive_seed(cfg.seed, 3);

    const ScenarioSet fit = tracking_scenarios(sample(cfg.nominal, cfg.n_fit, out.fit_seed),
                                               cfg.composition, cfg.tracked, out.fit_seed);
    out.u_nonrobust = solve_nonrobust(fit, cfg.loss);

    for (const TableRowSpec& spec : cfg.rows) {
        TableRow row;
        row.spec = spec;
        try {
            DivergenceBall ball{spec.lambda, 0.0};
            ball.validate();
            if (spec.k) {
                row.k = *spec.k;
            } else if (spec.eta) {
                if (cfg.nominal.kind() != ModelKind::Gaussian) {
                    throw ConfigError("eta rows need a Gaussian nominal; give k for other models");
                }
                row.k = k_from_eta(*spec.eta, spec.lambda, cfg.nominal.mean(),
                                   cfg.nominal.scale(), spec.sign);
            } else {
                throw ConfigError("table row needs either eta or k");
            }
            const NominalModel actual = PerturbationSpec{row.k}.apply(cfg.nominal);

            if (spec.eta) {
                row.eta_estimate = *spec.eta;
            } else if (cfg.nominal.kind() == ModelKind::Gaussian) {
                row.eta_estimate = divergence_gaussian_equal_cov(
                    cfg.nominal.mean(), actual.mean(), cfg.nominal.scale(), spec.lambda);
            } else {
                const EtaEstimate est =
                    eta_from_ratio_mc(cfg.nominal, actual, spec.lambda, cfg.n_eta, out.eta_seed);
                if (est.overflow) {
                    throw NumericalError("density ratio overflow while estimating eta; reduce lambda");
                }
                row.eta_estimate = est.estimate;
                row.eta_std_error = est.std_error;
                row.eta_from_mc = true;
            }
            row.eta = std::max(row.eta_estimate, cfg.eta_floor);
            ball.eta = row.eta;

            const RobustSolution sol = solve_robust(fit, ball, cfg.loss, cfg.solver);
            row.status = sol.status;
            row.iterations = sol.iterations;
            row.residual_norm = sol.residual_norm;
            row.u_robust = sol.u;
            if (!sol.converged()) throw NumericalError("robust solve: " + sol.message);

            const ScenarioSet eval =
                tracking_scenarios(sample(actual, cfg.n_eval, out.eval_seed), cfg.composition,
                                   cfg.tracked, out.eval_seed);
            row.report = compare(sol.u, out.u_nonrobust, eval, cfg.loss, cfg.tie_policy, cfg.tie_tol);
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.note = e.what();
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace robtrack
