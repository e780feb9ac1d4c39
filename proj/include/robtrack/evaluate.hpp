#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robtrack/divergence.hpp"
#include "robtrack/loss.hpp"
#include "robtrack/model.hpp"
#include "robtrack/solver.hpp"
#include "robtrack/types.hpp"

namespace robtrack {

/// Per-scenario loss(B - R^T u) under `spec`; the default is the squared
/// tracking error (u^T R - B)^2.
Vector tracking_error(const VectorCRef& u, const ScenarioSet& scenarios,
                      const LossSpec& spec = LossSpec::quadratic());

/// Per-scenario u^T R - B. Negative values mean the index beat the portfolio.
Vector excess_index(const VectorCRef& u, const ScenarioSet& scenarios);

enum class TiePolicy { Include, Exclude };

std::string to_string(TiePolicy policy);
TiePolicy parse_tie_policy(const std::string& name);

struct ComparisonReport {
    double bt_percent = 0.0;            // ties counted as robust wins
    double bt_percent_excl_ties = 0.0;  // scenarios where both losses vanish removed
    double ete_robust = 0.0;
    double ete_nonrobust = 0.0;
    double ete_diff = 0.0;  // robust - non-robust
    double eei_robust = 0.0;
    double eei_nonrobust = 0.0;
    double eei_diff = 0.0;
    Index n = 0;
    Index tie_count = 0;
};

/// Robust vs non-robust on one common scenario set. Beating time compares the
/// unsmoothed losses (exact_loss); ETE averages the loss of `spec`.
/// In Exclude mode an all-tie scenario set is an error; in Include mode the
/// excluded-ties figure is NaN in that case.
ComparisonReport compare(const VectorCRef& u_robust, const VectorCRef& u_nonrobust,
                         const ScenarioSet& actual, const LossSpec& spec,
                         TiePolicy tie_policy = TiePolicy::Include, double tie_tol = 1e-12);

/// One table row: either an (eta, sign) pair mapped to k through the Gaussian
/// closed form, or an explicit k whose radius is estimated by Monte Carlo.
struct TableRowSpec {
    double lambda = 0.1;
    std::optional<double> eta;
    KSign sign = KSign::Minus;
    std::optional<double> k;
};

struct TableConfig {
    TableConfig(NominalModel nominal_, IndexComposition composition_)
        : nominal(std::move(nominal_)), composition(std::move(composition_)) {}

    NominalModel nominal;
    IndexComposition composition;
    std::vector<Index> tracked;  // columns of the nominal held in the portfolio
    std::vector<TableRowSpec> rows;
    LossSpec loss;
    Index n_fit = 200000;
    Index n_eval = 200000;
    Index n_eta = 200000;  // draws for the Monte-Carlo radius
    Seed seed = 1;
    TiePolicy tie_policy = TiePolicy::Include;
    double tie_tol = 1e-12;
    double eta_floor = 1e-8;
    SolverConfig solver;
};

struct TableRow {
    TableRowSpec spec;
    double k = 1.0;
    double eta = 0.0;           // radius handed to the robust solver
    double eta_estimate = 0.0;  // closed form or Monte-Carlo value before flooring
    double eta_std_error = 0.0;
    bool eta_from_mc = false;
    ComparisonReport report;
    SolveStatus status = SolveStatus::MaxIterations;
    int iterations = 0;
    double residual_norm = 0.0;
    Vector u_robust;
    bool ok = false;
    std::string note;
};

struct TableResult {
    Vector u_nonrobust;
    Seed fit_seed = 0;
    Seed eval_seed = 0;
    Seed eta_seed = 0;
    std::vector<TableRow> rows;
};

/// Fits robust and non-robust portfolios on one nominal draw set, then
/// evaluates each row's pair on actual draws that share the same underlying
/// random numbers. A failing row is annotated, not fatal.
TableResult run_table(const TableConfig& config);

/// Builds a ScenarioSet from draws of the constituents: the index is
/// synthesized from all columns, the portfolio holds the tracked columns.
ScenarioSet tracking_scenarios(const MatrixCRef& constituent_returns,
                               const IndexComposition& composition,
                               const std::vector<Index>& tracked, Seed seed);

}  // namespace robtrack
