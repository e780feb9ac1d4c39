#pragma once

#include <string>

#include "robtrack/divergence.hpp"
#include "robtrack/loss.hpp"
#include "robtrack/model.hpp"
#include "robtrack/types.hpp"

namespace robtrack {

enum class InitWeights { Uniform, Given };
enum class StepControl { DampedNewton, TrustRegion };

struct SolverConfig {
    InitWeights init_u = InitWeights::Uniform;
    Vector given_u;  // used when init_u == Given
    double init_alpha = 0.02;
    double init_beta = 0.01;
    double init_theta = -0.05;
    int max_iterations = 200;
    double residual_tol = 1e-8;
    StepControl step_control = StepControl::DampedNewton;

    void validate() const;
};

enum class SolveStatus { Converged, MaxIterations, Infeasible, Degenerate, LineSearchFailed };

std::string to_string(SolveStatus status);

/// Root of the robust tracking system together with convergence diagnostics.
struct RobustSolution {
    Vector u;
    double alpha = 0.0;
    double beta = 0.0;
    double theta = 0.0;
    Vector estar;
    double residual_norm = 0.0;  // infinity norm
    int iterations = 0;
    double hessian_max_eig = 0.0;
    SolveStatus status = SolveStatus::MaxIterations;
    std::string message;

    bool converged() const { return status == SolveStatus::Converged; }
};

/// Worst-case likelihood ratio at payoff h:
///   lambda > 0:  (lambda/(lambda+1) (-beta - h)/alpha + 1)^(1/lambda)
///   lambda = 0:  exp((-beta - h)/alpha)
/// Throws InfeasiblePoint on a non-positive base or a non-finite result.
double estar_value(double h, double alpha, double beta, double lambda);

/// Residual blocks, stacked: mean(dH/du E*) - theta 1 (d entries), 1^T u - 1,
/// mean G(E*) - eta, mean E* - 1. Throws InfeasiblePoint when any E* base is
/// non-positive.
Vector system_residual(const VectorCRef& u, double alpha, double beta, double theta,
                       const ScenarioSet& scenarios, const DivergenceBall& ball,
                       const LossSpec& spec);

/// Analytic Jacobian of system_residual with respect to (u, alpha, beta, theta).
Matrix system_jacobian(const VectorCRef& u, double alpha, double beta, double theta,
                       const ScenarioSet& scenarios, const DivergenceBall& ball,
                       const LossSpec& spec);

/// Damped Newton (or Levenberg-Marquardt) on the (d+3)-dimensional system.
/// Requires eta > 0 and at least d+3 scenarios. Failures are reported through
/// RobustSolution::status rather than thrown.
RobustSolution solve_robust(const ScenarioSet& scenarios, const DivergenceBall& ball,
                            const LossSpec& spec, const SolverConfig& config = {});

/// Minimizer of mean loss(B - R^T u) subject to 1^T u = 1. Quadratic losses
/// use the KKT linear system directly; smoothed losses use equality
/// constrained Newton. Throws NumericalError on a singular KKT matrix.
Vector solve_nonrobust(const ScenarioSet& scenarios, const LossSpec& spec);

/// Empirical Hessian in u of the outer Lagrangian at a solution:
///   mean( d2H E* - 1/(alpha (1+lambda)) dH dH^T (E*)^(1-lambda) ).
Matrix outer_hessian(const RobustSolution& solution, const ScenarioSet& scenarios,
                     const DivergenceBall& ball, const LossSpec& spec);

/// Largest eigenvalue of outer_hessian; non-positive at a genuine maximizer.
double hessian_diagnostic(const RobustSolution& solution, const ScenarioSet& scenarios,
                          const DivergenceBall& ball, const LossSpec& spec);

}  // namespace robtrack
