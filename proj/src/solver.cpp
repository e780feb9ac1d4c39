#include "robtrack/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "robtrack/errors.hpp"
#include "robtrack/parallel.hpp"

namespace robtrack {

void SolverConfig::validate() const {
    if (!(residual_tol > 0.0)) throw std::invalid_argument("solver: residual_tol must be > 0");
    if (max_iterations < 1) throw std::invalid_argument("solver: max_iterations must be >= 1");
    if (!(init_alpha > 0.0)) throw std::invalid_argument("solver: init_alpha must be > 0");
    if (init_u == InitWeights::Given && given_u.size() == 0) {
        throw std::invalid_argument("solver: init_u is 'given' but no weights were supplied");
    }
}

std::string to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::MaxIterations: return "max_iterations";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::Degenerate: return "degenerate";
        case SolveStatus::LineSearchFailed: return "line_search_failed";
    }
    return "unknown";
}

namespace {

constexpr double kMaxExponent = 700.0;

struct Point {
    Vector u;
    double alpha = 0.0;
    double beta = 0.0;
    double theta = 0.0;
};

// E* and its sensitivities. dE/du = du * dH/du.
struct Ratio {
    double e = 1.0;
    double t = 0.0;  // (-beta - h) / alpha, which equals G'(E*)
    double du = 0.0;
    double da = 0.0;
    double db = 0.0;
};

bool ratio_at(double h, double alpha, double beta, double lambda, Ratio& out) {
    if (!(alpha > 0.0)) return false;
    const double t = (-beta - h) / alpha;
    out.t = t;
    if (lambda == 0.0) {
        if (!(t < kMaxExponent)) return false;
        out.e = std::exp(t);
        out.du = -out.e / alpha;
        out.da = -out.e * t / alpha;
        out.db = -out.e / alpha;
        return true;
    }
    const double s = lambda / (lambda + 1.0) * t + 1.0;
    if (!(s > 0.0)) return false;
    out.e = std::pow(s, 1.0 / lambda);
    if (!std::isfinite(out.e) || !(out.e > 0.0)) return false;
    const double ep = out.e / ((lambda + 1.0) * s);
    out.du = -ep / alpha;
    out.da = -(s - 1.0) / alpha * out.e / (lambda * s);
    out.db = -ep / alpha;
    return true;
}

// G(E*) written through t so that no 1/lambda cancellation occurs.
double g_at(const Ratio& r, double lambda) { return r.e * (r.t / (lambda + 1.0) - 1.0) + 1.0; }

struct Partial {
    Vector r1;
    double sum_g = 0.0;
    double sum_e = 0.0;
    Matrix j11;
    Vector j1a, j1b, j3u, j4u;
    double j3a = 0.0, j3b = 0.0, j4a = 0.0, j4b = 0.0;
    bool feasible = true;

    void init(Index d, bool jac) {
        r1 = Vector::Zero(d);
        if (jac) {
            j11 = Matrix::Zero(d, d);
            j1a = j1b = j3u = j4u = Vector::Zero(d);
        }
    }
};

// Residual (and optionally Jacobian) assembled from chunk partials summed in
// chunk order. Returns false when some E* base is non-positive or non-finite.
bool assemble(const Point& p, const ScenarioSet& sc, const DivergenceBall& ball,
              const LossSpec& spec, Vector& r, Matrix* J) {
    const Index n = sc.size();
    const Index d = sc.dimension();
    const bool jac = J != nullptr;
    const double lambda = ball.lambda;
    std::vector<Partial> parts(static_cast<std::size_t>(chunk_count(n)));
    for_each_chunk(n, [&](Index c, Index begin, Index end) {
        Partial& acc = parts[static_cast<std::size_t>(c)];
        acc.init(d, jac);
        Ratio q;
        for (Index i = begin; i < end; ++i) {
            const auto row = sc.R.row(i);
            const double x = sc.B(i) - row.dot(p.u);
            const double h = -loss_value(spec, x);
            if (!ratio_at(h, p.alpha, p.beta, lambda, q)) {
                acc.feasible = false;
                return;
            }
            const double l1 = loss_deriv1(spec, x);
            acc.r1.noalias() += (l1 * q.e) * row.transpose();
            acc.sum_g += g_at(q, lambda);
            acc.sum_e += q.e;
            if (!jac) continue;
            const double l2 = loss_deriv2(spec, x);
            // d2H = -l2 R R^T and dE/du = q.du * l1 R, so the u-block is a rank-one update.
            const double w = -l2 * q.e + q.du * l1 * l1;
            acc.j11.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose(), w);
            acc.j1a.noalias() += (l1 * q.da) * row.transpose();
            acc.j1b.noalias() += (l1 * q.db) * row.transpose();
            acc.j3u.noalias() += (q.t * q.du * l1) * row.transpose();
            acc.j4u.noalias() += (q.du * l1) * row.transpose();
            acc.j3a += q.t * q.da;
            acc.j3b += q.t * q.db;
            acc.j4a += q.da;
            acc.j4b += q.db;
        }
    });

    Partial tot;
    tot.init(d, jac);
    for (const Partial& part : parts) {
        if (!part.feasible) return false;
        tot.r1 += part.r1;
        tot.sum_g += part.sum_g;
        tot.sum_e += part.sum_e;
        if (!jac) continue;
        tot.j11 += part.j11;
        tot.j1a += part.j1a;
        tot.j1b += part.j1b;
        tot.j3u += part.j3u;
        tot.j4u += part.j4u;
        tot.j3a += part.j3a;
        tot.j3b += part.j3b;
        tot.j4a += part.j4a;
        tot.j4b += part.j4b;
    }
    const double inv_n = 1.0 / static_cast<double>(n);

    r.resize(d + 3);
    r.head(d) = tot.r1 * inv_n - p.theta * Vector::Ones(d);
    r(d) = p.u.sum() - 1.0;
    r(d + 1) = tot.sum_g * inv_n - ball.eta;
    r(d + 2) = tot.sum_e * inv_n - 1.0;
    if (!r.allFinite()) return false;

    if (jac) {
        Matrix& M = *J;
        M = Matrix::Zero(d + 3, d + 3);
        M.topLeftCorner(d, d) = tot.j11.selfadjointView<Eigen::Lower>();
        M.topLeftCorner(d, d) *= inv_n;
        M.block(0, d, d, 1) = tot.j1a * inv_n;
        M.block(0, d + 1, d, 1) = tot.j1b * inv_n;
        M.block(0, d + 2, d, 1).setConstant(-1.0);
        M.block(d, 0, 1, d).setOnes();
        M.block(d + 1, 0, 1, d) = tot.j3u.transpose() * inv_n;
        M(d + 1, d) = tot.j3a * inv_n;
        M(d + 1, d + 1) = tot.j3b * inv_n;
        M.block(d + 2, 0, 1, d) = tot.j4u.transpose() * inv_n;
        M(d + 2, d) = tot.j4a * inv_n;
        M(d + 2, d + 1) = tot.j4b * inv_n;
        if (!M.allFinite()) return false;
    }
    return true;
}

void check_shapes(const VectorCRef& u, const ScenarioSet& sc) {
    if (sc.size() < 1) throw std::invalid_argument("scenario set is empty");
    if (sc.B.size() != sc.size()) throw std::invalid_argument("R and B row counts differ");
    if (u.size() != sc.dimension()) throw std::invalid_argument("weight dimension mismatch");
}

Point unpack(const Vector& x, Index d) {
    return {x.head(d), x(d), x(d + 1), x(d + 2)};
}

Vector pack(const Point& p) {
    const Index d = p.u.size();
    Vector x(d + 3);
    x << p.u, p.alpha, p.beta, p.theta;
    return x;
}

std::string feasibility_note(double alpha, double beta, double lambda) {
    std::ostringstream os;
    os << "beta/alpha = " << beta / alpha;
    if (lambda > 0.0) os << " (requires < 1 + 1/lambda = " << 1.0 + 1.0 / lambda << ")";
    return os.str();
}

Vector estar_vector(const Point& p, const ScenarioSet& sc, double lambda, const LossSpec& spec) {
    Vector e(sc.size());
    Ratio q;
    for (Index i = 0; i < sc.size(); ++i) {
        const double x = sc.B(i) - sc.R.row(i).dot(p.u);
        if (!ratio_at(-loss_value(spec, x), p.alpha, p.beta, lambda, q)) {
            throw InfeasiblePoint("worst-case ratio base is non-positive at scenario " +
                                  std::to_string(i));
        }
        e(i) = q.e;
    }
    return e;
}

}  // namespace

double estar_value(double h, double alpha, double beta, double lambda) {
    if (!(alpha > 0.0)) throw InfeasiblePoint("estar_value: alpha must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("estar_value: lambda must be >= 0");
    Ratio q;
    if (!ratio_at(h, alpha, beta, lambda, q)) {
        throw InfeasiblePoint("estar_value: non-positive base or overflow; " +
                              feasibility_note(alpha, beta, lambda));
    }
    return q.e;
}

Vector system_residual(const VectorCRef& u, double alpha, double beta, double theta,
                       const ScenarioSet& scenarios, const DivergenceBall& ball,
                       const LossSpec& spec) {
    check_shapes(u, scenarios);
    Vector r;
    if (!assemble({u, alpha, beta, theta}, scenarios, ball, spec, r, nullptr)) {
        throw InfeasiblePoint("system_residual: infeasible point; " +
                              feasibility_note(alpha, beta, ball.lambda));
    }
    return r;
}

Matrix system_jacobian(const VectorCRef& u, double alpha, double beta, double theta,
                       const ScenarioSet& scenarios, const DivergenceBall& ball,
                       const LossSpec& spec) {
    check_shapes(u, scenarios);
    Vector r;
    Matrix J;
    if (!assemble({u, alpha, beta, theta}, scenarios, ball, spec, r, &J)) {
        throw InfeasiblePoint("system_jacobian: infeasible point; " +
                              feasibility_note(alpha, beta, ball.lambda));
    }
    return J;
}

RobustSolution solve_robust(const ScenarioSet& scenarios, const DivergenceBall& ball,
                            const LossSpec& spec, const SolverConfig& config) {
    ball.validate();
    spec.validate();
    config.validate();
    const Index d = scenarios.dimension();
    const Index n = scenarios.size();
    if (!(ball.eta > 0.0)) throw std::invalid_argument("solve_robust: eta must be > 0");
    if (n < d + 3) {
        throw std::invalid_argument("solve_robust: need at least d+3 = " + std::to_string(d + 3) +
                                    " scenarios, got " + std::to_string(n));
    }
    if (scenarios.B.size() != n) throw std::invalid_argument("solve_robust: R and B row counts differ");

    Point p;
    if (config.init_u == InitWeights::Given) {
        if (config.given_u.size() != d) {
            throw std::invalid_argument("solve_robust: initial weights have the wrong dimension");
        }
        p.u = config.given_u;
    } else {
        p.u = Vector::Constant(d, 1.0 / static_cast<double>(d));
    }
    p.alpha = config.init_alpha;
    p.beta = config.init_beta;
    p.theta = config.init_theta;

    RobustSolution sol;
    auto finish = [&](SolveStatus status, std::string message) {
        sol.u = p.u;
        sol.alpha = p.alpha;
        sol.beta = p.beta;
        sol.theta = p.theta;
        sol.status = status;
        sol.message = std::move(message);
        try {
            sol.estar = estar_vector(p, scenarios, ball.lambda, spec);
        } catch (const InfeasiblePoint&) {
            sol.estar.resize(0);
        }
        return sol;
    };

    const Vector shortfall = scenarios.B - scenarios.R * p.u;
    const double spread = shortfall.maxCoeff() - shortfall.minCoeff();
    if (spread <= 1e-14 * (1.0 + shortfall.cwiseAbs().maxCoeff())) {
        sol.residual_norm = std::numeric_limits<double>::infinity();
        return finish(SolveStatus::Degenerate,
                      "tracking shortfall B - R^T u is identical in every scenario; the payoff is "
                      "constant and the multipliers are not identified");
    }

    Vector r;
    Matrix J;
    if (!assemble(p, scenarios, ball, spec, r, &J)) {
        sol.residual_norm = std::numeric_limits<double>::infinity();
        return finish(SolveStatus::Infeasible,
                      "initial point has a non-positive worst-case ratio base; " +
                          feasibility_note(p.alpha, p.beta, ball.lambda));
    }

    double radius = -1.0;  // dogleg trust radius in scaled variables
    for (int it = 0;; ++it) {
        sol.iterations = it;
        sol.residual_norm = r.lpNorm<Eigen::Infinity>();
        if (sol.residual_norm <= config.residual_tol) break;
        if (it >= config.max_iterations) {
            return finish(SolveStatus::MaxIterations,
                          "no convergence after " + std::to_string(it) + " iterations");
        }
        const Vector x = pack(p);
        const double norm0 = r.norm();
        Vector r_new;
        Matrix J_new;
        bool accepted = false;

        if (config.step_control == StepControl::DampedNewton) {
            Eigen::FullPivLU<Matrix> lu(J);
            if (!lu.isInvertible()) {
                return finish(SolveStatus::Degenerate, "singular Jacobian at iteration " +
                                                           std::to_string(it));
            }
            const Vector dx = lu.solve(-r);
            for (double t = 1.0; t >= 1e-12; t *= 0.5) {
                const Point cand = unpack(x + t * dx, d);
                if (assemble(cand, scenarios, ball, spec, r_new, nullptr) &&
                    r_new.norm() <= (1.0 - 1e-4 * t) * norm0) {
                    p = cand;
                    accepted = true;
                    break;
                }
            }
        } else {
            // Powell dogleg with column-norm scaling.
            const Vector colnorm = J.colwise().norm().transpose();
            const Vector D = colnorm.cwiseMax(1e-12 * std::max(1.0, colnorm.maxCoeff()));
            if (radius < 0.0) radius = 100.0 * std::max((D.asDiagonal() * x).norm(), 1.0);
            const Vector g = J.transpose() * r;
            const Vector sd = -(g.array() / D.array().square()).matrix();
            const double sd_len = (D.asDiagonal() * sd).norm();
            const double jsd = (J * sd).squaredNorm();
            const Vector cauchy = jsd > 0.0 ? Vector(sd * ((g.array() / D.array()).matrix().squaredNorm() / jsd))
                                            : Vector(sd);
            Eigen::ColPivHouseholderQR<Matrix> qr(J);
            const bool newton_ok = qr.rank() == J.cols();
            const Vector newton = newton_ok ? Vector(qr.solve(-r)) : cauchy;
            while (radius > 1e-14 * std::max(1.0, (D.asDiagonal() * x).norm())) {
                Vector dx;
                if ((D.asDiagonal() * newton).norm() <= radius) {
                    dx = newton;
                } else if ((D.asDiagonal() * cauchy).norm() >= radius) {
                    dx = sd * (radius / sd_len);
                } else {
                    // point on the segment cauchy -> newton at the trust radius
                    const Vector a0 = D.asDiagonal() * cauchy;
                    const Vector a1 = D.asDiagonal() * (newton - cauchy);
                    const double qa = a1.squaredNorm();
                    const double qb = 2.0 * a0.dot(a1);
                    const double qc = a0.squaredNorm() - radius * radius;
                    const double tau = (-qb + std::sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa);
                    dx = cauchy + tau * (newton - cauchy);
                }
                const double predicted = norm0 * norm0 - (r + J * dx).squaredNorm();
                const Point cand = unpack(x + dx, d);
                double rho = -1.0;
                if (dx.allFinite() && predicted > 0.0 &&
                    assemble(cand, scenarios, ball, spec, r_new, nullptr)) {
                    rho = (norm0 * norm0 - r_new.squaredNorm()) / predicted;
                }
                const double step_len = (D.asDiagonal() * dx).norm();
                if (rho < 0.25) {
                    radius = 0.25 * step_len;
                } else if (rho > 0.75) {
                    radius = std::max(radius, 2.0 * step_len);
                }
                if (rho > 1e-4) {
                    p = cand;
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted) {
            return finish(SolveStatus::LineSearchFailed,
                          "no acceptable step from iterate " + std::to_string(it) +
                              " (residual " + std::to_string(sol.residual_norm) + "; " +
                              feasibility_note(p.alpha, p.beta, ball.lambda) + ")");
        }
        if (!assemble(p, scenarios, ball, spec, r, &J)) {
            return finish(SolveStatus::Infeasible, "accepted iterate became infeasible");
        }
    }

    finish(SolveStatus::Converged, "converged");
    if (ball.lambda > 0.0 && !(p.beta / p.alpha < 1.0 + 1.0 / ball.lambda)) {
        sol.status = SolveStatus::Infeasible;
        sol.message = "root found but " + feasibility_note(p.alpha, p.beta, ball.lambda);
        return sol;
    }
    sol.hessian_max_eig = hessian_diagnostic(sol, scenarios, ball, spec);
    return sol;
}

Vector solve_nonrobust(const ScenarioSet& scenarios, const LossSpec& spec) {
    spec.validate();
    const Index d = scenarios.dimension();
    const Index n = scenarios.size();
    if (n < d) {
        throw std::invalid_argument("solve_nonrobust: need at least d scenarios");
    }
    if (scenarios.B.size() != n) throw std::invalid_argument("solve_nonrobust: R and B row counts differ");
    const double inv_n = 1.0 / static_cast<double>(n);
    const auto& R = scenarios.R;
    const auto& B = scenarios.B;

    auto kkt_solve = [&](const Matrix& H, const Vector& rhs_top, double rhs_last) {
        Matrix K = Matrix::Zero(d + 1, d + 1);
        K.topLeftCorner(d, d) = H;
        K.block(0, d, d, 1).setOnes();
        K.block(d, 0, 1, d).setOnes();
        Vector rhs(d + 1);
        rhs << rhs_top, rhs_last;
        Eigen::FullPivLU<Matrix> lu(K);
        if (!lu.isInvertible()) {
            throw NumericalError("solve_nonrobust: singular KKT matrix");
        }
        return Vector(lu.solve(rhs).head(d));
    };

    if (spec.kind == LossKind::Quadratic) {
        const Matrix H = 2.0 * inv_n * (R.transpose() * R);
        const Vector top = 2.0 * inv_n * (R.transpose() * B);
        return kkt_solve(H, top, 1.0);
    }

    auto objective = [&](const Vector& u) {
        const Vector x = B - R * u;
        double s = 0.0;
        for (Index i = 0; i < n; ++i) s += loss_value(spec, x(i));
        return s * inv_n;
    };

    Vector u = Vector::Constant(d, 1.0 / static_cast<double>(d));
    double f = objective(u);
    for (int it = 0; it < 200; ++it) {
        const Vector x = B - R * u;
        Vector grad = Vector::Zero(d);
        Matrix H = Matrix::Zero(d, d);
        for (Index i = 0; i < n; ++i) {
            grad.noalias() -= loss_deriv1(spec, x(i)) * R.row(i).transpose();
            H.selfadjointView<Eigen::Lower>().rankUpdate(R.row(i).transpose(),
                                                         loss_deriv2(spec, x(i)));
        }
        grad *= inv_n;
        H = Matrix(H.selfadjointView<Eigen::Lower>()) * inv_n;
        const Vector step = kkt_solve(H, -grad, 1.0 - u.sum());
        const double decrement = -grad.dot(step);
        if (step.lpNorm<Eigen::Infinity>() <= 1e-14 || decrement <= 1e-30) return u + step;
        double t = 1.0;
        for (; t >= 1e-12; t *= 0.5) {
            const Vector cand = u + t * step;
            const double fc = objective(cand);
            if (fc <= f - 1e-4 * t * decrement) {
                u = cand;
                f = fc;
                break;
            }
        }
        if (t < 1e-12) return u;  // objective is flat to machine precision
    }
    return u;
}

Matrix outer_hessian(const RobustSolution& solution, const ScenarioSet& scenarios,
                     const DivergenceBall& ball, const LossSpec& spec) {
    check_shapes(solution.u, scenarios);
    if (!(solution.alpha > 0.0)) throw NumericalError("outer_hessian: alpha must be > 0");
    const Index d = scenarios.dimension();
    const Index n = scenarios.size();
    const double lambda = ball.lambda;
    const double coeff = 1.0 / (solution.alpha * (1.0 + lambda));
    std::vector<Matrix> parts(static_cast<std::size_t>(chunk_count(n)));
    std::vector<char> ok(parts.size(), 1);
    for_each_chunk(n, [&](Index c, Index begin, Index end) {
        Matrix acc = Matrix::Zero(d, d);
        Ratio q;
        for (Index i = begin; i < end; ++i) {
            const auto row = scenarios.R.row(i);
            const double x = scenarios.B(i) - row.dot(solution.u);
            if (!ratio_at(-loss_value(spec, x), solution.alpha, solution.beta, lambda, q)) {
                ok[static_cast<std::size_t>(c)] = 0;
                return;
            }
            const double l1 = loss_deriv1(spec, x);
            const double w = -loss_deriv2(spec, x) * q.e -
                             coeff * l1 * l1 * std::pow(q.e, 1.0 - lambda);
            acc.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose(), w);
        }
        parts[static_cast<std::size_t>(c)] = std::move(acc);
    });
    Matrix H = Matrix::Zero(d, d);
    for (std::size_t c = 0; c < parts.size(); ++c) {
        if (!ok[c]) throw InfeasiblePoint("outer_hessian: non-positive worst-case ratio base");
        H += parts[c];
    }
    return Matrix(H.selfadjointView<Eigen::Lower>()) / static_cast<double>(n);
}

double hessian_diagnostic(const RobustSolution& solution, const ScenarioSet& scenarios,
                          const DivergenceBall& ball, const LossSpec& spec) {
    const Matrix H = outer_hessian(solution, scenarios, ball, spec);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(H, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff();
}

}  // namespace robtrack
