#include "robtrack/divergence.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>

#include "robtrack/errors.hpp"
#include "robtrack/parallel.hpp"

namespace robtrack {

namespace {

void require_lambda(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("lambda must be finite and >= 0");
    }
}

Eigen::LLT<Matrix> factor(const MatrixCRef& S, const char* what) {
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) {
        throw NumericalError(std::string(what) + ": matrix is not positive definite");
    }
    return llt;
}

double log_det(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

McEstimate summarize(std::span<const double> values) {
    McEstimate out;
    out.n = static_cast<Index>(values.size());
    if (values.empty()) throw std::invalid_argument("divergence_mc: no draws");
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out.estimate = mean;
    out.std_error = values.size() > 1
                        ? std::sqrt(ss / static_cast<double>(values.size() - 1)) /
                              std::sqrt(static_cast<double>(values.size()))
                        : 0.0;
    return out;
}

}  // namespace

void DivergenceBall::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("ball: lambda must be finite and >= 0");
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw std::invalid_argument("ball: eta must be finite and >= 0");
    }
}

double generator_F(double z, double lambda) {
    if (!(z > 0.0)) throw std::domain_error("generator_F: z must be positive");
    if (!(lambda > 0.0)) throw std::domain_error("generator_F: lambda must be positive");
    return (std::pow(z, lambda + 1.0) - (lambda + 1.0) * z) / lambda;
}

double scalar_G(double e, double lambda) {
    if (!(e > 0.0)) throw std::domain_error("scalar_G: ratio must be positive");
    require_lambda(lambda);
    if (lambda == 0.0) return e * std::log(e) - e + 1.0;
    return std::pow(e, lambda + 1.0) / lambda - (lambda + 1.0) / lambda * e + 1.0;
}

double scalar_G_deriv(double e, double lambda) {
    if (!(e > 0.0)) throw std::domain_error("scalar_G_deriv: ratio must be positive");
    require_lambda(lambda);
    if (lambda == 0.0) return std::log(e);
    return (lambda + 1.0) / lambda * (std::pow(e, lambda) - 1.0);
}

double scalar_G_from_log(double log_e, double lambda) {
    require_lambda(lambda);
    constexpr double kMaxLog = 700.0;
    const double growth = (lambda == 0.0 ? 1.0 : lambda + 1.0) * log_e;
    if (growth > kMaxLog) return std::numeric_limits<double>::infinity();
    const double e = std::exp(log_e);
    if (lambda == 0.0) return e * log_e - e + 1.0;
    return std::exp(growth) / lambda - (lambda + 1.0) / lambda * e + 1.0;
}

McEstimate divergence_mc(std::span<const double> ratios, double lambda) {
    std::vector<double> g(ratios.size());
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (!(ratios[i] > 0.0) || !std::isfinite(ratios[i])) {
            throw std::domain_error("divergence_mc: ratio values must be positive and finite");
        }
        g[i] = scalar_G(ratios[i], lambda);
    }
    return summarize(g);
}

McEstimate divergence_mc(const MatrixCRef& draws,
                         const std::function<double(const VectorCRef&)>& ratio, double lambda) {
    std::vector<double> values(static_cast<std::size_t>(draws.rows()));
    for (Index i = 0; i < draws.rows(); ++i) {
        values[static_cast<std::size_t>(i)] = ratio(draws.row(i).transpose());
    }
    return divergence_mc(values, lambda);
}

double divergence_gaussian(const VectorCRef& mu1, const MatrixCRef& Sigma1, const VectorCRef& mu2,
                           const MatrixCRef& Sigma2, double lambda) {
    require_lambda(lambda);
    const Index d = mu1.size();
    if (mu2.size() != d || Sigma1.rows() != d || Sigma1.cols() != d || Sigma2.rows() != d ||
        Sigma2.cols() != d) {
        throw std::invalid_argument("divergence_gaussian: dimension mismatch");
    }
    const auto L1 = factor(Sigma1, "divergence_gaussian: Sigma1");
    const auto L2 = factor(Sigma2, "divergence_gaussian: Sigma2");
    if (mu1 == mu2 && Sigma1 == Sigma2) return 0.0;
    const Matrix I = Matrix::Identity(d, d);

    if (lambda == 0.0) {
        // KL(N2 || N1), the lambda -> 0 limit.
        const Vector diff = mu2 - mu1;
        const double trace = L1.solve(Sigma2).trace();
        const double maha = diff.dot(L1.solve(diff));
        return 0.5 * (trace + maha - static_cast<double>(d) + log_det(L1) - log_det(L2));
    }

    const Matrix P1 = L1.solve(I);
    const Matrix P2 = L2.solve(I);
    // Precision of the tilted law; its inverse is Sigma~_lambda.
    Matrix P = (lambda + 1.0) * P2 - lambda * P1;
    P = 0.5 * (P + P.transpose());
    Eigen::LLT<Matrix> LP(P);
    if (LP.info() != Eigen::Success) {
        throw NumericalError(
            "divergence_gaussian: outside validity region, (lambda+1) Sigma2^-1 - lambda "
            "Sigma1^-1 is not positive definite");
    }
    const Vector m = (lambda + 1.0) * L2.solve(mu2) - lambda * L1.solve(mu1);

    const double log_prefactor =
        0.5 * ((lambda + 1.0) * (log_det(L1) - log_det(L2)) - log_det(LP) - log_det(L1));
    const double exponent = -0.5 * (lambda + 1.0) * mu2.dot(L2.solve(mu2)) +
                            0.5 * lambda * mu1.dot(L1.solve(mu1)) + 0.5 * m.dot(LP.solve(m));
    return std::expm1(log_prefactor + exponent) / lambda;
}

double divergence_gaussian_equal_cov(const VectorCRef& mu1, const VectorCRef& mu2,
                                     const MatrixCRef& Sigma, double lambda) {
    require_lambda(lambda);
    if (mu2.size() != mu1.size() || Sigma.rows() != mu1.size() || Sigma.cols() != mu1.size()) {
        throw std::invalid_argument("divergence_gaussian_equal_cov: dimension mismatch");
    }
    const auto L = factor(Sigma, "divergence_gaussian_equal_cov: Sigma");
    const Vector diff = mu2 - mu1;
    const double maha2 = diff.dot(L.solve(diff));
    if (lambda == 0.0) return 0.5 * maha2;
    return std::expm1(0.5 * lambda * (lambda + 1.0) * maha2) / lambda;
}

double k_from_eta(double eta, double lambda, const VectorCRef& mu1, const MatrixCRef& Sigma1,
                  KSign sign) {
    require_lambda(lambda);
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw std::invalid_argument("k_from_eta: eta must be finite and >= 0");
    }
    const auto L = factor(Sigma1, "k_from_eta: Sigma1");
    const double q = mu1.dot(L.solve(mu1));
    if (!(q > 0.0)) throw std::domain_error("k_from_eta: mu1^T Sigma1^-1 mu1 is zero");
    const double target =
        lambda == 0.0 ? 2.0 * eta : std::log1p(eta * lambda) / (0.5 * lambda * (lambda + 1.0));
    const double shift = std::sqrt(target / q);
    return sign == KSign::Plus ? 1.0 + shift : 1.0 - shift;
}

EtaEstimate eta_from_ratio_mc(const NominalModel& nominal, const NominalModel& actual,
                              double lambda, Index n, Seed seed) {
    require_lambda(lambda);
    if (nominal.dimension() != actual.dimension()) {
        throw std::invalid_argument("eta_from_ratio_mc: dimension mismatch");
    }
    const Matrix draws = sample(nominal, n, seed);
    std::vector<double> g(static_cast<std::size_t>(n));
    for_each_chunk(n, [&](Index, Index begin, Index end) {
        for (Index i = begin; i < end; ++i) {
            const Vector x = draws.row(i).transpose();
            const double log_ratio = actual.log_density(x) - nominal.log_density(x);
            g[static_cast<std::size_t>(i)] = scalar_G_from_log(log_ratio, lambda);
        }
    });
    EtaEstimate out;
    out.n = n;
    for (double v : g) {
        if (!std::isfinite(v)) {
            out.overflow = true;
            out.estimate = std::numeric_limits<double>::infinity();
            out.std_error = std::numeric_limits<double>::infinity();
            return out;
        }
    }
    const McEstimate mc = summarize(g);
    out.estimate = mc.estimate;
    out.std_error = mc.std_error;
    return out;
}

}  // namespace robtrack
