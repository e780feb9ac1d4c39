#include "robtrack/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace robtrack {

void LossSpec::validate() const {
    if (smoothed() && (!(epsilon > 0.0) || !std::isfinite(epsilon))) {
        throw std::invalid_argument("loss: epsilon must be finite and > 0");
    }
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Quadratic: return "quadratic";
        case LossKind::SmoothedPosSq: return "l1";
        case LossKind::SmoothedPlus: return "l2";
    }
    return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "quadratic") return LossKind::Quadratic;
    if (name == "l1") return LossKind::SmoothedPosSq;
    if (name == "l2") return LossKind::SmoothedPlus;
    throw std::invalid_argument("unknown loss '" + name + "' (expected quadratic, l1 or l2)");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
    constexpr double kInvSqrt2Pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

namespace {

// Numerically stable logistic 1 / (1 + exp(-z)).
double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

double loss_value(const LossSpec& spec, double x) {
    const double eps = spec.epsilon;
    switch (spec.kind) {
        case LossKind::Quadratic: return x * x;
        case LossKind::SmoothedPosSq: {
            const double z = x / eps;
            const double v = (x * x + eps * eps) * normal_cdf(z) + x * eps * normal_pdf(z);
            return std::max(v, 0.0);
        }
        case LossKind::SmoothedPlus:
            return std::max(x, 0.0) + eps * std::log1p(std::exp(-std::abs(x) / eps));
    }
    return 0.0;
}

double loss_deriv1(const LossSpec& spec, double x) {
    const double eps = spec.epsilon;
    switch (spec.kind) {
        case LossKind::Quadratic: return 2.0 * x;
        case LossKind::SmoothedPosSq: {
            const double z = x / eps;
            return std::max(2.0 * x * normal_cdf(z) + 2.0 * eps * normal_pdf(z), 0.0);
        }
        case LossKind::SmoothedPlus: return logistic(x / eps);
    }
    return 0.0;
}

double loss_deriv2(const LossSpec& spec, double x) {
    const double eps = spec.epsilon;
    switch (spec.kind) {
        case LossKind::Quadratic: return 2.0;
        case LossKind::SmoothedPosSq: return 2.0 * normal_cdf(x / eps);
        case LossKind::SmoothedPlus: {
            const double s = logistic(x / eps);
            const double t = logistic(-x / eps);
            return s * t / eps;
        }
    }
    return 0.0;
}

double exact_loss(const LossSpec& spec, double x) {
    switch (spec.kind) {
        case LossKind::Quadratic: return x * x;
        case LossKind::SmoothedPosSq: return x > 0.0 ? x * x : 0.0;
        case LossKind::SmoothedPlus: return std::max(x, 0.0);
    }
    return 0.0;
}

Payoff payoff_H(const LossSpec& spec, const VectorCRef& u, const VectorCRef& R_row, double B_row) {
    if (u.size() != R_row.size()) throw std::invalid_argument("payoff_H: dimension mismatch");
    const double x = B_row - R_row.dot(u);
    Payoff out;
    out.value = -loss_value(spec, x);
    out.gradient = loss_deriv1(spec, x) * R_row;
    return out;
}

}  // namespace robtrack
