#pragma once

#include <string>

#include "robtrack/types.hpp"

namespace robtrack {

enum class LossKind { Quadratic, SmoothedPosSq, SmoothedPlus };

/// Tracking loss applied to the shortfall x = B - R^T u.
///   Quadratic      x^2
///   SmoothedPosSq  (x^2 + eps^2) Phi(x/eps) + x eps phi(x/eps), a smooth [x]_+^2
///   SmoothedPlus   x + eps log(1 + exp(-x/eps)), a smooth [x]_+
struct LossSpec {
    LossKind kind = LossKind::SmoothedPosSq;
    double epsilon = 0.01;

    static LossSpec quadratic() { return {LossKind::Quadratic, 0.01}; }
    static LossSpec smoothed_pos_sq(double eps = 0.01) { return {LossKind::SmoothedPosSq, eps}; }
    static LossSpec smoothed_plus(double eps = 0.01) { return {LossKind::SmoothedPlus, eps}; }

    bool smoothed() const { return kind != LossKind::Quadratic; }
    void validate() const;
};

/// "quadratic", "l1" or "l2".
std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

double normal_cdf(double x);
double normal_pdf(double x);

double loss_value(const LossSpec& spec, double x);
double loss_deriv1(const LossSpec& spec, double x);
double loss_deriv2(const LossSpec& spec, double x);

/// The unsmoothed loss the spec approximates: x^2, [x]_+^2 or [x]_+.
double exact_loss(const LossSpec& spec, double x);

struct Payoff {
    double value = 0.0;
    Vector gradient;
};

/// H(u) = -loss(B - R^T u) and its gradient loss'(B - R^T u) R.
Payoff payoff_H(const LossSpec& spec, const VectorCRef& u, const VectorCRef& R_row, double B_row);

}  // namespace robtrack
