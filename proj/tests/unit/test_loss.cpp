#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "robtrack/loss.hpp"

using namespace robtrack;

namespace {

std::vector<double> grid(double eps) {
    std::vector<double> xs;
    for (int i = -50; i <= 50; ++i) xs.push_back(0.1 * eps * i);
    for (int i = -20; i <= 20; ++i) xs.push_back(0.05 * i);
    return xs;
}

double central(const std::function<double(double)>& f, double x) {
    const double h = 1e-6 * std::max(1e-2, std::abs(x));
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

bool close(double fd, double an, double rel) {
    return std::abs(fd - an) <= rel * std::max(std::abs(an), 1e-3);
}

}  // namespace

TEST_CASE("normal cdf and pdf") {
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
    CHECK(normal_cdf(-8.0) == doctest::Approx(6.22096057427178e-16).epsilon(1e-10));
    CHECK(normal_pdf(0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-15));
}

TEST_CASE("loss values at reference points") {
    const double eps = 0.01;
    const LossSpec l1 = LossSpec::smoothed_pos_sq(eps);
    const LossSpec l2 = LossSpec::smoothed_plus(eps);
    CHECK(loss_value(LossSpec::quadratic(), -0.3) == doctest::Approx(0.09));
    CHECK(loss_value(l1, 0.0) == doctest::Approx(eps * eps / 2.0).epsilon(1e-14));
    // large-x asymptote is x^2 + eps^2
    CHECK(loss_value(l1, 10 * eps) == doctest::Approx(101 * eps * eps).epsilon(1e-6));
    CHECK(loss_value(l2, 0.0) == doctest::Approx(eps * std::log(2.0)).epsilon(1e-14));
    CHECK(loss_deriv1(l1, 0.0) == doctest::Approx(2.0 * eps / std::sqrt(2.0 * M_PI)).epsilon(1e-14));
    CHECK(loss_deriv1(l2, 0.0) == 0.5);
    CHECK(loss_deriv1(LossSpec::quadratic(), 0.3) == doctest::Approx(0.6));
    CHECK(loss_deriv2(LossSpec::quadratic(), 0.3) == 2.0);
}

TEST_CASE("derivatives match central differences") {
    for (double eps : {0.01, 0.05}) {
        for (const LossSpec spec :
             {LossSpec::quadratic(), LossSpec::smoothed_pos_sq(eps), LossSpec::smoothed_plus(eps)}) {
            for (double x : grid(eps)) {
                const double d1 = central([&](double v) { return loss_value(spec, v); }, x);
                const double d2 = central([&](double v) { return loss_deriv1(spec, v); }, x);
                CHECK(close(d1, loss_deriv1(spec, x), 1e-6));
                CHECK(close(d2, loss_deriv2(spec, x), 1e-5));
            }
        }
    }
}

TEST_CASE("smoothed losses are convex and one sided") {
    const double eps = 0.01;
    const LossSpec l1 = LossSpec::smoothed_pos_sq(eps);
    const LossSpec l2 = LossSpec::smoothed_plus(eps);
    for (double x : grid(eps)) {
        CHECK(loss_deriv2(l1, x) >= 0.0);
        CHECK(loss_deriv2(l2, x) > 0.0);
        CHECK(loss_value(l1, x) >= 0.0);
        CHECK(loss_value(l2, x) >= 0.0);
        if (x <= -5 * eps) CHECK(loss_value(l1, x) <= eps * eps * 1e-4);
        if (x >= 5 * eps) {
            const double asym = x * x + eps * eps;
            CHECK(std::abs(loss_value(l1, x) - asym) / asym <= 1e-5);
        }
    }
}

TEST_CASE("extreme arguments stay finite") {
    for (const LossSpec spec : {LossSpec::smoothed_pos_sq(0.01), LossSpec::smoothed_plus(0.01)}) {
        for (double x : {-1e3, -50.0, 50.0, 1e3}) {
            CHECK(std::isfinite(loss_value(spec, x)));
            CHECK(std::isfinite(loss_deriv1(spec, x)));
            CHECK(std::isfinite(loss_deriv2(spec, x)));
        }
    }
    CHECK(loss_value(LossSpec::smoothed_plus(0.01), 1e3) == doctest::Approx(1e3));
}

TEST_CASE("exact losses") {
    CHECK(exact_loss(LossSpec::quadratic(), -0.2) == doctest::Approx(0.04));
    CHECK(exact_loss(LossSpec::smoothed_pos_sq(), -0.2) == 0.0);
    CHECK(exact_loss(LossSpec::smoothed_pos_sq(), 0.2) == doctest::Approx(0.04));
    CHECK(exact_loss(LossSpec::smoothed_plus(), 0.2) == doctest::Approx(0.2));
    CHECK(exact_loss(LossSpec::smoothed_plus(), -0.2) == 0.0);
}

TEST_CASE("spec parsing and validation") {
    CHECK(parse_loss_kind("l1") == LossKind::SmoothedPosSq);
    CHECK(to_string(LossKind::SmoothedPlus) == "l2");
    CHECK_THROWS(parse_loss_kind("huber"));
    CHECK_THROWS(LossSpec::smoothed_pos_sq(0.0).validate());
    CHECK_NOTHROW(LossSpec{LossKind::Quadratic, 0.0}.validate());
}

TEST_CASE("payoff") {
    SUBCASE("perfect tracking") {
        const Vector u = Vector::Constant(2, 0.5);
        Vector R(2);
        R << 1.01, 1.03;
        CHECK(payoff_H(LossSpec::quadratic(), u, R, 1.02).value == doctest::Approx(0.0));
        CHECK(payoff_H(LossSpec::smoothed_pos_sq(0.01), u, R, 1.02).value ==
              doctest::Approx(-0.5e-4).epsilon(1e-10));
    }
    SUBCASE("one asset by hand") {
        const Payoff p = payoff_H(LossSpec::quadratic(), Vector::Ones(1), Vector::Constant(1, 1.01), 1.02);
        CHECK(p.value == doctest::Approx(-1e-4));
        CHECK(p.gradient(0) == doctest::Approx(0.0202));
    }
    SUBCASE("non-positive payoff") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> nd(0.0, 0.05);
        for (int rep = 0; rep < 100; ++rep) {
            Vector u(3), R(3);
            for (Index i = 0; i < 3; ++i) {
                u(i) = 1.0 / 3.0 + nd(rng);
                R(i) = 1.0 + nd(rng);
            }
            for (const LossSpec spec : {LossSpec::quadratic(), LossSpec::smoothed_pos_sq(), LossSpec::smoothed_plus()}) {
                CHECK(payoff_H(spec, u, R, 1.0 + nd(rng)).value <= 0.0);
            }
        }
    }
    SUBCASE("gradient matches central differences") {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> nd(0.0, 0.03);
        double worst = 0.0;
        for (int rep = 0; rep < 200; ++rep) {
            const Index d = 4;
            Vector u(d), R(d);
            for (Index i = 0; i < d; ++i) {
                u(i) = 0.25 + 10.0 * nd(rng);
                R(i) = 1.0 + nd(rng);
            }
            const double B = 1.0 + nd(rng);
            for (const LossSpec spec : {LossSpec::quadratic(), LossSpec::smoothed_pos_sq(), LossSpec::smoothed_plus()}) {
                const Payoff p = payoff_H(spec, u, R, B);
                for (Index i = 0; i < d; ++i) {
                    const double h = std::sqrt(2.2e-16) * std::max(1.0, std::abs(u(i)));
                    Vector up = u, dn = u;
                    up(i) += h;
                    dn(i) -= h;
                    const double fd = (payoff_H(spec, up, R, B).value - payoff_H(spec, dn, R, B).value) / (2 * h);
                    const double err = std::abs(fd - p.gradient(i)) / std::max(std::abs(p.gradient(i)), 1e-3);
                    worst = std::max(worst, err);
                }
            }
        }
        CHECK(worst <= 1e-6);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS(payoff_H(LossSpec::quadratic(), Vector::Ones(2), Vector::Ones(3), 1.0));
    }
}
