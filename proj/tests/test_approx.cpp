#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "heman/approx.hpp"

using namespace heman;

namespace {

// Independent oracle: solve the same uniform-grid least-squares problem
// directly in the monomial basis with a dense QR factorization.
Polynomial fit_oracle(const Interval& domain, int degree) {
    Eigen::MatrixXd A(kFitGridSize, degree + 1);
    Eigen::VectorXd y(kFitGridSize);
    for (int i = 0; i < kFitGridSize; ++i) {
        double x = domain.lo + (domain.hi - domain.lo) * i / (kFitGridSize - 1);
        double p = 1.0;
        for (int k = 0; k <= degree; ++k) {
            A(i, k) = p;
            p *= x;
        }
        y(i) = std::max(x, 0.0);
    }
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
    Polynomial out;
    out.domain = domain;
    out.coeffs.assign(c.data(), c.data() + degree + 1);
    return out;
}

}  // namespace

// The continuous-least-squares closed forms on [-a,a] are a/4 + x/2 (degree 1)
// and 3a/32 + x/2 + (15/32a)x^2 (degree 3). The discrete grid fit approaches
// them at O(h^2); exact 1e-6 agreement is against the same-grid oracle below.
TEST_CASE("degree-1 fit on [-10,10] approaches the closed form 2.5 + 0.5x") {
    Polynomial p = fit_relu_polynomial({-10, 10}, 1);
    REQUIRE(p.coeffs.size() == 2);
    CHECK(p.coeffs[0] == doctest::Approx(2.5).epsilon(1e-3));
    CHECK(p.coeffs[1] == doctest::Approx(0.5).epsilon(1e-6));
    Polynomial oracle = fit_oracle({-10, 10}, 1);
    for (std::size_t k = 0; k < p.coeffs.size(); ++k)
        CHECK(p.coeffs[k] == doctest::Approx(oracle.coeffs[k]).epsilon(1e-9).scale(1.0));
}

TEST_CASE("degree-3 fit on [-10,10] approaches 0.9375 + 0.5x + 0.046875x^2") {
    Polynomial p = fit_relu_polynomial({-10, 10}, 3);
    REQUIRE(p.coeffs.size() == 4);
    CHECK(p.coeffs[0] == doctest::Approx(0.9375).epsilon(1e-3));
    CHECK(p.coeffs[1] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(p.coeffs[2] == doctest::Approx(0.046875).epsilon(1e-3));
    CHECK(std::abs(p.coeffs[3]) < 1e-6);  // cubic term vanishes on symmetric domains
    Polynomial oracle = fit_oracle({-10, 10}, 3);
    for (std::size_t k = 0; k < p.coeffs.size(); ++k)
        CHECK(p.coeffs[k] == doctest::Approx(oracle.coeffs[k]).epsilon(1e-9).scale(1.0));
}

TEST_CASE("fit agrees with a dense monomial-basis QR oracle on random domains") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> lo_d(-8.0, -0.5), w_d(1.0, 12.0);
    for (int trial = 0; trial < 20; ++trial) {
        Interval domain{lo_d(rng), 0.0};
        domain.hi = domain.lo + w_d(rng);
        for (int degree : {1, 3, 7}) {
            CAPTURE(domain.lo);
            CAPTURE(domain.hi);
            CAPTURE(degree);
            Polynomial got = fit_relu_polynomial(domain, degree);
            Polynomial want = fit_oracle(domain, degree);
            // compare as functions on the domain, not coefficient-wise: high
            // degrees on wide domains are ill-conditioned in monomial form
            for (int i = 0; i <= 64; ++i) {
                double x = domain.lo + domain.width() * i / 64;
                CHECK(eval_poly_reference(got, x) ==
                      doctest::Approx(eval_poly_reference(want, x)).epsilon(1e-7));
            }
        }
    }
}

TEST_CASE("fit is covariant under domain scaling") {
    // relu(sx) = s relu(x): coefficients obey c_k(s*a) = s^(1-k) c_k(a)
    Polynomial base = fit_relu_polynomial({-2, 2}, 3);
    Polynomial scaled = fit_relu_polynomial({-6, 6}, 3);
    for (std::size_t k = 0; k < base.coeffs.size(); ++k)
        CHECK(scaled.coeffs[k] ==
              doctest::Approx(base.coeffs[k] * std::pow(3.0, 1.0 - static_cast<double>(k)))
                  .epsilon(1e-6));
}

TEST_CASE("residual shrinks as degree grows") {
    Interval domain{-4, 4};
    double prev = 1e300;
    for (int degree : {1, 3, 7}) {
        Polynomial p = fit_relu_polynomial(domain, degree);
        double sse = 0;
        for (int i = 0; i < kFitGridSize; ++i) {
            double x = domain.lo + domain.width() * i / (kFitGridSize - 1);
            double r = eval_poly_reference(p, x) - std::max(x, 0.0);
            sse += r * r;
        }
        CHECK(sse < prev);
        prev = sse;
    }
}

TEST_CASE("poly_depth matches the power-tree cost") {
    CHECK(poly_depth(1) == 1);
    CHECK(poly_depth(3) == 2);
    CHECK(poly_depth(7) == 3);
    CHECK_THROWS_AS(poly_depth(2), ApproxError);
}

TEST_CASE("an all-nonnegative domain fits ReLU exactly as the identity") {
    Polynomial p = fit_relu_polynomial({0, 5}, 1);
    CHECK(p.coeffs[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(p.coeffs[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("odd coefficients on symmetric domains: c1 = 1/2, higher odd terms vanish") {
    Polynomial p7 = fit_relu_polynomial({-5, 5}, 7);
    CHECK(p7.coeffs[1] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(std::abs(p7.coeffs[3]) < 1e-6);
    CHECK(std::abs(p7.coeffs[5]) < 1e-6);
    CHECK(std::abs(p7.coeffs[7]) < 1e-6);
}

TEST_CASE("invalid fit requests throw") {
    CHECK_THROWS_AS(fit_relu_polynomial({1, 1}, 3), ApproxError);
    CHECK_THROWS_AS(fit_relu_polynomial({-1, 1}, 0), ApproxError);
    CHECK_THROWS_AS(fit_relu_polynomial({-1, 1}, 4), ApproxError);
    CHECK_THROWS_AS(fit_relu_polynomial({2, -2}, 3), ApproxError);
}
