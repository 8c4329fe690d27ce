#pragma once

#include <vector>

#include "heman/calibration.hpp"

namespace heman {

// Univariate polynomial with ascending-degree coefficients and the interval
// it was fitted over.
struct Polynomial {
    std::vector<double> coeffs;  // coeffs[k] multiplies x^k
    Interval domain;

    int degree() const { return static_cast<int>(coeffs.size()) - 1; }
};

// Number of uniform samples used for the discrete least-squares fit.
constexpr int kFitGridSize = 4097;

// Least-squares ReLU surrogate of the given degree over the domain. The fit
// runs in an orthogonal basis on the normalized interval and is mapped back
// to monomial coefficients.
Polynomial fit_relu_polynomial(const Interval& domain, int degree);

// Multiplicative depth of the power-tree evaluation of a degree-d surrogate.
int poly_depth(int degree);

// Horner evaluation; permitted outside the fit domain.
double eval_poly_reference(const Polynomial& p, double x);

}  // namespace heman
