#include "heman/approx.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace heman {

namespace {

bool valid_degree(int d) { return d == 1 || d == 3 || d == 7; }

// Chebyshev polynomial values T_0..T_deg at t.
void chebyshev_row(double t, int degree, double* row) {
    row[0] = 1.0;
    if (degree >= 1) row[1] = t;
    for (int k = 2; k <= degree; ++k) row[k] = 2.0 * t * row[k - 1] - row[k - 2];
}

// Coefficients of p(a*x + b) given coefficients of p in ascending order.
std::vector<double> affine_substitute(const std::vector<double>& coeffs, double a, double b) {
    std::vector<double> out(coeffs.size(), 0.0);
    // result = sum_k coeffs[k] * (a x + b)^k, expanded by repeated multiply
    std::vector<double> power{1.0};  // (a x + b)^k, ascending in x
    for (std::size_t k = 0; k < coeffs.size(); ++k) {
        for (std::size_t i = 0; i < power.size(); ++i) out[i] += coeffs[k] * power[i];
        std::vector<double> next(power.size() + 1, 0.0);
        for (std::size_t i = 0; i < power.size(); ++i) {
            next[i] += power[i] * b;
            next[i + 1] += power[i] * a;
        }
        power = std::move(next);
    }
    return out;
}

// Monomial coefficients (in t) of a Chebyshev-basis expansion.
std::vector<double> chebyshev_to_monomial(const Eigen::VectorXd& c) {
    int degree = static_cast<int>(c.size()) - 1;
    // T_k as monomial coefficient vectors, built by the recurrence.
    std::vector<std::vector<double>> T(degree + 1);
    T[0] = {1.0};
    if (degree >= 1) T[1] = {0.0, 1.0};
    for (int k = 2; k <= degree; ++k) {
        std::vector<double> t(k + 1, 0.0);
        for (std::size_t i = 0; i < T[k - 1].size(); ++i) t[i + 1] += 2.0 * T[k - 1][i];
        for (std::size_t i = 0; i < T[k - 2].size(); ++i) t[i] -= T[k - 2][i];
        T[k] = std::move(t);
    }
    std::vector<double> out(degree + 1, 0.0);
    for (int k = 0; k <= degree; ++k)
        for (std::size_t i = 0; i < T[k].size(); ++i) out[i] += c[k] * T[k][i];
    return out;
}

}  // namespace

Polynomial fit_relu_polynomial(const Interval& domain, int degree) {
    if (!valid_degree(degree))
        throw ApproxError("ReLU surrogate degree must be 1, 3 or 7, got " +
                          std::to_string(degree));
    if (!(domain.lo < domain.hi) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi))
        throw ApproxError("invalid fit domain");

    const int m = kFitGridSize;
    Eigen::MatrixXd A(m, degree + 1);
    Eigen::VectorXd y(m);
    double half = 0.5 * (domain.hi - domain.lo);
    double mid = 0.5 * (domain.hi + domain.lo);
    std::vector<double> row(degree + 1);
    for (int i = 0; i < m; ++i) {
        double t = -1.0 + 2.0 * i / (m - 1);  // normalized grid point
        double x = mid + half * t;
        chebyshev_row(t, degree, row.data());
        for (int k = 0; k <= degree; ++k) A(i, k) = row[k];
        y(i) = std::max(0.0, x);
    }
    // Normal equations on the Chebyshev basis are well conditioned at deg <= 7.
    Eigen::VectorXd c = (A.transpose() * A).ldlt().solve(A.transpose() * y);

    // Back to monomials in x: p(t) with t = (x - mid)/half.
    std::vector<double> in_t = chebyshev_to_monomial(c);
    Polynomial p;
    p.coeffs = affine_substitute(in_t, 1.0 / half, -mid / half);
    p.coeffs.resize(degree + 1, 0.0);
    p.domain = domain;
    return p;
}

int poly_depth(int degree) {
    if (!valid_degree(degree))
        throw ApproxError("ReLU surrogate degree must be 1, 3 or 7, got " +
                          std::to_string(degree));
    return static_cast<int>(std::ceil(std::log2(degree + 1)));
}

double eval_poly_reference(const Polynomial& p, double x) {
    double acc = 0.0;
    for (std::size_t i = p.coeffs.size(); i-- > 0;) acc = acc * x + p.coeffs[i];
    return acc;
}

}  // namespace heman
