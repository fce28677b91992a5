#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "gapspin/core.hpp"

namespace gapspin {

// Quadrature rule on the reference tetrahedron, in barycentric coordinates.
// Weights sum to 1; the integral over a physical tet is V * sum(w_i f(x_i)).
struct QuadratureRule {
    Eigen::Matrix<double, 4, Eigen::Dynamic> bary;
    VecX weights;
    int order = 0;  // exact for total polynomial degree <= order

    Eigen::Index size() const { return weights.size(); }
};

namespace detail {

// Gauss nodes/weights for the Jacobi weight (1-x)^alpha on [-1,1]
// (beta = 0), via Golub-Welsch on the symmetric recurrence matrix.
inline void gauss_jacobi(int n, double alpha, VecX& nodes, VecX& weights) {
    const double beta = 0.0;
    VecX diag(n), sub(n > 1 ? n - 1 : 0);
    for (int k = 0; k < n; ++k) {
        double s = 2.0 * k + alpha + beta;
        diag[k] = (k == 0 && alpha + beta + 2.0 != 0.0)
                      ? (beta - alpha) / (alpha + beta + 2.0)
                      : (beta * beta - alpha * alpha) / (s * (s + 2.0));
    }
    for (int k = 1; k < n; ++k) {
        double s = 2.0 * k + alpha + beta;
        double num = 4.0 * k * (k + alpha) * (k + beta) * (k + alpha + beta);
        double den = s * s * (s + 1.0) * (s - 1.0);
        sub[k - 1] = std::sqrt(num / den);
    }
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 0; k < n; ++k) J(k, k) = diag[k];
    for (int k = 0; k + 1 < n; ++k) J(k, k + 1) = J(k + 1, k) = sub[k];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    // mu0 = int_{-1}^{1} (1-x)^alpha dx = 2^{alpha+1}/(alpha+1)
    double mu0 = std::pow(2.0, alpha + 1.0) / (alpha + 1.0);
    nodes = es.eigenvalues();
    weights.resize(n);
    for (int k = 0; k < n; ++k) {
        double v = es.eigenvectors()(0, k);
        weights[k] = mu0 * v * v;
    }
}

// Same weight on [0,1]: u = (1+x)/2, (1-u)^alpha du = (1-x)^alpha 2^{-alpha-1} dx.
inline void gauss_jacobi01(int n, double alpha, VecX& nodes, VecX& weights) {
    gauss_jacobi(n, alpha, nodes, weights);
    double scale = std::pow(2.0, -alpha - 1.0);
    for (int k = 0; k < n; ++k) {
        nodes[k] = 0.5 * (1.0 + nodes[k]);
        weights[k] *= scale;
    }
}

}  // namespace detail

// Conical-product rule: n points per axis, exact for total degree 2n-1.
// Collapsed map x = u, y = v(1-u), z = w(1-u)(1-v); the Jacobian
// (1-u)^2 (1-v) is absorbed into the Jacobi weights.
inline QuadratureRule tet_rule_conical(int points_per_axis) {
    int n = points_per_axis;
    VecX un, uw, vn, vw, wn, ww;
    detail::gauss_jacobi01(n, 2.0, un, uw);
    detail::gauss_jacobi01(n, 1.0, vn, vw);
    detail::gauss_jacobi01(n, 0.0, wn, ww);
    QuadratureRule rule;
    rule.order = 2 * n - 1;
    rule.bary.resize(4, n * n * n);
    rule.weights.resize(n * n * n);
    Eigen::Index q = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k, ++q) {
                double x = un[i];
                double y = vn[j] * (1.0 - un[i]);
                double z = wn[k] * (1.0 - un[i]) * (1.0 - vn[j]);
                rule.bary(0, q) = 1.0 - x - y - z;
                rule.bary(1, q) = x;
                rule.bary(2, q) = y;
                rule.bary(3, q) = z;
                // Simplex volume is 1/6; normalize weights to sum to 1.
                rule.weights[q] = uw[i] * vw[j] * ww[k] * 6.0;
            }
    return rule;
}

// Rule exact for total degree >= order. Orders 1 and 2 are the classical
// 1-point and 4-point rules; higher orders use the conical product.
inline QuadratureRule tet_rule(int order) {
    if (order < 1) throw ConfigError("quadrature order must be >= 1");
    QuadratureRule rule;
    rule.order = order;
    if (order == 1) {
        rule.bary.resize(4, 1);
        rule.bary.col(0).setConstant(0.25);
        rule.weights = VecX::Constant(1, 1.0);
        return rule;
    }
    if (order == 2) {
        const double a = 0.58541019662496845;  // (5+3*sqrt(5))/20
        const double b = 0.13819660112501051;  // (5-sqrt(5))/20
        rule.bary.resize(4, 4);
        rule.weights = VecX::Constant(4, 0.25);
        for (int q = 0; q < 4; ++q) {
            for (int i = 0; i < 4; ++i) rule.bary(i, q) = (i == q) ? a : b;
        }
        return rule;
    }
    return tet_rule_conical((order + 2) / 2);
}

// Exact integral of a barycentric monomial over a tet of volume V:
// int l0^a l1^b l2^c l3^d dV = 6V a!b!c!d!/(a+b+c+d+3)!.
// Reference oracle for quadrature tests.
inline double barycentric_monomial_integral(int a, int b, int c, int d, double volume) {
    auto fact = [](int k) {
        double f = 1.0;
        for (int i = 2; i <= k; ++i) f *= i;
        return f;
    };
    return 6.0 * volume * fact(a) * fact(b) * fact(c) * fact(d) / fact(a + b + c + d + 3);
}

}  // namespace gapspin
