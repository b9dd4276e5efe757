#include "mlta/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "mlta/errors.hpp"

namespace mlta {

GaussHermite gauss_hermite(int n) {
    if (n < 1) throw ConfigError("quadrature: need at least 1 node");
    // Jacobi matrix of the probabilists' Hermite polynomials: zero diagonal,
    // off-diagonal sqrt(k). Eigenvalues are the nodes; the squared first
    // eigenvector components are the N(0,1) weights.
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double off = std::sqrt(static_cast<double>(k));
        jacobi(k, k - 1) = off;
        jacobi(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    GaussHermite gh;
    gh.nodes = solver.eigenvalues();
    gh.log_weights.resize(n);
    for (int j = 0; j < n; ++j) {
        const double v0 = solver.eigenvectors()(0, j);
        gh.log_weights(j) = 2.0 * std::log(std::abs(v0));
    }
    return gh;
}

double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;  // all -inf stays -inf
    return m + std::log((v.array() - m).exp().sum());
}

}  // namespace mlta
