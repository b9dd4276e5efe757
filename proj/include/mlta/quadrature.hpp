#pragma once

#include <Eigen/Dense>

namespace mlta {

/// Gauss-Hermite rule rescaled to the standard normal weight:
/// integral of f against N(0,1) ~= sum_j exp(log_weights[j]) * f(nodes[j]).
struct GaussHermite {
    Eigen::VectorXd nodes;
    Eigen::VectorXd log_weights;
};

/// Nodes and weights via Golub-Welsch on the Jacobi matrix of the
/// probabilists' Hermite polynomials.
GaussHermite gauss_hermite(int n);

/// log(sum(exp(v))) with max-subtraction.
double log_sum_exp(const Eigen::VectorXd& v);

}  // namespace mlta
