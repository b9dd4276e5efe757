#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mlta/data.hpp"
#include "mlta/model.hpp"

namespace mlta {

/// A synthetic dataset together with everything that generated it.
struct SimTruth {
    MLTAModel model;
    std::vector<int> z_true;   // 0-based group labels
    Eigen::MatrixXd u_true;    // N x D trait draws
    Dataset dataset;
    std::uint64_t seed = 0;
};

struct QuadratureSpec {
    int nodes = 40;  // per dimension; D <= 2 supported

    void validate() const;
};

/// Draws groups from the gating model, traits from a standard Gaussian,
/// and ties from independent Bernoullis at the connection probabilities.
/// Deterministic given the seed.
SimTruth simulate(const MLTAModel& model, const CovariateDesign& design, std::uint64_t seed);

/// Marginal log-likelihood with the trait integral evaluated by a
/// Gauss-Hermite product rule (exact mixture sum over groups).
double gh_loglik(const Dataset& data, const MLTAModel& model, const QuadratureSpec& spec = {});

/// Exact log-likelihood of the D = 0 model (finite mixture of independent
/// Bernoullis), computed in log space.
double lc_loglik(const Dataset& data, const MLTAModel& model);

/// Exact posterior membership probabilities, trait integral by quadrature.
Eigen::MatrixXd exact_responsibilities(const Dataset& data, const MLTAModel& model,
                                       const QuadratureSpec& spec = {});

struct MonteCarloEstimate {
    double loglik = 0.0;
    double se = 0.0;
};

/// Monte Carlo estimate of the marginal log-likelihood with antithetic
/// trait draws; `draws` counts antithetic pairs per node.
MonteCarloEstimate mc_loglik(const Dataset& data, const MLTAModel& model, int draws,
                             std::uint64_t seed);

/// Writes dataset CSVs, the truth JSON (model, z_true, u_true) and a seed
/// record into `dir`.
void write_sim_truth(const std::string& dir, const SimTruth& truth);

}  // namespace mlta
