#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mlta/fit.hpp"

namespace mlta {

struct BootstrapSpec {
    int samples = 200;   // S
    std::uint64_t seed = 0;
    double level = 0.95;

    void validate() const;
};

/// Flattened free-parameter vector with stable names: gating rows first,
/// then attractiveness, then slopes.
struct ParameterTable {
    std::vector<std::string> names;
    Eigen::VectorXd values;
};

ParameterTable flatten_params(const MLTAModel& model);

/// N rows drawn uniformly with replacement; each draw carries its
/// incidence and covariate row jointly. Deterministic given the seed.
Dataset resample(const Dataset& data, std::uint64_t seed);

/// Permutes the candidate's groups to minimize the squared attractiveness
/// distance to the reference (exact search over all G! permutations), for
/// D = 1 flips each slope block to positive correlation with the
/// reference, and re-expresses the gating coefficients against the
/// permuted reference group.
MLTAModel align_labels(const MLTAModel& reference, const MLTAModel& candidate);

struct BootstrapResult {
    std::vector<std::string> names;
    Eigen::VectorXd estimate;     // point-estimate parameter values
    Eigen::VectorXd se;
    Eigen::VectorXd lower, upper; // percentile interval at the configured level
    Eigen::MatrixXd replicates;   // S_ok x p, aligned
    Eigen::MatrixXd covariance;   // p x p
    int failed_replicates = 0;
    double level = 0.95;
};

/// V(theta) = (1/S) sum_s (theta_s - mean)(theta_s - mean)'.
Eigen::MatrixXd covariance_from_replicates(const Eigen::MatrixXd& replicates);

/// Nonparametric bootstrap of the full fit: resample rows, refit with the
/// same options, align to the point estimate, aggregate. Replicates that
/// do not converge are excluded (error if more than 20% fail).
BootstrapResult bootstrap_se(const Dataset& data, const ModelConfig& config, const FitOptions& opts,
                             const BootstrapSpec& spec, const FitResult* point_estimate = nullptr);

/// One row per parameter: name, estimate, SE, lower, upper.
void write_bootstrap_csv(std::ostream& out, const BootstrapResult& result);

nlohmann::json bootstrap_json(const BootstrapResult& result, bool include_replicates);

}  // namespace mlta
