#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mlta {

/// Whether the latent-trait slopes vary by group or are shared across all
/// groups.
enum class Variant { Unconstrained, Constrained };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
    int groups = 1;      // G >= 1
    int trait_dim = 0;   // D >= 0; at D == 0 the variant is irrelevant
    Variant variant = Variant::Unconstrained;

    void validate() const;
};

/// Multinomial-logit coefficients of the prior membership model. Group 1
/// is the reference; row g-2 holds the coefficients of group g for
/// g = 2..G. Empty when G == 1.
struct GatingParams {
    Eigen::MatrixXd beta;  // (G-1) x (J+1)
};

/// Per-group, per-item response parameters: attractiveness intercepts b
/// and latent-trait slopes w.
struct ItemParams {
    Eigen::MatrixXd b;               // G x R
    std::vector<Eigen::MatrixXd> w;  // G blocks of R x D, or 1 shared block; empty when D == 0

    /// Slope block of group g (the shared block under the constrained variant).
    const Eigen::MatrixXd& slopes(int g) const {
        return w.size() == 1 ? w.front() : w[static_cast<std::size_t>(g)];
    }
    Eigen::MatrixXd& slopes(int g) {
        return w.size() == 1 ? w.front() : w[static_cast<std::size_t>(g)];
    }
};

struct MLTAModel {
    ModelConfig config;
    GatingParams gating;
    ItemParams items;
    std::vector<std::string> skills;      // length R
    std::vector<std::string> covariates;  // length J+1, first "intercept"

    int n_items() const { return static_cast<int>(skills.size()); }
    int n_covariate_cols() const { return static_cast<int>(covariates.size()); }

    /// Checks dimensional consistency among config, gating and items.
    void validate() const;
};

/// Numerically stable logistic function.
double sigmoid(double x);
/// log(sigmoid(x)) without overflow for large |x|.
double log_sigmoid(double x);
double logit(double p);

/// Tie probability of one (group, item) pair at trait position u:
/// sigmoid(b + w'u).
double connection_prob(double b, const Eigen::VectorXd& w, const Eigen::VectorXd& u);

/// Prior membership probabilities at covariate row x (first entry 1).
/// Computed in log space with max-subtraction; rows sum to one.
Eigen::VectorXd gating_probs(const Eigen::VectorXd& x, const GatingParams& gating);

/// Log prior membership probabilities for every row of X (N x G).
Eigen::MatrixXd gating_log_probs(const Eigen::MatrixXd& X, const GatingParams& gating);

/// Number of free parameters: (G-1)(J+1) gating + G*R intercepts + slopes,
/// where slopes = G*R*D (unconstrained) or R*D (constrained), 0 when D = 0.
/// `n_covariates` is J, the covariate count excluding the intercept.
int param_count(const ModelConfig& config, int n_covariates, int n_items);

/// Bayesian Information Criterion: -2*loglik + p*ln(N).
double bic(double loglik, int p, int n);

nlohmann::json model_to_json(const MLTAModel& model);
MLTAModel model_from_json(const nlohmann::json& j);

}  // namespace mlta
