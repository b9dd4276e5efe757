#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mlta/data.hpp"
#include "mlta/model.hpp"

namespace mlta {

/// Curvature of the quadratic-in-the-exponent bound on the logistic
/// likelihood: (sigmoid(xi) - 1/2) / (2 xi), extended evenly, with the
/// analytic limit 1/8 below xi = 1e-6.
double lambda_jj(double xi);

struct NewtonOptions {
    int max_steps = 100;
    int max_halvings = 30;
};

struct FitOptions {
    double tol = 1e-6;      // relative ELBO change
    int max_outer = 1000;
    int inner_sweeps = 3;   // variational sweeps per outer iteration
    bool inner_to_convergence = false;  // sweep until xi stabilizes instead
    int starts = 10;
    std::uint64_t seed = 0;
    NewtonOptions newton;
    int jobs = 1;

    void validate() const;
};

/// Variational quantities of one fit: responsibilities, per-(node, group,
/// item) bound tightness parameters xi, and the per-(node, group) Gaussian
/// trait posteriors. mu rows hold the posterior mean; sigma rows hold the
/// D x D posterior covariance flattened row-major. log_evidence caches
/// log B_ig, the bound's closed-form evidence, for the stored (xi, b, w).
struct VariationalState {
    Eigen::MatrixXd z_hat;               // N x G
    std::vector<Eigen::MatrixXd> xi;     // G blocks, N x R, nonnegative
    std::vector<Eigen::MatrixXd> mu;     // G blocks, N x D
    std::vector<Eigen::MatrixXd> sigma;  // G blocks, N x D*D
    Eigen::MatrixXd log_evidence;        // N x G

    int n_rows() const { return static_cast<int>(z_hat.rows()); }
    int n_groups() const { return static_cast<int>(z_hat.cols()); }
};

struct FitDiagnostics {
    int cap_hits = 0;               // |b| or |w| clamped at the separation guard
    bool gating_newton_capped = false;
    int failed_starts = 0;
    std::vector<std::string> notes;
};

struct FitResult {
    MLTAModel model;
    VariationalState state;
    std::vector<double> elbo_trace;
    double final_elbo = 0.0;
    double bic = 0.0;
    bool converged = false;
    int start_index = -1;
    FitDiagnostics diagnostics;
};

struct TraitPosterior {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

/// Gaussian posterior of the latent trait for one (node, group) under the
/// xi-bound: Sigma = (I + 2 sum_k lambda(xi_k) w_k w_k')^{-1},
/// mu = Sigma * sum_k [(y_k - 1/2) - 2 lambda(xi_k) b_k] w_k.
TraitPosterior update_trait_posterior(const Eigen::VectorXd& y, const Eigen::VectorXd& b_g,
                                      const Eigen::MatrixXd& w_g, const Eigen::VectorXd& xi_ig);

/// Optimal bound tightness given the trait posterior:
/// xi_k = sqrt(w_k'(Sigma + mu mu')w_k + 2 b_k w_k'mu + b_k^2).
Eigen::VectorXd update_xi(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                          const Eigen::VectorXd& b_g, const Eigen::MatrixXd& w_g);

/// Weighted least-squares update of (b, w) from the current
/// responsibilities and trait moments. Moments must be current for the
/// stored xi. Caps |b| and |w| entries at 30 (separation guard).
void update_item_params(const Eigen::MatrixXi& Y, const VariationalState& state, Variant variant,
                        ItemParams* items, FitDiagnostics* diag);

/// Weighted multinomial logit solved by Newton-Raphson with step-halving
/// until the gradient sup-norm drops below 1e-8. `warm` seeds the
/// iteration (zero otherwise). Rejects rank-deficient X.
GatingParams update_gating(const Eigen::MatrixXd& X, const Eigen::MatrixXd& z_hat,
                           const NewtonOptions& opts = {}, const GatingParams* warm = nullptr,
                           bool* capped = nullptr);

/// Recomputes trait posteriors and log-evidence from the stored xi and the
/// model's item parameters.
void refresh_trait_posteriors(const Eigen::MatrixXi& Y, const MLTAModel& model, VariationalState* state);

/// Posterior membership probabilities z_ig ∝ eta_g(x_i) B_ig, normalized
/// in log space. Refreshes the state caches first.
Eigen::MatrixXd e_step_responsibilities(const Eigen::MatrixXi& Y, const Eigen::MatrixXd& X,
                                        const MLTAModel& model, VariationalState* state);

/// Variational lower bound on the marginal log-likelihood:
/// sum_i log sum_g eta_g(x_i) B_ig. Refreshes the state caches first.
double elbo(const Eigen::MatrixXi& Y, const Eigen::MatrixXd& X, const MLTAModel& model,
            VariationalState* state);

/// Full double-EM fit with multi-start. Deterministic given
/// (data, config, opts.seed); independent starts run on up to opts.jobs
/// threads without affecting the result.
FitResult fit(const Dataset& data, const ModelConfig& config, const FitOptions& opts);

/// Rebuilds the variational state at fixed parameters: iterates the inner
/// (moments, xi) updates to convergence, then one E-step. Used to evaluate
/// a stored model on a dataset.
FitResult reconstruct_fit(const Dataset& data, const MLTAModel& model, int max_sweeps = 200,
                          double xi_tol = 1e-12);

nlohmann::json fit_result_json(const FitResult& fit);

}  // namespace mlta
