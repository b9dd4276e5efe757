#include "mlta/fit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mlta/errors.hpp"
#include "mlta/parallel.hpp"
#include "mlta/quadrature.hpp"
#include "mlta/rng.hpp"

namespace mlta {

namespace {

constexpr double kParamCap = 30.0;
constexpr double kLambdaEps = 1e-6;
constexpr double kGradTol = 1e-8;
constexpr double kElboTieTol = 1e-10;

// Posterior moments and bound evidence for one (node, group):
//   P      = I + 2 sum_k lambda_k w_k w_k'
//   r      = sum_k [(y_k - 1/2) - 2 lambda_k b_k] w_k
//   mu     = P^{-1} r,  Sigma = P^{-1}
//   log B  = sum_k [log sig(xi_k) - xi_k/2 - lambda_k (b_k^2 - xi_k^2)
//            + (y_k - 1/2) b_k] + (1/2) log det Sigma + (1/2) mu'r
// At D = 0 only the item sum remains.
struct MomentWork {
    Eigen::MatrixXd precision;
    Eigen::VectorXd linear;
    Eigen::MatrixXd sigma;
    Eigen::VectorXd mu;
    Eigen::LLT<Eigen::MatrixXd> llt;

    explicit MomentWork(int d)
        : precision(d, d), linear(d), sigma(d, d), mu(d), llt(d) {}
};

template <typename YRow, typename XiRow>
double trait_posterior_one(const YRow& y, const Eigen::RowVectorXd& b, const Eigen::MatrixXd* w,
                           const XiRow& xi, MomentWork* work) {
    const int r = static_cast<int>(b.size());
    const int d = w == nullptr ? 0 : static_cast<int>(w->cols());
    double log_b = 0.0;
    if (d == 0) {
        for (int k = 0; k < r; ++k) {
            const double x = xi(k);
            const double lam = lambda_jj(x);
            const double yk = y(k) - 0.5;
            log_b += log_sigmoid(x) - 0.5 * x - lam * (b(k) * b(k) - x * x) + yk * b(k);
        }
        return log_b;
    }
    work->precision.setIdentity(d, d);
    work->linear.setZero(d);
    for (int k = 0; k < r; ++k) {
        const double x = xi(k);
        const double lam = lambda_jj(x);
        const double yk = y(k) - 0.5;
        work->precision.noalias() += (2.0 * lam) * (w->row(k).transpose() * w->row(k));
        work->linear.noalias() += (yk - 2.0 * lam * b(k)) * w->row(k).transpose();
        log_b += log_sigmoid(x) - 0.5 * x - lam * (b(k) * b(k) - x * x) + yk * b(k);
    }
    work->llt.compute(work->precision);
    if (work->llt.info() != Eigen::Success) {
        throw NumericalError("trait posterior: precision matrix not positive definite");
    }
    work->sigma = work->llt.solve(Eigen::MatrixXd::Identity(d, d));
    work->mu = work->llt.solve(work->linear);
    double log_det_sigma = 0.0;
    for (int j = 0; j < d; ++j) log_det_sigma -= 2.0 * std::log(work->llt.matrixLLT()(j, j));
    log_b += 0.5 * log_det_sigma + 0.5 * work->mu.dot(work->linear);
    if (!std::isfinite(log_b)) throw NumericalError("trait posterior: non-finite evidence");
    return log_b;
}

// Solves A x = rhs for a PSD system; adds one ridge jitter on failure.
Eigen::VectorXd solve_normal_equations(Eigen::MatrixXd A, const Eigen::VectorXd& rhs,
                                       const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
        Eigen::VectorXd x = llt.solve(rhs);
        if (x.allFinite()) return x;
    }
    A.diagonal().array() += 1e-8;
    llt.compute(A);
    if (llt.info() == Eigen::Success) {
        Eigen::VectorXd x = llt.solve(rhs);
        if (x.allFinite()) return x;
    }
    throw NumericalError(std::string(what) + ": singular normal matrix");
}

double cap_entry(double v, int* hits) {
    if (v > kParamCap) {
        ++*hits;
        return kParamCap;
    }
    if (v < -kParamCap) {
        ++*hits;
        return -kParamCap;
    }
    return v;
}

double gating_objective(const Eigen::MatrixXd& X, const Eigen::MatrixXd& z,
                        const GatingParams& gating) {
    const Eigen::MatrixXd lg = gating_log_probs(X, gating);
    return (z.array() * lg.array()).sum();
}

std::string collinear_column_message(const Eigen::MatrixXd& X) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    const int rank = static_cast<int>(qr.rank());
    const int p = static_cast<int>(X.cols());
    std::ostringstream msg;
    msg << "design matrix is rank deficient (rank " << rank << " of " << p
        << "); collinear columns (0-based):";
    const auto perm = qr.colsPermutation().indices();
    for (int j = rank; j < p; ++j) msg << ' ' << perm(j);
    return msg.str();
}

}  // namespace

double lambda_jj(double xi) {
    const double x = std::abs(xi);
    if (x <= kLambdaEps) return 0.125;
    return (sigmoid(x) - 0.5) / (2.0 * x);
}

void FitOptions::validate() const {
    if (!(tol > 0.0)) throw ConfigError("tol must be > 0");
    if (starts < 1) throw ConfigError("starts must be >= 1");
    if (max_outer < 1) throw ConfigError("max_outer must be >= 1");
    if (inner_sweeps < 1) throw ConfigError("inner_sweeps must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

TraitPosterior update_trait_posterior(const Eigen::VectorXd& y, const Eigen::VectorXd& b_g,
                                      const Eigen::MatrixXd& w_g, const Eigen::VectorXd& xi_ig) {
    const int d = static_cast<int>(w_g.cols());
    if (d < 1) throw ConfigError("update_trait_posterior: needs trait_dim >= 1");
    MomentWork work(d);
    const Eigen::RowVectorXd b = b_g.transpose();
    trait_posterior_one(y, b, &w_g, xi_ig, &work);
    return {work.mu, work.sigma};
}

Eigen::VectorXd update_xi(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                          const Eigen::VectorXd& b_g, const Eigen::MatrixXd& w_g) {
    const int r = static_cast<int>(b_g.size());
    const int d = static_cast<int>(mu.size());
    Eigen::VectorXd xi(r);
    Eigen::MatrixXd second = sigma + mu * mu.transpose();
    for (int k = 0; k < r; ++k) {
        double radicand = b_g(k) * b_g(k);
        if (d > 0) {
            const Eigen::RowVectorXd wk = w_g.row(k);
            radicand += wk * second * wk.transpose() + 2.0 * b_g(k) * wk.dot(mu);
        }
        if (radicand < -1e-12) throw NumericalError("update_xi: negative radicand (corrupt state)");
        xi(k) = std::sqrt(std::max(radicand, 0.0));
    }
    return xi;
}

void refresh_trait_posteriors(const Eigen::MatrixXi& Y, const MLTAModel& model,
                              VariationalState* state) {
    const int n = static_cast<int>(Y.rows());
    const int g_count = model.config.groups;
    const int d = model.config.trait_dim;
    MomentWork work(std::max(d, 1));
    if (state->log_evidence.rows() != n || state->log_evidence.cols() != g_count) {
        state->log_evidence.resize(n, g_count);
    }
    for (int g = 0; g < g_count; ++g) {
        const Eigen::MatrixXd* wg = d > 0 ? &model.items.slopes(g) : nullptr;
        const Eigen::RowVectorXd b = model.items.b.row(g);
        auto& xi_g = state->xi[static_cast<std::size_t>(g)];
        auto& mu_g = state->mu[static_cast<std::size_t>(g)];
        auto& sigma_g = state->sigma[static_cast<std::size_t>(g)];
        for (int i = 0; i < n; ++i) {
            const double log_b = trait_posterior_one(Y.row(i).cast<double>(), b, wg, xi_g.row(i), &work);
            state->log_evidence(i, g) = log_b;
            if (d > 0) {
                mu_g.row(i) = work.mu.transpose();
                for (int a = 0; a < d; ++a)
                    for (int c = 0; c < d; ++c) sigma_g(i, a * d + c) = work.sigma(a, c);
            }
        }
    }
}

void update_item_params(const Eigen::MatrixXi& Y, const VariationalState& state, Variant variant,
                        ItemParams* items, FitDiagnostics* diag) {
    const int n = static_cast<int>(Y.rows());
    const int r = static_cast<int>(Y.cols());
    const int g_count = state.n_groups();
    const int d = items->w.empty() ? 0 : static_cast<int>(items->w.front().cols());
    const bool pooled_slopes = variant == Variant::Constrained && d > 0 && g_count > 1;
    int cap_hits = 0;

    // Per-(i, g) second moment of (1, u), flattened row-major.
    const int m = d + 1;
    auto second_moment_rows = [&](int g) {
        Eigen::MatrixXd rows(n, m * m);
        const auto& mu_g = state.mu[static_cast<std::size_t>(g)];
        const auto& sigma_g = state.sigma[static_cast<std::size_t>(g)];
        for (int i = 0; i < n; ++i) {
            rows(i, 0) = 1.0;
            for (int a = 0; a < d; ++a) {
                rows(i, a + 1) = mu_g(i, a);
                rows(i, (a + 1) * m) = mu_g(i, a);
                for (int c = 0; c < d; ++c) {
                    rows(i, (a + 1) * m + c + 1) = sigma_g(i, a * d + c) + mu_g(i, a) * mu_g(i, c);
                }
            }
        }
        return rows;
    };

    if (!pooled_slopes) {
        Eigen::MatrixXd a(m, m);
        Eigen::VectorXd rhs(m);
        for (int g = 0; g < g_count; ++g) {
            const Eigen::MatrixXd et = second_moment_rows(g);
            const auto& xi_g = state.xi[static_cast<std::size_t>(g)];
            for (int k = 0; k < r; ++k) {
                a.setZero();
                rhs.setZero();
                for (int i = 0; i < n; ++i) {
                    const double zw = state.z_hat(i, g);
                    const double c = 2.0 * zw * lambda_jj(xi_g(i, k));
                    const double yk = Y(i, k) - 0.5;
                    for (int p = 0; p < m; ++p) {
                        rhs(p) += zw * yk * et(i, p);  // first block row of the moment = (1, mu')
                        for (int q = 0; q < m; ++q) a(p, q) += c * et(i, p * m + q);
                    }
                }
                const Eigen::VectorXd sol = solve_normal_equations(a, rhs, "update_item_params");
                items->b(g, k) = cap_entry(sol(0), &cap_hits);
                if (d > 0) {
                    for (int dd = 0; dd < d; ++dd) {
                        items->slopes(g)(k, dd) = cap_entry(sol(dd + 1), &cap_hits);
                    }
                }
            }
        }
    } else {
        // Shared slopes: per item, solve jointly for (b_1k..b_Gk, w_k); the
        // slope block pools the weighted normal equations over groups.
        const int dim = g_count + d;
        Eigen::MatrixXd a(dim, dim);
        Eigen::VectorXd rhs(dim);
        std::vector<Eigen::MatrixXd> et;
        et.reserve(static_cast<std::size_t>(g_count));
        for (int g = 0; g < g_count; ++g) et.push_back(second_moment_rows(g));
        for (int k = 0; k < r; ++k) {
            a.setZero();
            rhs.setZero();
            for (int g = 0; g < g_count; ++g) {
                const auto& xi_g = state.xi[static_cast<std::size_t>(g)];
                const auto& et_g = et[static_cast<std::size_t>(g)];
                for (int i = 0; i < n; ++i) {
                    const double zw = state.z_hat(i, g);
                    const double c = 2.0 * zw * lambda_jj(xi_g(i, k));
                    const double yk = Y(i, k) - 0.5;
                    a(g, g) += c;
                    rhs(g) += zw * yk;
                    for (int p = 0; p < d; ++p) {
                        a(g, g_count + p) += c * et_g(i, p + 1);
                        a(g_count + p, g) += c * et_g(i, p + 1);
                        rhs(g_count + p) += zw * yk * et_g(i, p + 1);
                        for (int q = 0; q < d; ++q) {
                            a(g_count + p, g_count + q) += c * et_g(i, (p + 1) * m + q + 1);
                        }
                    }
                }
            }
            const Eigen::VectorXd sol = solve_normal_equations(a, rhs, "update_item_params");
            for (int g = 0; g < g_count; ++g) items->b(g, k) = cap_entry(sol(g), &cap_hits);
            for (int dd = 0; dd < d; ++dd) {
                items->w.front()(k, dd) = cap_entry(sol(g_count + dd), &cap_hits);
            }
        }
    }
    if (diag != nullptr) diag->cap_hits += cap_hits;
}

GatingParams update_gating(const Eigen::MatrixXd& X, const Eigen::MatrixXd& z_hat,
                           const NewtonOptions& opts, const GatingParams* warm, bool* capped) {
    const int n = static_cast<int>(X.rows());
    const int p = static_cast<int>(X.cols());
    const int g_count = static_cast<int>(z_hat.cols());
    if (g_count < 2) throw ConfigError("update_gating: needs G >= 2");
    if (n != z_hat.rows()) throw ConfigError("update_gating: row mismatch");
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (static_cast<int>(qr.rank()) < p) throw DataError(collinear_column_message(X));
    }

    GatingParams gating;
    if (warm != nullptr && warm->beta.rows() == g_count - 1 && warm->beta.cols() == p) {
        gating.beta = warm->beta;
    } else {
        gating.beta = Eigen::MatrixXd::Zero(g_count - 1, p);
    }
    const int m = (g_count - 1) * p;
    double obj = gating_objective(X, z_hat, gating);
    bool hit_cap = true;

    for (int step = 0; step < opts.max_steps; ++step) {
        const Eigen::MatrixXd eta = gating_log_probs(X, gating).array().exp();
        Eigen::VectorXd grad(m);
        for (int g = 1; g < g_count; ++g) {
            grad.segment((g - 1) * p, p) = X.transpose() * (z_hat.col(g) - eta.col(g));
        }
        if (grad.lpNorm<Eigen::Infinity>() < kGradTol) {
            hit_cap = false;
            break;
        }
        Eigen::MatrixXd neg_hessian(m, m);
        for (int g = 1; g < g_count; ++g) {
            for (int h = g; h < g_count; ++h) {
                Eigen::VectorXd wv = -(eta.col(g).array() * eta.col(h).array());
                if (g == h) wv += eta.col(g);
                const Eigen::MatrixXd block = X.transpose() * wv.asDiagonal() * X;
                neg_hessian.block((g - 1) * p, (h - 1) * p, p, p) = block;
                if (h != g) neg_hessian.block((h - 1) * p, (g - 1) * p, p, p) = block.transpose();
            }
        }
        Eigen::VectorXd direction = solve_normal_equations(neg_hessian, grad, "update_gating");

        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving <= opts.max_halvings; ++halving) {
            GatingParams cand = gating;
            for (int g = 1; g < g_count; ++g) {
                cand.beta.row(g - 1) += t * direction.segment((g - 1) * p, p).transpose();
            }
            const double cand_obj = gating_objective(X, z_hat, cand);
            if (std::isfinite(cand_obj) && cand_obj >= obj - 1e-13 * (1.0 + std::abs(obj))) {
                gating = std::move(cand);
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;  // no improving step; keep the best iterate
    }
    if (capped != nullptr) *capped = *capped || hit_cap;
    return gating;
}

namespace {

void e_step_from_cache(const Eigen::MatrixXd& gating_lp, VariationalState* state) {
    const int n = state->n_rows();
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd row = (gating_lp.row(i) + state->log_evidence.row(i)).transpose();
        const double lse = log_sum_exp(row);
        state->z_hat.row(i) = (row.array() - lse).exp();
    }
}

double elbo_from_cache(const Eigen::MatrixXd& gating_lp, const VariationalState& state) {
    const int n = state.n_rows();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        total += log_sum_exp((gating_lp.row(i) + state.log_evidence.row(i)).transpose());
    }
    return total;
}

void update_xi_all(const Eigen::MatrixXi& Y, const MLTAModel& model, VariationalState* state) {
    const int n = static_cast<int>(Y.rows());
    const int g_count = model.config.groups;
    const int d = model.config.trait_dim;
    const int r = static_cast<int>(Y.cols());
    for (int g = 0; g < g_count; ++g) {
        auto& xi_g = state->xi[static_cast<std::size_t>(g)];
        const Eigen::RowVectorXd b = model.items.b.row(g);
        if (d == 0) {
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < r; ++k) xi_g(i, k) = std::abs(b(k));
            }
            continue;
        }
        const Eigen::MatrixXd& wg = model.items.slopes(g);
        const auto& mu_g = state->mu[static_cast<std::size_t>(g)];
        const auto& sigma_g = state->sigma[static_cast<std::size_t>(g)];
        Eigen::MatrixXd second(d, d);
        for (int i = 0; i < n; ++i) {
            for (int a = 0; a < d; ++a) {
                for (int c = 0; c < d; ++c) {
                    second(a, c) = sigma_g(i, a * d + c) + mu_g(i, a) * mu_g(i, c);
                }
            }
            for (int k = 0; k < r; ++k) {
                const Eigen::RowVectorXd wk = wg.row(k);
                double radicand = b(k) * b(k) + wk * second * wk.transpose() +
                                  2.0 * b(k) * wk.dot(mu_g.row(i));
                if (radicand < -1e-12) {
                    throw NumericalError("update_xi: negative radicand (corrupt state)");
                }
                xi_g(i, k) = std::sqrt(std::max(radicand, 0.0));
            }
        }
    }
}

VariationalState allocate_state(int n, const ModelConfig& config, int r) {
    VariationalState state;
    const int g = config.groups;
    const int d = config.trait_dim;
    state.z_hat.resize(n, g);
    state.log_evidence.resize(n, g);
    for (int gg = 0; gg < g; ++gg) {
        state.xi.emplace_back(Eigen::MatrixXd::Zero(n, r));
        state.mu.emplace_back(Eigen::MatrixXd::Zero(n, d));
        state.sigma.emplace_back(Eigen::MatrixXd::Zero(n, d * d));
    }
    return state;
}

void seed_xi_from_b(const MLTAModel& model, VariationalState* state) {
    for (int g = 0; g < model.config.groups; ++g) {
        auto& xi_g = state->xi[static_cast<std::size_t>(g)];
        for (int i = 0; i < xi_g.rows(); ++i) xi_g.row(i) = model.items.b.row(g).cwiseAbs();
    }
}

// Random initialization: responsibilities from a flat Dirichlet, b at the
// logit of responsibility-weighted column means, slopes from N(0, 0.5^2),
// beta at zero, xi seeded at |b|.
void random_start(const Eigen::MatrixXi& Y, Rng* rng, MLTAModel* model, VariationalState* state) {
    const int n = static_cast<int>(Y.rows());
    const int r = static_cast<int>(Y.cols());
    const int g_count = model->config.groups;
    const int d = model->config.trait_dim;
    for (int i = 0; i < n; ++i) {
        const auto row = rng->simplex(g_count);
        for (int g = 0; g < g_count; ++g) state->z_hat(i, g) = row[static_cast<std::size_t>(g)];
    }
    const Eigen::MatrixXd yd = Y.cast<double>();
    model->items.b.resize(g_count, r);
    for (int g = 0; g < g_count; ++g) {
        const Eigen::VectorXd weights = state->z_hat.col(g);
        const double total = weights.sum();
        for (int k = 0; k < r; ++k) {
            double p = yd.col(k).dot(weights) / total;
            p = std::min(std::max(p, 1e-3), 1.0 - 1e-3);
            model->items.b(g, k) = logit(p);
        }
    }
    model->items.w.clear();
    if (d > 0) {
        const int blocks = model->config.variant == Variant::Constrained ? 1 : g_count;
        for (int blk = 0; blk < blocks; ++blk) {
            Eigen::MatrixXd wg(r, d);
            for (int k = 0; k < r; ++k) {
                for (int dd = 0; dd < d; ++dd) wg(k, dd) = 0.5 * rng->normal();
            }
            model->items.w.push_back(std::move(wg));
        }
    }
    if (g_count > 1) {
        model->gating.beta = Eigen::MatrixXd::Zero(g_count - 1, static_cast<int>(model->covariates.size()));
    } else {
        model->gating.beta.resize(0, 0);
    }
    seed_xi_from_b(*model, state);
}

struct StartOutcome {
    bool ok = false;
    std::string error;
    MLTAModel model;
    VariationalState state;
    std::vector<double> trace;
    double final_elbo = -std::numeric_limits<double>::infinity();
    bool converged = false;
    FitDiagnostics diag;
};

void run_inner_sweeps(const Eigen::MatrixXi& Y, const FitOptions& opts, MLTAModel* model,
                      VariationalState* state, FitDiagnostics* diag) {
    const int max_sweeps = opts.inner_to_convergence ? 200 : opts.inner_sweeps;
    std::vector<Eigen::MatrixXd> prev_xi;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (opts.inner_to_convergence) prev_xi = state->xi;
        update_xi_all(Y, *model, state);
        refresh_trait_posteriors(Y, *model, state);
        update_item_params(Y, *state, model->config.variant, &model->items, diag);
        refresh_trait_posteriors(Y, *model, state);
        if (opts.inner_to_convergence) {
            double delta = 0.0;
            for (std::size_t g = 0; g < prev_xi.size(); ++g) {
                delta = std::max(delta, (state->xi[g] - prev_xi[g]).cwiseAbs().maxCoeff());
            }
            if (delta < 1e-8) break;
        }
    }
}

StartOutcome run_start(const Eigen::MatrixXi& Y, const Eigen::MatrixXd& X,
                       const std::vector<std::string>& skills,
                       const std::vector<std::string>& covariates, const ModelConfig& config,
                       const FitOptions& opts, std::uint64_t seed) {
    StartOutcome out;
    try {
        Rng rng(seed);
        out.model.config = config;
        out.model.skills = skills;
        out.model.covariates = covariates;
        out.state = allocate_state(static_cast<int>(Y.rows()), config, static_cast<int>(Y.cols()));
        random_start(Y, &rng, &out.model, &out.state);
        refresh_trait_posteriors(Y, out.model, &out.state);

        double prev = -std::numeric_limits<double>::infinity();
        for (int outer = 0; outer < opts.max_outer; ++outer) {
            const Eigen::MatrixXd gating_lp = gating_log_probs(X, out.model.gating);
            e_step_from_cache(gating_lp, &out.state);
            if (config.groups > 1) {
                bool capped = false;
                out.model.gating = update_gating(X, out.state.z_hat, opts.newton,
                                                 &out.model.gating, &capped);
                out.diag.gating_newton_capped = out.diag.gating_newton_capped || capped;
            }
            run_inner_sweeps(Y, opts, &out.model, &out.state, &out.diag);
            const double e = elbo_from_cache(gating_log_probs(X, out.model.gating), out.state);
            if (!std::isfinite(e)) throw NumericalError("non-finite ELBO");
            out.trace.push_back(e);
            // Relative change with the denominator floored at 1, so bounds
            // approaching 0 (perfectly separable data) still converge.
            if (outer > 0 && std::abs(e - prev) <= opts.tol * std::max(1.0, std::abs(prev))) {
                out.converged = true;
                break;
            }
            prev = e;
        }
        out.final_elbo = out.trace.back();
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

}  // namespace

Eigen::MatrixXd e_step_responsibilities(const Eigen::MatrixXi& Y, const Eigen::MatrixXd& X,
                                        const MLTAModel& model, VariationalState* state) {
    refresh_trait_posteriors(Y, model, state);
    e_step_from_cache(gating_log_probs(X, model.gating), state);
    return state->z_hat;
}

double elbo(const Eigen::MatrixXi& Y, const Eigen::MatrixXd& X, const MLTAModel& model,
            VariationalState* state) {
    refresh_trait_posteriors(Y, model, state);
    return elbo_from_cache(gating_log_probs(X, model.gating), *state);
}

FitResult fit(const Dataset& data, const ModelConfig& config, const FitOptions& opts) {
    config.validate();
    opts.validate();
    const Eigen::MatrixXi& Y = data.incidence.ties;
    const Eigen::MatrixXd& X = data.design.X;
    const int n = static_cast<int>(Y.rows());
    const int r = static_cast<int>(Y.cols());
    if (n < 1 || r < 1) throw DataError("fit: empty dataset");
    if (data.incidence.ids != data.design.ids) throw DataError("fit: incidence/design ids not aligned");
    if (X.rows() != n) throw DataError("fit: design row count mismatch");

    const long long cells = static_cast<long long>(config.groups) * r * std::max(config.trait_dim, 1);
    if (cells > 2'000'000LL) throw ConfigError("fit: G*R*D exceeds the resource guard");
    const long long state_size = static_cast<long long>(n) * config.groups *
                                 (r + config.trait_dim * config.trait_dim + config.trait_dim + 2);
    if (state_size > 400'000'000LL) throw ConfigError("fit: state size exceeds the resource guard");

    if (config.groups > 1) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (static_cast<int>(qr.rank()) < X.cols()) {
            std::string msg = collinear_column_message(X);
            const auto perm = qr.colsPermutation().indices();
            msg += "; names:";
            for (int j = static_cast<int>(qr.rank()); j < X.cols(); ++j) {
                msg += " " + data.design.column_names[static_cast<std::size_t>(perm(j))];
            }
            throw DataError(msg);
        }
    }

    std::vector<StartOutcome> outcomes(static_cast<std::size_t>(opts.starts));
    parallel_for_index(opts.starts, opts.jobs, [&](int s) {
        outcomes[static_cast<std::size_t>(s)] =
            run_start(Y, X, data.incidence.skills, data.design.column_names, config, opts,
                      derive_seed(opts.seed, static_cast<std::uint64_t>(s)));
    });

    int best = -1;
    int failed = 0;
    for (int s = 0; s < opts.starts; ++s) {
        const auto& o = outcomes[static_cast<std::size_t>(s)];
        if (!o.ok) {
            ++failed;
            continue;
        }
        if (best < 0 || o.final_elbo > outcomes[static_cast<std::size_t>(best)].final_elbo + kElboTieTol) {
            best = s;
        }
    }
    if (best < 0) {
        std::ostringstream msg;
        msg << "fit: all " << opts.starts << " starts failed:";
        for (int s = 0; s < opts.starts; ++s) {
            msg << " [start " << s << ": " << outcomes[static_cast<std::size_t>(s)].error << "]";
        }
        throw NumericalError(msg.str());
    }

    StartOutcome& winner = outcomes[static_cast<std::size_t>(best)];
    FitResult result;
    result.model = std::move(winner.model);
    result.state = std::move(winner.state);
    result.elbo_trace = std::move(winner.trace);
    result.final_elbo = winner.final_elbo;
    result.converged = winner.converged;
    result.start_index = best;
    result.diagnostics = winner.diag;
    result.diagnostics.failed_starts = failed;
    for (int s = 0; s < opts.starts; ++s) {
        const auto& o = outcomes[static_cast<std::size_t>(s)];
        if (!o.ok) result.diagnostics.notes.push_back("start " + std::to_string(s) + " failed: " + o.error);
    }
    const int p = param_count(config, static_cast<int>(X.cols()) - 1, r);
    result.bic = bic(result.final_elbo, p, n);
    return result;
}

FitResult reconstruct_fit(const Dataset& data, const MLTAModel& model, int max_sweeps, double xi_tol) {
    model.validate();
    const Eigen::MatrixXi& Y = data.incidence.ties;
    const Eigen::MatrixXd& X = data.design.X;
    if (static_cast<int>(model.skills.size()) != Y.cols()) throw DataError("reconstruct_fit: item mismatch");
    if (model.n_covariate_cols() != X.cols()) throw DataError("reconstruct_fit: covariate mismatch");

    FitResult result;
    result.model = model;
    result.state = allocate_state(static_cast<int>(Y.rows()), model.config, static_cast<int>(Y.cols()));
    seed_xi_from_b(model, &result.state);
    refresh_trait_posteriors(Y, model, &result.state);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        const std::vector<Eigen::MatrixXd> prev = result.state.xi;
        update_xi_all(Y, model, &result.state);
        refresh_trait_posteriors(Y, model, &result.state);
        double delta = 0.0;
        for (std::size_t g = 0; g < prev.size(); ++g) {
            delta = std::max(delta, (result.state.xi[g] - prev[g]).cwiseAbs().maxCoeff());
        }
        if (delta < xi_tol) break;
    }
    const Eigen::MatrixXd gating_lp = gating_log_probs(X, model.gating);
    e_step_from_cache(gating_lp, &result.state);
    result.final_elbo = elbo_from_cache(gating_lp, result.state);
    result.elbo_trace = {result.final_elbo};
    result.converged = true;
    const int p = param_count(model.config, static_cast<int>(X.cols()) - 1, static_cast<int>(Y.cols()));
    result.bic = bic(result.final_elbo, p, static_cast<int>(Y.rows()));
    return result;
}

nlohmann::json fit_result_json(const FitResult& fit) {
    nlohmann::json diag = {{"cap_hits", fit.diagnostics.cap_hits},
                           {"gating_newton_capped", fit.diagnostics.gating_newton_capped},
                           {"failed_starts", fit.diagnostics.failed_starts},
                           {"notes", fit.diagnostics.notes}};
    return {{"model", model_to_json(fit.model)},
            {"elbo_trace", fit.elbo_trace},
            {"final_elbo", fit.final_elbo},
            {"bic", fit.bic},
            {"converged", fit.converged},
            {"start_index", fit.start_index},
            {"diagnostics", std::move(diag)}};
}

}  // namespace mlta
