#include "mlta/synthlab.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mlta/errors.hpp"
#include "mlta/quadrature.hpp"
#include "mlta/rng.hpp"

namespace mlta {

void QuadratureSpec::validate() const {
    if (nodes < 5) throw ConfigError("quadrature: need at least 5 nodes");
}

SimTruth simulate(const MLTAModel& model, const CovariateDesign& design, std::uint64_t seed) {
    model.validate();
    if (design.n_cols() != model.n_covariate_cols()) {
        throw ConfigError("simulate: design columns do not match the model");
    }
    const int n = design.n_rows();
    const int d = model.config.trait_dim;
    const int r = model.n_items();

    SimTruth truth;
    truth.model = model;
    truth.seed = seed;
    truth.u_true.resize(n, d);
    truth.z_true.resize(static_cast<std::size_t>(n));

    Rng rng(seed);
    Eigen::MatrixXi ties(n, r);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd eta = gating_probs(design.X.row(i).transpose(), model.gating);
        std::vector<double> probs(eta.data(), eta.data() + eta.size());
        const int g = rng.categorical(probs);
        truth.z_true[static_cast<std::size_t>(i)] = g;
        for (int dd = 0; dd < d; ++dd) truth.u_true(i, dd) = rng.normal();
        for (int k = 0; k < r; ++k) {
            double a = model.items.b(g, k);
            if (d > 0) a += model.items.slopes(g).row(k).dot(truth.u_true.row(i));
            ties(i, k) = rng.uniform() < sigmoid(a) ? 1 : 0;
        }
    }
    truth.dataset.incidence.ids = design.ids;
    truth.dataset.incidence.skills = model.skills;
    truth.dataset.incidence.ties = std::move(ties);
    truth.dataset.design = design;
    truth.dataset.dropped_rows = 0;
    return truth;
}

namespace {

// log P(y_i | group g) with the trait integrated by a GH product rule.
double log_group_evidence(const Eigen::RowVectorXi& y, const MLTAModel& model, int g,
                          const GaussHermite& gh) {
    const int d = model.config.trait_dim;
    const int r = model.n_items();
    const int nodes = static_cast<int>(gh.nodes.size());
    const Eigen::RowVectorXd b = model.items.b.row(g);
    if (d == 0) {
        double total = 0.0;
        for (int k = 0; k < r; ++k) {
            const double a = b(k);
            total += y(k) == 1 ? log_sigmoid(a) : log_sigmoid(-a);
        }
        return total;
    }
    const Eigen::MatrixXd& w = model.items.slopes(g);
    if (d == 1) {
        Eigen::VectorXd terms(nodes);
        for (int j = 0; j < nodes; ++j) {
            double s = gh.log_weights(j);
            for (int k = 0; k < r; ++k) {
                const double a = b(k) + w(k, 0) * gh.nodes(j);
                s += y(k) == 1 ? log_sigmoid(a) : log_sigmoid(-a);
            }
            terms(j) = s;
        }
        return log_sum_exp(terms);
    }
    // d == 2: tensor grid
    Eigen::VectorXd terms(nodes * nodes);
    int t = 0;
    for (int j1 = 0; j1 < nodes; ++j1) {
        for (int j2 = 0; j2 < nodes; ++j2, ++t) {
            double s = gh.log_weights(j1) + gh.log_weights(j2);
            for (int k = 0; k < r; ++k) {
                const double a = b(k) + w(k, 0) * gh.nodes(j1) + w(k, 1) * gh.nodes(j2);
                s += y(k) == 1 ? log_sigmoid(a) : log_sigmoid(-a);
            }
            terms(t) = s;
        }
    }
    return log_sum_exp(terms);
}

Eigen::MatrixXd log_mixture_terms(const Dataset& data, const MLTAModel& model,
                                  const QuadratureSpec& spec) {
    model.validate();
    spec.validate();
    if (model.config.trait_dim > 2) throw ConfigError("quadrature oracle supports D <= 2 only");
    if (data.incidence.n_items() != model.n_items()) throw DataError("oracle: item mismatch");
    if (data.design.n_cols() != model.n_covariate_cols()) throw DataError("oracle: covariate mismatch");
    const int n = data.n_rows();
    const int g_count = model.config.groups;
    const GaussHermite gh = gauss_hermite(spec.nodes);
    const Eigen::MatrixXd gating_lp = gating_log_probs(data.design.X, model.gating);
    Eigen::MatrixXd terms(n, g_count);
    for (int i = 0; i < n; ++i) {
        for (int g = 0; g < g_count; ++g) {
            terms(i, g) = gating_lp(i, g) + log_group_evidence(data.incidence.ties.row(i), model, g, gh);
        }
    }
    return terms;
}

}  // namespace

double gh_loglik(const Dataset& data, const MLTAModel& model, const QuadratureSpec& spec) {
    const Eigen::MatrixXd terms = log_mixture_terms(data, model, spec);
    double total = 0.0;
    for (int i = 0; i < terms.rows(); ++i) total += log_sum_exp(terms.row(i).transpose());
    return total;
}

double lc_loglik(const Dataset& data, const MLTAModel& model) {
    if (model.config.trait_dim != 0) throw ConfigError("lc_loglik: model must have D = 0");
    QuadratureSpec spec;  // unused by the D = 0 path beyond validation
    const Eigen::MatrixXd terms = log_mixture_terms(data, model, spec);
    double total = 0.0;
    for (int i = 0; i < terms.rows(); ++i) total += log_sum_exp(terms.row(i).transpose());
    return total;
}

Eigen::MatrixXd exact_responsibilities(const Dataset& data, const MLTAModel& model,
                                       const QuadratureSpec& spec) {
    Eigen::MatrixXd terms = log_mixture_terms(data, model, spec);
    for (int i = 0; i < terms.rows(); ++i) {
        const double lse = log_sum_exp(terms.row(i).transpose());
        terms.row(i) = (terms.row(i).array() - lse).exp();
    }
    return terms;
}

MonteCarloEstimate mc_loglik(const Dataset& data, const MLTAModel& model, int draws,
                             std::uint64_t seed) {
    model.validate();
    if (draws < 2) throw ConfigError("mc_loglik: need at least 2 antithetic pairs");
    const int n = data.n_rows();
    const int g_count = model.config.groups;
    const int d = model.config.trait_dim;
    const int r = model.n_items();
    const Eigen::MatrixXd gating_lp = gating_log_probs(data.design.X, model.gating);

    MonteCarloEstimate est;
    Eigen::VectorXd u(d);
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        // Antithetic pairs; each pair contributes its average, which keeps
        // the estimator unbiased and reduces variance for odd-ish
        // integrands.
        double mean = 0.0;
        double m2 = 0.0;
        for (int s = 0; s < draws; ++s) {
            for (int dd = 0; dd < d; ++dd) u(dd) = rng.normal();
            double pair = 0.0;
            for (int sign = 0; sign < 2; ++sign) {
                const double flip = sign == 0 ? 1.0 : -1.0;
                for (int g = 0; g < g_count; ++g) {
                    double log_f = gating_lp(i, g);
                    for (int k = 0; k < r; ++k) {
                        double a = model.items.b(g, k);
                        if (d > 0) a += flip * model.items.slopes(g).row(k).dot(u);
                        log_f += data.incidence.ties(i, k) == 1 ? log_sigmoid(a) : log_sigmoid(-a);
                    }
                    pair += std::exp(log_f);
                }
            }
            pair *= 0.5;
            const double delta = pair - mean;
            mean += delta / (s + 1);
            m2 += delta * (pair - mean);
        }
        const double var_mean = m2 / (draws - 1) / draws;
        est.loglik += std::log(mean);
        est.se += var_mean / (mean * mean);  // delta method on log
    }
    est.se = std::sqrt(est.se);
    return est;
}

void write_sim_truth(const std::string& dir, const SimTruth& truth) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "incidence.csv");
        write_incidence_csv(out, truth.dataset.incidence);
    }
    {
        std::ofstream out(fs::path(dir) / "design.csv");
        write_design_csv(out, truth.dataset.design);
    }
    {
        std::ofstream out(fs::path(dir) / "design.meta.json");
        out << design_meta_json(truth.dataset.design).dump(2) << '\n';
    }
    {
        std::vector<int> labels;
        labels.reserve(truth.z_true.size());
        for (int z : truth.z_true) labels.push_back(z + 1);
        std::vector<std::vector<double>> traits;
        for (int i = 0; i < truth.u_true.rows(); ++i) {
            traits.emplace_back(truth.u_true.row(i).begin(), truth.u_true.row(i).end());
        }
        const nlohmann::json j = {{"model", model_to_json(truth.model)},
                                  {"z_true", labels},
                                  {"u_true", traits}};
        std::ofstream out(fs::path(dir) / "truth.json");
        out << j.dump(2) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / "seed.json");
        out << nlohmann::json{{"seed", truth.seed}}.dump(2) << '\n';
    }
}

}  // namespace mlta
