#include "mlta/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "mlta/errors.hpp"

namespace mlta {

std::string variant_name(Variant v) {
    return v == Variant::Unconstrained ? "unconstrained" : "constrained";
}

Variant variant_from_name(const std::string& name) {
    if (name == "unconstrained") return Variant::Unconstrained;
    if (name == "constrained") return Variant::Constrained;
    throw ConfigError("unknown variant: '" + name + "'");
}

void ModelConfig::validate() const {
    if (groups < 1) throw ConfigError("groups must be >= 1");
    if (trait_dim < 0) throw ConfigError("trait_dim must be >= 0");
}

void MLTAModel::validate() const {
    config.validate();
    const int G = config.groups;
    const int D = config.trait_dim;
    const int R = n_items();
    if (R < 1) throw ConfigError("model has no items");
    if (G == 1) {
        if (gating.beta.size() != 0) throw ConfigError("gating must be empty when G = 1");
    } else {
        if (gating.beta.rows() != G - 1 || gating.beta.cols() != n_covariate_cols()) {
            throw ConfigError("gating must be (G-1) x (J+1)");
        }
    }
    if (items.b.rows() != G || items.b.cols() != R) throw ConfigError("b must be G x R");
    if (D == 0) {
        if (!items.w.empty()) throw ConfigError("slopes must be empty when D = 0");
    } else {
        const std::size_t blocks = config.variant == Variant::Constrained ? 1u : static_cast<std::size_t>(G);
        if (items.w.size() != blocks) throw ConfigError("wrong number of slope blocks");
        for (const auto& wg : items.w) {
            if (wg.rows() != R || wg.cols() != D) throw ConfigError("slope blocks must be R x D");
        }
    }
    if (!gating.beta.allFinite() || !items.b.allFinite()) throw ConfigError("non-finite parameters");
    for (const auto& wg : items.w) {
        if (!wg.allFinite()) throw ConfigError("non-finite parameters");
    }
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    // -log(1 + exp(-x)) with the usual branch split.
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double connection_prob(double b, const Eigen::VectorXd& w, const Eigen::VectorXd& u) {
    return sigmoid(b + w.dot(u));
}

Eigen::VectorXd gating_probs(const Eigen::VectorXd& x, const GatingParams& gating) {
    const int G = static_cast<int>(gating.beta.rows()) + 1;
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(G);  // reference group has logit 0
    if (G > 1) logits.tail(G - 1) = gating.beta * x;
    const double m = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - m).exp();
    p /= p.sum();
    return p;
}

Eigen::MatrixXd gating_log_probs(const Eigen::MatrixXd& X, const GatingParams& gating) {
    const int n = static_cast<int>(X.rows());
    const int G = static_cast<int>(gating.beta.rows()) + 1;
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(n, G);
    if (G > 1) logits.rightCols(G - 1) = X * gating.beta.transpose();
    for (int i = 0; i < n; ++i) {
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        logits.row(i).array() -= lse;
    }
    return logits;
}

int param_count(const ModelConfig& config, int n_covariates, int n_items) {
    config.validate();
    const int G = config.groups;
    const int D = config.trait_dim;
    int p = (G - 1) * (n_covariates + 1) + G * n_items;
    if (D > 0) {
        p += (config.variant == Variant::Constrained ? n_items : G * n_items) * D;
    }
    return p;
}

double bic(double loglik, int p, int n) {
    return -2.0 * loglik + p * std::log(static_cast<double>(n));
}

namespace {

std::string group_key(int g) { return "group_" + std::to_string(g + 1); }

}  // namespace

nlohmann::json model_to_json(const MLTAModel& model) {
    model.validate();
    nlohmann::json j;
    j["config"] = {{"groups", model.config.groups},
                   {"trait_dim", model.config.trait_dim},
                   {"variant", variant_name(model.config.variant)}};
    j["covariates"] = model.covariates;
    j["skills"] = model.skills;
    nlohmann::json beta = nlohmann::json::object();
    for (int g = 1; g < model.config.groups; ++g) {
        nlohmann::json row = nlohmann::json::object();
        for (int c = 0; c < model.n_covariate_cols(); ++c) {
            row[model.covariates[static_cast<std::size_t>(c)]] = model.gating.beta(g - 1, c);
        }
        beta[group_key(g)] = std::move(row);
    }
    j["gating"] = std::move(beta);
    nlohmann::json b = nlohmann::json::object();
    for (int g = 0; g < model.config.groups; ++g) {
        nlohmann::json row = nlohmann::json::object();
        for (int k = 0; k < model.n_items(); ++k) {
            row[model.skills[static_cast<std::size_t>(k)]] = model.items.b(g, k);
        }
        b[group_key(g)] = std::move(row);
    }
    nlohmann::json w = nlohmann::json::object();
    if (model.config.trait_dim > 0) {
        auto block_json = [&](const Eigen::MatrixXd& wg) {
            nlohmann::json row = nlohmann::json::object();
            for (int k = 0; k < model.n_items(); ++k) {
                std::vector<double> dims(static_cast<std::size_t>(wg.cols()));
                for (int d = 0; d < wg.cols(); ++d) dims[static_cast<std::size_t>(d)] = wg(k, d);
                row[model.skills[static_cast<std::size_t>(k)]] = dims;
            }
            return row;
        };
        if (model.config.variant == Variant::Constrained) {
            w["shared"] = block_json(model.items.w.front());
        } else {
            for (int g = 0; g < model.config.groups; ++g) {
                w[group_key(g)] = block_json(model.items.w[static_cast<std::size_t>(g)]);
            }
        }
    }
    j["items"] = {{"b", std::move(b)}, {"w", std::move(w)}};
    return j;
}

MLTAModel model_from_json(const nlohmann::json& j) {
    MLTAModel m;
    try {
        const auto& cfg = j.at("config");
        m.config.groups = cfg.at("groups").get<int>();
        m.config.trait_dim = cfg.at("trait_dim").get<int>();
        m.config.variant = variant_from_name(cfg.at("variant").get<std::string>());
        m.covariates = j.at("covariates").get<std::vector<std::string>>();
        m.skills = j.at("skills").get<std::vector<std::string>>();
        const int G = m.config.groups;
        const int D = m.config.trait_dim;
        const int R = m.n_items();
        const int P = m.n_covariate_cols();
        if (G > 1) {
            m.gating.beta.resize(G - 1, P);
            const auto& beta = j.at("gating");
            for (int g = 1; g < G; ++g) {
                const auto& row = beta.at(group_key(g));
                for (int c = 0; c < P; ++c) {
                    m.gating.beta(g - 1, c) = row.at(m.covariates[static_cast<std::size_t>(c)]).get<double>();
                }
            }
        }
        m.items.b.resize(G, R);
        const auto& b = j.at("items").at("b");
        for (int g = 0; g < G; ++g) {
            const auto& row = b.at(group_key(g));
            for (int k = 0; k < R; ++k) {
                m.items.b(g, k) = row.at(m.skills[static_cast<std::size_t>(k)]).get<double>();
            }
        }
        if (D > 0) {
            const auto& w = j.at("items").at("w");
            auto read_block = [&](const nlohmann::json& block) {
                Eigen::MatrixXd wg(R, D);
                for (int k = 0; k < R; ++k) {
                    const auto dims = block.at(m.skills[static_cast<std::size_t>(k)]).get<std::vector<double>>();
                    if (static_cast<int>(dims.size()) != D) throw ConfigError("slope dimension mismatch");
                    for (int d = 0; d < D; ++d) wg(k, d) = dims[static_cast<std::size_t>(d)];
                }
                return wg;
            };
            if (m.config.variant == Variant::Constrained) {
                m.items.w.push_back(read_block(w.at("shared")));
            } else {
                for (int g = 0; g < G; ++g) m.items.w.push_back(read_block(w.at(group_key(g))));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model JSON: ") + e.what());
    }
    m.validate();
    return m;
}

}  // namespace mlta
