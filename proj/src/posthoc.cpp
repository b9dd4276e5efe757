#include "mlta/posthoc.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "mlta/csv.hpp"
#include "mlta/errors.hpp"
#include "mlta/quadrature.hpp"

namespace mlta {

AssignmentTable map_assign(const std::vector<std::string>& ids, const Eigen::MatrixXd& z_hat) {
    if (static_cast<int>(ids.size()) != z_hat.rows()) throw DataError("map_assign: id count mismatch");
    AssignmentTable table;
    table.ids = ids;
    table.z_hat = z_hat;
    table.group.reserve(ids.size());
    for (int i = 0; i < z_hat.rows(); ++i) {
        int arg = 0;
        for (int g = 1; g < z_hat.cols(); ++g) {
            if (z_hat(i, g) > z_hat(i, arg)) arg = g;  // strict: ties keep the lowest index
        }
        table.group.push_back(arg + 1);
    }
    return table;
}

SkillProbSummary predicted_skill_probs(const FitResult& fit, const Dataset& data,
                                       TraitIntegration integration, const QuadratureSpec& spec) {
    const MLTAModel& model = fit.model;
    model.validate();
    const int g_count = model.config.groups;
    const int r = model.n_items();
    const int d = model.config.trait_dim;
    const int n = data.n_rows();
    if (fit.state.n_rows() != n) throw DataError("predicted_skill_probs: state does not match dataset");
    if (integration == TraitIntegration::Quadrature && d > 2) {
        throw ConfigError("predicted_skill_probs: quadrature integration supports D <= 2 only");
    }

    const AssignmentTable assign = map_assign(data.incidence.ids, fit.state.z_hat);
    SkillProbSummary summary;
    summary.skills = model.skills;
    summary.probs.assign(static_cast<std::size_t>(g_count),
                         std::vector<std::vector<double>>(static_cast<std::size_t>(r)));
    summary.member_rows.assign(static_cast<std::size_t>(g_count), {});
    summary.means = Eigen::MatrixXd::Zero(g_count, r);

    const GaussHermite gh = integration == TraitIntegration::Quadrature && d > 0
                                ? gauss_hermite(spec.nodes)
                                : GaussHermite{};
    for (int i = 0; i < n; ++i) {
        const int g = assign.group[static_cast<std::size_t>(i)] - 1;
        summary.member_rows[static_cast<std::size_t>(g)].push_back(i);
        for (int k = 0; k < r; ++k) {
            const double b = model.items.b(g, k);
            double prob;
            if (d == 0) {
                prob = sigmoid(b);
            } else {
                const auto& mu_g = fit.state.mu[static_cast<std::size_t>(g)];
                const Eigen::RowVectorXd wk = model.items.slopes(g).row(k);
                if (integration == TraitIntegration::PlugIn) {
                    prob = sigmoid(b + wk.dot(mu_g.row(i)));
                } else {
                    // E[sigmoid(b + w'u)] over the Gaussian trait posterior.
                    const auto& sigma_g = fit.state.sigma[static_cast<std::size_t>(g)];
                    Eigen::MatrixXd cov(d, d);
                    for (int a = 0; a < d; ++a)
                        for (int c = 0; c < d; ++c) cov(a, c) = sigma_g(i, a * d + c);
                    const double mean = b + wk.dot(mu_g.row(i));
                    const double sd = std::sqrt(std::max(0.0, (wk * cov * wk.transpose())(0, 0)));
                    double acc = 0.0;
                    for (int j = 0; j < gh.nodes.size(); ++j) {
                        acc += std::exp(gh.log_weights(j)) * sigmoid(mean + sd * gh.nodes(j));
                    }
                    prob = acc;
                }
            }
            summary.probs[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)].push_back(prob);
        }
    }
    for (int g = 0; g < g_count; ++g) {
        for (int k = 0; k < r; ++k) {
            const auto& cell = summary.probs[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)];
            if (!cell.empty()) {
                double total = 0.0;
                for (double v : cell) total += v;
                summary.means(g, k) = total / static_cast<double>(cell.size());
            } else {
                summary.means(g, k) = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return summary;
}

GroupProbTable group_probs_by_covariate(const FitResult& fit, const Dataset& data,
                                        const std::string& variable) {
    const CovariateVariable* var = nullptr;
    for (const auto& v : data.design.variables) {
        if (v.name == variable) {
            var = &v;
            break;
        }
    }
    if (var == nullptr) throw DataError("group_probs_by_covariate: unknown variable '" + variable + "'");

    const int g_count = fit.model.config.groups;
    const int n = data.n_rows();
    GroupProbTable table;
    table.variable = variable;
    table.categories = var->levels;
    table.probs = Eigen::MatrixXd::Zero(static_cast<int>(var->levels.size()), g_count);
    table.category_counts.assign(var->levels.size(), 0);

    for (int i = 0; i < n; ++i) {
        // The observed category is the level whose dummy is set; all dummies
        // zero means the reference level.
        int cat = -1;
        for (std::size_t lv = 0; lv < var->levels.size(); ++lv) {
            const int col = var->level_columns[lv];
            if (col >= 0 && data.design.X(i, col) == 1.0) {
                cat = static_cast<int>(lv);
                break;
            }
        }
        if (cat < 0) {
            for (std::size_t lv = 0; lv < var->levels.size(); ++lv) {
                if (var->level_columns[lv] < 0) cat = static_cast<int>(lv);
            }
        }
        const Eigen::VectorXd eta = gating_probs(data.design.X.row(i).transpose(), fit.model.gating);
        table.probs.row(cat) += eta.transpose();
        ++table.category_counts[static_cast<std::size_t>(cat)];
    }
    for (int c = 0; c < table.probs.rows(); ++c) {
        if (table.category_counts[static_cast<std::size_t>(c)] > 0) {
            table.probs.row(c) /= static_cast<double>(table.category_counts[static_cast<std::size_t>(c)]);
        } else {
            table.probs.row(c).setConstant(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return table;
}

void write_assignments_csv(std::ostream& out, const AssignmentTable& table) {
    std::vector<std::string> header{"id", "group"};
    for (int g = 0; g < table.z_hat.cols(); ++g) header.push_back("z_" + std::to_string(g + 1));
    csv::write_row(out, header);
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
        std::vector<std::string> row{table.ids[i], std::to_string(table.group[i])};
        for (int g = 0; g < table.z_hat.cols(); ++g) {
            row.push_back(csv::format_double(table.z_hat(static_cast<int>(i), g)));
        }
        csv::write_row(out, row);
    }
}

void write_skill_probs_csv(std::ostream& out, const SkillProbSummary& summary,
                           const std::vector<std::string>& ids) {
    csv::write_row(out, {"group", "skill", "id", "prob"});
    for (std::size_t g = 0; g < summary.probs.size(); ++g) {
        for (std::size_t k = 0; k < summary.skills.size(); ++k) {
            const auto& cell = summary.probs[g][k];
            for (std::size_t m = 0; m < cell.size(); ++m) {
                const int row = summary.member_rows[g][m];
                csv::write_row(out, {std::to_string(g + 1), summary.skills[k],
                                     ids[static_cast<std::size_t>(row)], csv::format_double(cell[m])});
            }
        }
    }
}

void write_skill_prob_means_csv(std::ostream& out, const SkillProbSummary& summary) {
    csv::write_row(out, {"group", "skill", "mean"});
    for (int g = 0; g < summary.means.rows(); ++g) {
        for (std::size_t k = 0; k < summary.skills.size(); ++k) {
            csv::write_row(out, {std::to_string(g + 1), summary.skills[k],
                                 csv::format_double(summary.means(g, static_cast<int>(k)))});
        }
    }
}

void write_group_probs_csv(std::ostream& out, const GroupProbTable& table) {
    std::vector<std::string> header{"group"};
    for (const auto& c : table.categories) header.push_back(table.variable + "=" + c);
    csv::write_row(out, header);
    for (int g = 0; g < table.probs.cols(); ++g) {
        std::vector<std::string> row{std::to_string(g + 1)};
        for (int c = 0; c < table.probs.rows(); ++c) {
            const double v = table.probs(c, g);
            row.push_back(std::isnan(v) ? "NA" : csv::format_double(v));
        }
        csv::write_row(out, row);
    }
}

}  // namespace mlta
