#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "mlta/fit.hpp"
#include "mlta/synthlab.hpp"

namespace mlta {

/// MAP group label (1-based) per sender, with the full responsibility row.
struct AssignmentTable {
    std::vector<std::string> ids;
    std::vector<int> group;   // 1-based labels
    Eigen::MatrixXd z_hat;    // N x G
};

/// Per-row argmax; ties go to the lowest group index.
AssignmentTable map_assign(const std::vector<std::string>& ids, const Eigen::MatrixXd& z_hat);

/// Predicted per-skill connection probabilities of the individuals
/// MAP-assigned to each group, plus the per-(group, skill) mean.
struct SkillProbSummary {
    std::vector<std::string> skills;
    // cell (g, k): probabilities of the group-g individuals for skill k,
    // listed in dataset row order
    std::vector<std::vector<std::vector<double>>> probs;   // [G][R][members]
    std::vector<std::vector<int>> member_rows;              // [G][members]
    Eigen::MatrixXd means;                                  // G x R
};

enum class TraitIntegration {
    PlugIn,      // evaluate at the posterior trait mean
    Quadrature,  // integrate over the Gaussian trait posterior (D <= 2)
};

SkillProbSummary predicted_skill_probs(const FitResult& fit, const Dataset& data,
                                       TraitIntegration integration = TraitIntegration::PlugIn,
                                       const QuadratureSpec& spec = {});

/// Average gating probability per observed category of one covariate;
/// empty categories carry NaN.
struct GroupProbTable {
    std::string variable;
    std::vector<std::string> categories;
    Eigen::MatrixXd probs;  // categories x G
    std::vector<int> category_counts;
};

GroupProbTable group_probs_by_covariate(const FitResult& fit, const Dataset& data,
                                        const std::string& variable);

void write_assignments_csv(std::ostream& out, const AssignmentTable& table);
void write_skill_probs_csv(std::ostream& out, const SkillProbSummary& summary,
                           const std::vector<std::string>& ids);
void write_skill_prob_means_csv(std::ostream& out, const SkillProbSummary& summary);
/// Groups as rows, categories as columns; NaN printed as NA.
void write_group_probs_csv(std::ostream& out, const GroupProbTable& table);

}  // namespace mlta
