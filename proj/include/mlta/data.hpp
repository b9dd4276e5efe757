#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mlta/csv.hpp"

namespace mlta {

/// Raw ordinal survey table: one row per respondent, string-valued item
/// and covariate columns, a configurable missing marker.
struct RawSurveyTable {
    std::vector<std::string> ids;
    std::vector<std::string> columns;                 // excludes the id column
    std::vector<std::vector<std::string>> cells;      // N rows x columns
    std::string missing_marker;

    int column_index(const std::string& name) const;  // -1 when absent
    bool is_missing(const std::string& value) const { return value == missing_marker; }

    /// First CSV column must be `id`; ids must be unique.
    static RawSurveyTable from_csv(const csv::Table& table, std::string missing_marker);
};

/// How one ordinal item becomes a binary tie: tie = 1 iff the response
/// level is at or above the threshold level. Multi-alter items list the
/// alter columns and aggregate by OR after thresholding.
struct DichotomizationRule {
    std::string item;
    std::vector<std::string> levels;   // ordered, lowest first
    std::string threshold;
    std::vector<std::string> alters;   // empty: single column named `item`

    void validate() const;
    int level_index(const std::string& label) const;  // -1 when unknown
};

/// Dummy coding declaration for one categorical covariate.
struct CovariateRule {
    std::string name;
    std::vector<std::string> levels;  // declared order
    std::string reference;

    void validate() const;
};

struct IncidenceMatrix {
    std::vector<std::string> ids;
    std::vector<std::string> skills;
    Eigen::MatrixXi ties;  // N x R, entries 0/1

    int n_rows() const { return static_cast<int>(ties.rows()); }
    int n_items() const { return static_cast<int>(ties.cols()); }
};

/// Design-matrix metadata for one encoded covariate: the declared levels
/// and, per level, the design column carrying its dummy (-1 for the
/// reference level).
struct CovariateVariable {
    std::string name;
    std::vector<std::string> levels;
    std::string reference;
    std::vector<int> level_columns;
};

struct CovariateDesign {
    std::vector<std::string> ids;
    std::vector<std::string> column_names;  // first column "intercept"
    Eigen::MatrixXd X;                      // N x (J+1)
    std::vector<CovariateVariable> variables;

    int n_rows() const { return static_cast<int>(X.rows()); }
    int n_cols() const { return static_cast<int>(X.cols()); }
};

struct Dataset {
    IncidenceMatrix incidence;
    CovariateDesign design;
    int dropped_rows = 0;

    int n_rows() const { return incidence.n_rows(); }
};

/// Dichotomization output before complete-case filtering: rows with any
/// missing item response are flagged, never imputed.
struct FlaggedIncidence {
    IncidenceMatrix matrix;
    std::vector<std::uint8_t> row_missing;
};

struct FlaggedDesign {
    CovariateDesign design;
    std::vector<std::uint8_t> row_missing;
    std::vector<std::string> warnings;  // e.g. constant dummy columns
};

FlaggedIncidence dichotomize(const RawSurveyTable& raw, const std::vector<DichotomizationRule>& rules);

FlaggedDesign encode_covariates(const RawSurveyTable& raw, const std::vector<CovariateRule>& schema);

/// Drops rows flagged on either side; requires aligned ids; rejects an
/// empty result.
Dataset complete_cases(const FlaggedIncidence& incidence, const FlaggedDesign& design);

/// Per-skill tie proportion (column means).
Eigen::VectorXd tie_density(const IncidenceMatrix& incidence);

/// The single JSON rules document: missing marker, per-item
/// dichotomization rules, per-covariate dummy coding.
struct IngestRules {
    std::string missing_marker;
    std::vector<DichotomizationRule> items;
    std::vector<CovariateRule> covariates;
};

IngestRules parse_rules(const nlohmann::json& j);

// CSV / JSON interchange with the fit stage.
void write_incidence_csv(std::ostream& out, const IncidenceMatrix& m);
IncidenceMatrix read_incidence_csv(const csv::Table& t);
void write_design_csv(std::ostream& out, const CovariateDesign& d);
nlohmann::json design_meta_json(const CovariateDesign& d);
CovariateDesign read_design_csv(const csv::Table& t, const nlohmann::json* meta);

}  // namespace mlta
