#include "mlta/data.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mlta/errors.hpp"

namespace mlta {

int RawSurveyTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) return static_cast<int>(i);
    }
    return -1;
}

RawSurveyTable RawSurveyTable::from_csv(const csv::Table& table, std::string missing_marker) {
    if (table.header.empty() || table.header.front() != "id") {
        throw DataError("raw table: first column must be 'id'");
    }
    RawSurveyTable raw;
    raw.missing_marker = std::move(missing_marker);
    raw.columns.assign(table.header.begin() + 1, table.header.end());
    std::set<std::string> seen;
    for (const auto& row : table.rows) {
        const std::string& id = row.front();
        if (!seen.insert(id).second) throw DataError("raw table: duplicate id '" + id + "'");
        raw.ids.push_back(id);
        raw.cells.emplace_back(row.begin() + 1, row.end());
    }
    return raw;
}

void DichotomizationRule::validate() const {
    if (levels.size() < 2) throw ConfigError("item '" + item + "': needs at least 2 levels");
    if (level_index(threshold) < 0) {
        throw ConfigError("item '" + item + "': threshold '" + threshold + "' not among declared levels");
    }
    std::set<std::string> uniq(levels.begin(), levels.end());
    if (uniq.size() != levels.size()) throw ConfigError("item '" + item + "': duplicate levels");
}

int DichotomizationRule::level_index(const std::string& label) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == label) return static_cast<int>(i);
    }
    return -1;
}

void CovariateRule::validate() const {
    if (levels.size() < 2) throw ConfigError("covariate '" + name + "': needs at least 2 levels");
    if (std::find(levels.begin(), levels.end(), reference) == levels.end()) {
        throw ConfigError("covariate '" + name + "': reference '" + reference + "' not among levels");
    }
    std::set<std::string> uniq(levels.begin(), levels.end());
    if (uniq.size() != levels.size()) throw ConfigError("covariate '" + name + "': duplicate levels");
}

FlaggedIncidence dichotomize(const RawSurveyTable& raw, const std::vector<DichotomizationRule>& rules) {
    if (rules.empty()) throw ConfigError("no dichotomization rules given");
    const int n = static_cast<int>(raw.ids.size());
    const int r = static_cast<int>(rules.size());

    // Resolve source columns up front so a bad rule fails before any work.
    std::vector<std::vector<int>> source_cols(rules.size());
    for (std::size_t k = 0; k < rules.size(); ++k) {
        rules[k].validate();
        const auto names = rules[k].alters.empty() ? std::vector<std::string>{rules[k].item} : rules[k].alters;
        for (const auto& name : names) {
            const int c = raw.column_index(name);
            if (c < 0) throw ConfigError("item '" + rules[k].item + "': column '" + name + "' not in raw table");
            source_cols[k].push_back(c);
        }
    }

    FlaggedIncidence out;
    out.matrix.ids = raw.ids;
    for (const auto& rule : rules) out.matrix.skills.push_back(rule.item);
    out.matrix.ties.setZero(n, r);
    out.row_missing.assign(static_cast<std::size_t>(n), 0);

    for (int i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < rules.size(); ++k) {
            const auto& rule = rules[k];
            const int threshold = rule.level_index(rule.threshold);
            bool any_missing = false;
            bool tie = false;
            for (int c : source_cols[k]) {
                const std::string& value = raw.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
                if (raw.is_missing(value)) {
                    any_missing = true;
                    continue;
                }
                const int level = rule.level_index(value);
                if (level < 0) {
                    throw DataError("item '" + rule.item + "', id '" + raw.ids[static_cast<std::size_t>(i)] +
                                    "': unknown level label '" + value + "'");
                }
                tie = tie || level >= threshold;
            }
            // Any missing alter leaves the record incomplete; listwise deletion,
            // no imputation.
            if (any_missing) {
                out.row_missing[static_cast<std::size_t>(i)] = 1;
            } else {
                out.matrix.ties(i, static_cast<int>(k)) = tie ? 1 : 0;
            }
        }
    }
    return out;
}

FlaggedDesign encode_covariates(const RawSurveyTable& raw, const std::vector<CovariateRule>& schema) {
    const int n = static_cast<int>(raw.ids.size());
    FlaggedDesign out;
    out.design.ids = raw.ids;
    out.design.column_names.push_back("intercept");
    out.row_missing.assign(static_cast<std::size_t>(n), 0);

    std::vector<int> source_col(schema.size());
    for (std::size_t v = 0; v < schema.size(); ++v) {
        schema[v].validate();
        source_col[v] = raw.column_index(schema[v].name);
        if (source_col[v] < 0) throw ConfigError("covariate '" + schema[v].name + "' not in raw table");
    }

    int n_cols = 1;
    for (const auto& rule : schema) n_cols += static_cast<int>(rule.levels.size()) - 1;
    out.design.X.setZero(n, n_cols);
    out.design.X.col(0).setOnes();

    int col = 1;
    for (std::size_t v = 0; v < schema.size(); ++v) {
        const auto& rule = schema[v];
        CovariateVariable meta;
        meta.name = rule.name;
        meta.levels = rule.levels;
        meta.reference = rule.reference;
        std::unordered_map<std::string, int> level_col;
        for (const auto& level : rule.levels) {
            if (level == rule.reference) {
                meta.level_columns.push_back(-1);
                level_col[level] = -1;
            } else {
                out.design.column_names.push_back(rule.name + "=" + level);
                meta.level_columns.push_back(col);
                level_col[level] = col;
                ++col;
            }
        }
        for (int i = 0; i < n; ++i) {
            const std::string& value = raw.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(source_col[v])];
            if (raw.is_missing(value)) {
                out.row_missing[static_cast<std::size_t>(i)] = 1;
                continue;
            }
            const auto it = level_col.find(value);
            if (it == level_col.end()) {
                throw DataError("covariate '" + rule.name + "', id '" + raw.ids[static_cast<std::size_t>(i)] +
                                "': unseen category label '" + value + "'");
            }
            if (it->second >= 0) out.design.X(i, it->second) = 1.0;
        }
        out.design.variables.push_back(std::move(meta));
    }

    for (int c = 1; c < n_cols; ++c) {
        const double first = out.design.X(0, c);
        if (n > 0 && (out.design.X.col(c).array() == first).all()) {
            out.warnings.push_back("constant column after encoding: " +
                                   out.design.column_names[static_cast<std::size_t>(c)]);
        }
    }
    return out;
}

Dataset complete_cases(const FlaggedIncidence& incidence, const FlaggedDesign& design) {
    if (incidence.matrix.ids != design.design.ids) {
        throw DataError("complete_cases: incidence and design ids are not aligned");
    }
    const int n = incidence.matrix.n_rows();
    std::vector<int> keep;
    for (int i = 0; i < n; ++i) {
        if (!incidence.row_missing[static_cast<std::size_t>(i)] && !design.row_missing[static_cast<std::size_t>(i)]) {
            keep.push_back(i);
        }
    }
    if (keep.empty()) throw DataError("complete_cases: no complete rows remain");

    Dataset out;
    out.dropped_rows = n - static_cast<int>(keep.size());
    out.incidence.skills = incidence.matrix.skills;
    out.incidence.ties.resize(static_cast<int>(keep.size()), incidence.matrix.n_items());
    out.design.column_names = design.design.column_names;
    out.design.variables = design.design.variables;
    out.design.X.resize(static_cast<int>(keep.size()), design.design.n_cols());
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const int i = keep[j];
        out.incidence.ids.push_back(incidence.matrix.ids[static_cast<std::size_t>(i)]);
        out.design.ids.push_back(design.design.ids[static_cast<std::size_t>(i)]);
        out.incidence.ties.row(static_cast<int>(j)) = incidence.matrix.ties.row(i);
        out.design.X.row(static_cast<int>(j)) = design.design.X.row(i);
    }
    return out;
}

Eigen::VectorXd tie_density(const IncidenceMatrix& incidence) {
    if (incidence.n_rows() < 1) throw DataError("tie_density: empty incidence matrix");
    return incidence.ties.cast<double>().colwise().mean();
}

IngestRules parse_rules(const nlohmann::json& j) {
    IngestRules rules;
    try {
        rules.missing_marker = j.value("missing", std::string());
        for (const auto& item : j.at("items")) {
            DichotomizationRule r;
            r.item = item.at("name").get<std::string>();
            r.levels = item.at("levels").get<std::vector<std::string>>();
            r.threshold = item.at("threshold").get<std::string>();
            if (item.contains("alters")) r.alters = item.at("alters").get<std::vector<std::string>>();
            r.validate();
            rules.items.push_back(std::move(r));
        }
        if (j.contains("covariates")) {
            for (const auto& cov : j.at("covariates")) {
                CovariateRule r;
                r.name = cov.at("name").get<std::string>();
                r.levels = cov.at("levels").get<std::vector<std::string>>();
                r.reference = cov.at("reference").get<std::string>();
                r.validate();
                rules.covariates.push_back(std::move(r));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed rules document: ") + e.what());
    }
    return rules;
}

void write_incidence_csv(std::ostream& out, const IncidenceMatrix& m) {
    std::vector<std::string> header{"id"};
    header.insert(header.end(), m.skills.begin(), m.skills.end());
    csv::write_row(out, header);
    for (int i = 0; i < m.n_rows(); ++i) {
        std::vector<std::string> row{m.ids[static_cast<std::size_t>(i)]};
        for (int k = 0; k < m.n_items(); ++k) row.push_back(std::to_string(m.ties(i, k)));
        csv::write_row(out, row);
    }
}

IncidenceMatrix read_incidence_csv(const csv::Table& t) {
    if (t.header.empty() || t.header.front() != "id") throw DataError("incidence CSV: first column must be 'id'");
    IncidenceMatrix m;
    m.skills.assign(t.header.begin() + 1, t.header.end());
    if (m.skills.empty()) throw DataError("incidence CSV: no skill columns");
    m.ties.resize(static_cast<int>(t.rows.size()), static_cast<int>(m.skills.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        m.ids.push_back(t.rows[i].front());
        for (std::size_t k = 1; k < t.rows[i].size(); ++k) {
            const std::string& v = t.rows[i][k];
            if (v != "0" && v != "1") {
                throw DataError("incidence CSV: entry for id '" + m.ids.back() + "' must be 0 or 1, got '" + v + "'");
            }
            m.ties(static_cast<int>(i), static_cast<int>(k - 1)) = v == "1" ? 1 : 0;
        }
    }
    if (m.n_rows() < 1) throw DataError("incidence CSV: no rows");
    return m;
}

void write_design_csv(std::ostream& out, const CovariateDesign& d) {
    std::vector<std::string> header{"id"};
    header.insert(header.end(), d.column_names.begin(), d.column_names.end());
    csv::write_row(out, header);
    for (int i = 0; i < d.n_rows(); ++i) {
        std::vector<std::string> row{d.ids[static_cast<std::size_t>(i)]};
        for (int c = 0; c < d.n_cols(); ++c) row.push_back(csv::format_double(d.X(i, c)));
        csv::write_row(out, row);
    }
}

nlohmann::json design_meta_json(const CovariateDesign& d) {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : d.variables) {
        vars.push_back({{"name", v.name},
                        {"levels", v.levels},
                        {"reference", v.reference},
                        {"level_columns", v.level_columns}});
    }
    return {{"variables", vars}};
}

CovariateDesign read_design_csv(const csv::Table& t, const nlohmann::json* meta) {
    if (t.header.size() < 2 || t.header[0] != "id" || t.header[1] != "intercept") {
        throw DataError("design CSV: columns must start with 'id,intercept'");
    }
    CovariateDesign d;
    d.column_names.assign(t.header.begin() + 1, t.header.end());
    d.X.resize(static_cast<int>(t.rows.size()), static_cast<int>(d.column_names.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        d.ids.push_back(t.rows[i].front());
        for (std::size_t c = 1; c < t.rows[i].size(); ++c) {
            d.X(static_cast<int>(i), static_cast<int>(c - 1)) =
                csv::parse_double(t.rows[i][c], "design CSV row " + std::to_string(i + 2));
        }
    }
    if (d.n_rows() < 1) throw DataError("design CSV: no rows");
    if (!(d.X.col(0).array() == 1.0).all()) throw DataError("design CSV: intercept column must be identically 1");
    if (meta != nullptr) {
        try {
            for (const auto& v : meta->at("variables")) {
                CovariateVariable var;
                var.name = v.at("name").get<std::string>();
                var.levels = v.at("levels").get<std::vector<std::string>>();
                var.reference = v.at("reference").get<std::string>();
                var.level_columns = v.at("level_columns").get<std::vector<int>>();
                for (int c : var.level_columns) {
                    if (c >= d.n_cols()) throw DataError("design metadata: column index out of range");
                }
                d.variables.push_back(std::move(var));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("malformed design metadata: ") + e.what());
        }
    }
    return d;
}

}  // namespace mlta
