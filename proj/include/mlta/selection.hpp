#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mlta/fit.hpp"

namespace mlta {

struct SelectionGrid {
    std::vector<int> groups{1, 2, 3, 4};
    std::vector<int> trait_dims{0, 1, 2, 3};
    std::vector<Variant> variants{Variant::Unconstrained, Variant::Constrained};

    void validate() const;
};

struct SelectionCell {
    ModelConfig config;
    double final_elbo = 0.0;
    int p = 0;
    double bic = 0.0;
    bool converged = false;
    int start_index = -1;
    bool failed = false;
    std::string message;
};

struct SelectionTable {
    std::vector<SelectionCell> cells;
    int best_index = -1;                 // minimum-BIC converged cell
    std::optional<FitResult> best_fit;   // populated by grid_search
};

/// Fits every (variant, D, G) cell with multi-start. Cells that coincide
/// structurally (D = 0, or G = 1, where both variants are the same model)
/// are fitted once and mirrored, so their records match bitwise. Per-cell
/// seeds derive from (opts.seed, cell code); cells run as independent jobs.
SelectionTable grid_search(const Dataset& data, const SelectionGrid& grid, const FitOptions& opts);

/// Config of the minimum-BIC converged cell. Ties break toward smaller p,
/// then smaller G, then smaller D, then constrained before unconstrained.
ModelConfig select_best(const SelectionTable& table);

/// BIC table for one variant: rows = D, columns = G (empty when a cell is
/// absent from the grid, "failed" when no start converged).
void write_selection_csv(std::ostream& out, const SelectionTable& table, Variant variant);

nlohmann::json selection_json(const SelectionTable& table);

}  // namespace mlta
