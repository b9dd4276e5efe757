#include "mlta/selection.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "mlta/csv.hpp"
#include "mlta/errors.hpp"
#include "mlta/parallel.hpp"
#include "mlta/rng.hpp"

namespace mlta {

void SelectionGrid::validate() const {
    if (groups.empty() || trait_dims.empty() || variants.empty()) {
        throw ConfigError("selection grid must not be empty");
    }
    for (int g : groups) {
        if (g < 1) throw ConfigError("selection grid: G must be >= 1");
    }
    for (int d : trait_dims) {
        if (d < 0) throw ConfigError("selection grid: D must be >= 0");
    }
}

namespace {

// Stable integer code of a config; used both as the seed stream of the
// cell and as the deterministic merge key.
std::uint64_t cell_code(int g, int d, Variant v) {
    return static_cast<std::uint64_t>(g) * 64 + static_cast<std::uint64_t>(d) * 2 +
           (v == Variant::Constrained ? 1 : 0);
}

// Variants coincide when G = 1 or D = 0; such cells are fitted once under
// the unconstrained label and mirrored.
ModelConfig canonical_config(const ModelConfig& config) {
    ModelConfig c = config;
    if (c.groups == 1 || c.trait_dim == 0) c.variant = Variant::Unconstrained;
    return c;
}

}  // namespace

SelectionTable grid_search(const Dataset& data, const SelectionGrid& grid, const FitOptions& opts) {
    grid.validate();
    opts.validate();

    std::vector<ModelConfig> configs;
    for (Variant v : grid.variants) {
        for (int d : grid.trait_dims) {
            for (int g : grid.groups) {
                configs.push_back(ModelConfig{g, d, v});
            }
        }
    }

    std::vector<std::uint64_t> unique_codes;
    std::vector<ModelConfig> job_configs;
    std::map<std::uint64_t, int> job_of_code;
    for (const auto& config : configs) {
        const ModelConfig canon = canonical_config(config);
        const std::uint64_t code = cell_code(canon.groups, canon.trait_dim, canon.variant);
        if (job_of_code.emplace(code, static_cast<int>(unique_codes.size())).second) {
            unique_codes.push_back(code);
            job_configs.push_back(canon);
        }
    }

    struct JobOutcome {
        bool failed = true;
        std::string message;
        FitResult fit;
    };
    std::vector<JobOutcome> jobs(unique_codes.size());

    parallel_for_index(static_cast<int>(unique_codes.size()), opts.jobs, [&](int j) {
        FitOptions cell_opts = opts;
        cell_opts.seed = derive_seed(opts.seed, unique_codes[static_cast<std::size_t>(j)]);
        cell_opts.jobs = 1;  // parallelism is spent across cells here
        auto& out = jobs[static_cast<std::size_t>(j)];
        try {
            out.fit = fit(data, job_configs[static_cast<std::size_t>(j)], cell_opts);
            out.failed = false;
        } catch (const std::exception& e) {
            out.failed = true;
            out.message = e.what();
        }
    });

    SelectionTable table;
    for (const auto& config : configs) {
        const ModelConfig canon = canonical_config(config);
        const auto& job = jobs[static_cast<std::size_t>(job_of_code.at(cell_code(canon.groups, canon.trait_dim, canon.variant)))];
        SelectionCell cell;
        cell.config = config;
        if (job.failed) {
            cell.failed = true;
            cell.message = job.message;
        } else {
            cell.final_elbo = job.fit.final_elbo;
            cell.p = param_count(config, data.design.n_cols() - 1, data.incidence.n_items());
            cell.bic = job.fit.bic;
            cell.converged = job.fit.converged;
            cell.start_index = job.fit.start_index;
        }
        table.cells.push_back(std::move(cell));
    }

    bool any_ok = false;
    for (const auto& job : jobs) any_ok = any_ok || !job.failed;
    if (!any_ok) throw NumericalError("grid_search: every cell failed");

    const ModelConfig best = select_best(table);
    for (std::size_t i = 0; i < table.cells.size(); ++i) {
        const auto& c = table.cells[i].config;
        if (c.groups == best.groups && c.trait_dim == best.trait_dim && c.variant == best.variant) {
            table.best_index = static_cast<int>(i);
            break;
        }
    }
    const ModelConfig canon = canonical_config(best);
    table.best_fit = std::move(jobs[static_cast<std::size_t>(job_of_code.at(
                                   cell_code(canon.groups, canon.trait_dim, canon.variant)))].fit);
    return table;
}

ModelConfig select_best(const SelectionTable& table) {
    const SelectionCell* best = nullptr;
    auto better = [](const SelectionCell& a, const SelectionCell& b) {
        if (a.bic != b.bic) return a.bic < b.bic;
        if (a.p != b.p) return a.p < b.p;
        if (a.config.groups != b.config.groups) return a.config.groups < b.config.groups;
        if (a.config.trait_dim != b.config.trait_dim) return a.config.trait_dim < b.config.trait_dim;
        return a.config.variant == Variant::Constrained && b.config.variant == Variant::Unconstrained;
    };
    for (const auto& cell : table.cells) {
        if (cell.failed || !cell.converged) continue;
        if (best == nullptr || better(cell, *best)) best = &cell;
    }
    if (best == nullptr) throw NumericalError("select_best: no converged cell");
    return best->config;
}

void write_selection_csv(std::ostream& out, const SelectionTable& table, Variant variant) {
    std::set<int> g_values;
    std::set<int> d_values;
    for (const auto& cell : table.cells) {
        if (cell.config.variant != variant) continue;
        g_values.insert(cell.config.groups);
        d_values.insert(cell.config.trait_dim);
    }
    std::vector<std::string> header{"D"};
    for (int g : g_values) header.push_back("G=" + std::to_string(g));
    csv::write_row(out, header);
    for (int d : d_values) {
        std::vector<std::string> row{std::to_string(d)};
        for (int g : g_values) {
            std::string value;
            for (const auto& cell : table.cells) {
                if (cell.config.variant == variant && cell.config.groups == g &&
                    cell.config.trait_dim == d) {
                    value = cell.failed ? "failed" : csv::format_double(cell.bic);
                    break;
                }
            }
            row.push_back(value);
        }
        csv::write_row(out, row);
    }
}

nlohmann::json selection_json(const SelectionTable& table) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : table.cells) {
        nlohmann::json j = {{"groups", cell.config.groups},
                            {"trait_dim", cell.config.trait_dim},
                            {"variant", variant_name(cell.config.variant)},
                            {"failed", cell.failed}};
        if (cell.failed) {
            j["message"] = cell.message;
        } else {
            j["final_elbo"] = cell.final_elbo;
            j["p"] = cell.p;
            j["bic"] = cell.bic;
            j["converged"] = cell.converged;
            j["start_index"] = cell.start_index;
        }
        cells.push_back(std::move(j));
    }
    nlohmann::json out = {{"cells", std::move(cells)}};
    if (table.best_index >= 0) {
        const auto& best = table.cells[static_cast<std::size_t>(table.best_index)];
        out["best"] = {{"groups", best.config.groups},
                       {"trait_dim", best.config.trait_dim},
                       {"variant", variant_name(best.config.variant)},
                       {"bic", best.bic}};
    }
    return out;
}

}  // namespace mlta
