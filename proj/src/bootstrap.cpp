#include "mlta/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mlta/csv.hpp"
#include "mlta/errors.hpp"
#include "mlta/parallel.hpp"
#include "mlta/rng.hpp"

namespace mlta {

void BootstrapSpec::validate() const {
    if (samples < 2) throw ConfigError("bootstrap: need at least 2 replicates");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap: level must be in (0,1)");
}

ParameterTable flatten_params(const MLTAModel& model) {
    model.validate();
    ParameterTable table;
    std::vector<double> values;
    const int g_count = model.config.groups;
    const int r = model.n_items();
    const int d = model.config.trait_dim;
    for (int g = 1; g < g_count; ++g) {
        for (int c = 0; c < model.n_covariate_cols(); ++c) {
            table.names.push_back("beta[" + std::to_string(g + 1) + "]:" +
                                  model.covariates[static_cast<std::size_t>(c)]);
            values.push_back(model.gating.beta(g - 1, c));
        }
    }
    for (int g = 0; g < g_count; ++g) {
        for (int k = 0; k < r; ++k) {
            table.names.push_back("b[" + std::to_string(g + 1) + "]:" +
                                  model.skills[static_cast<std::size_t>(k)]);
            values.push_back(model.items.b(g, k));
        }
    }
    if (d > 0) {
        const bool shared = model.config.variant == Variant::Constrained;
        const int blocks = shared ? 1 : g_count;
        for (int blk = 0; blk < blocks; ++blk) {
            const std::string tag = shared ? "w[*]" : "w[" + std::to_string(blk + 1) + "]";
            for (int k = 0; k < r; ++k) {
                for (int dd = 0; dd < d; ++dd) {
                    table.names.push_back(tag + ":" + model.skills[static_cast<std::size_t>(k)] +
                                          ":" + std::to_string(dd + 1));
                    values.push_back(model.items.w[static_cast<std::size_t>(blk)](k, dd));
                }
            }
        }
    }
    table.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<int>(values.size()));
    return table;
}

Dataset resample(const Dataset& data, std::uint64_t seed) {
    const int n = data.n_rows();
    if (n < 1) throw DataError("resample: empty dataset");
    Rng rng(seed);
    Dataset out;
    out.incidence.skills = data.incidence.skills;
    out.design.column_names = data.design.column_names;
    out.design.variables = data.design.variables;
    out.dropped_rows = 0;
    out.incidence.ties.resize(n, data.incidence.n_items());
    out.design.X.resize(n, data.design.n_cols());
    for (int i = 0; i < n; ++i) {
        const int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        out.incidence.ids.push_back(data.incidence.ids[static_cast<std::size_t>(pick)]);
        out.design.ids.push_back(data.design.ids[static_cast<std::size_t>(pick)]);
        out.incidence.ties.row(i) = data.incidence.ties.row(pick);
        out.design.X.row(i) = data.design.X.row(pick);
    }
    return out;
}

MLTAModel align_labels(const MLTAModel& reference, const MLTAModel& candidate) {
    reference.validate();
    candidate.validate();
    if (reference.config.groups != candidate.config.groups ||
        reference.config.trait_dim != candidate.config.trait_dim ||
        reference.config.variant != candidate.config.variant) {
        throw ConfigError("align_labels: configurations differ");
    }
    const int g_count = reference.config.groups;
    const int d = reference.config.trait_dim;

    // Exact search over all G! permutations on the attractiveness distance.
    std::vector<int> perm(static_cast<std::size_t>(g_count));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best_perm = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (int g = 0; g < g_count; ++g) {
            cost += (reference.items.b.row(g) -
                     candidate.items.b.row(perm[static_cast<std::size_t>(g)]))
                        .squaredNorm();
        }
        if (cost < best_cost) {
            best_cost = cost;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    MLTAModel aligned = candidate;
    for (int g = 0; g < g_count; ++g) {
        aligned.items.b.row(g) = candidate.items.b.row(best_perm[static_cast<std::size_t>(g)]);
    }
    if (d > 0) {
        if (candidate.config.variant == Variant::Unconstrained) {
            for (int g = 0; g < g_count; ++g) {
                aligned.items.w[static_cast<std::size_t>(g)] =
                    candidate.items.w[static_cast<std::size_t>(best_perm[static_cast<std::size_t>(g)])];
            }
        }
        if (d == 1) {
            // The trait prior is symmetric, so each slope block is identified
            // only up to sign; pick the sign correlating positively with the
            // reference.
            for (std::size_t blk = 0; blk < aligned.items.w.size(); ++blk) {
                const Eigen::MatrixXd& ref_block = reference.items.w[blk];
                if ((aligned.items.w[blk].array() * ref_block.array()).sum() < 0.0) {
                    aligned.items.w[blk] = -aligned.items.w[blk];
                }
            }
        }
    }
    if (g_count > 1) {
        // Gating logits are relative to group 1; re-express them for the
        // permuted order: beta'_g = beta_{perm(g)} - beta_{perm(1)}.
        auto beta_of = [&](int g) -> Eigen::RowVectorXd {
            if (g == 0) return Eigen::RowVectorXd::Zero(candidate.gating.beta.cols());
            return candidate.gating.beta.row(g - 1);
        };
        const Eigen::RowVectorXd base = beta_of(best_perm[0]);
        for (int g = 1; g < g_count; ++g) {
            aligned.gating.beta.row(g - 1) = beta_of(best_perm[static_cast<std::size_t>(g)]) - base;
        }
    }
    return aligned;
}

Eigen::MatrixXd covariance_from_replicates(const Eigen::MatrixXd& replicates) {
    const int s = static_cast<int>(replicates.rows());
    if (s < 1) throw NumericalError("bootstrap: no replicates to aggregate");
    const Eigen::RowVectorXd mean = replicates.colwise().mean();
    const Eigen::MatrixXd centered = replicates.rowwise() - mean;
    return centered.transpose() * centered / static_cast<double>(s);
}

BootstrapResult bootstrap_se(const Dataset& data, const ModelConfig& config, const FitOptions& opts,
                             const BootstrapSpec& spec, const FitResult* point_estimate) {
    spec.validate();
    FitResult local_point;
    if (point_estimate == nullptr) {
        local_point = fit(data, config, opts);
        point_estimate = &local_point;
    }
    const ParameterTable point = flatten_params(point_estimate->model);
    const int p = static_cast<int>(point.values.size());

    struct Replicate {
        bool ok = false;
        Eigen::VectorXd values;
    };
    std::vector<Replicate> reps(static_cast<std::size_t>(spec.samples));
    parallel_for_index(spec.samples, opts.jobs, [&](int s) {
        auto& rep = reps[static_cast<std::size_t>(s)];
        try {
            const Dataset sample = resample(data, derive_seed(spec.seed, static_cast<std::uint64_t>(s)));
            FitOptions rep_opts = opts;
            rep_opts.jobs = 1;  // parallelism is spent across replicates here
            const FitResult refit = fit(sample, config, rep_opts);
            if (!refit.converged) return;
            const MLTAModel aligned = align_labels(point_estimate->model, refit.model);
            rep.values = flatten_params(aligned).values;
            rep.ok = true;
        } catch (const std::exception&) {
            rep.ok = false;
        }
    });

    int ok_count = 0;
    for (const auto& rep : reps) ok_count += rep.ok ? 1 : 0;
    const int failed = spec.samples - ok_count;
    if (failed * 5 > spec.samples) {
        throw NumericalError("bootstrap: " + std::to_string(failed) + " of " +
                             std::to_string(spec.samples) +
                             " replicates failed to converge (over 20%)");
    }

    BootstrapResult result;
    result.names = point.names;
    result.estimate = point.values;
    result.failed_replicates = failed;
    result.level = spec.level;
    result.replicates.resize(ok_count, p);
    int row = 0;
    for (const auto& rep : reps) {
        if (rep.ok) result.replicates.row(row++) = rep.values.transpose();
    }
    result.covariance = covariance_from_replicates(result.replicates);
    result.se = result.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();

    // Percentile interval: order statistics of the aligned replicate values.
    const double alpha = (1.0 - spec.level) / 2.0;
    const int lo = std::clamp(static_cast<int>(std::floor(alpha * ok_count)), 0, ok_count - 1);
    const int hi = std::clamp(static_cast<int>(std::ceil((1.0 - alpha) * ok_count)) - 1, 0, ok_count - 1);
    result.lower.resize(p);
    result.upper.resize(p);
    std::vector<double> column(static_cast<std::size_t>(ok_count));
    for (int j = 0; j < p; ++j) {
        for (int s = 0; s < ok_count; ++s) column[static_cast<std::size_t>(s)] = result.replicates(s, j);
        std::sort(column.begin(), column.end());
        result.lower(j) = column[static_cast<std::size_t>(lo)];
        result.upper(j) = column[static_cast<std::size_t>(hi)];
    }
    return result;
}

void write_bootstrap_csv(std::ostream& out, const BootstrapResult& result) {
    csv::write_row(out, {"parameter", "estimate", "se", "lower", "upper"});
    for (std::size_t j = 0; j < result.names.size(); ++j) {
        const int i = static_cast<int>(j);
        csv::write_row(out, {result.names[j], csv::format_double(result.estimate(i)),
                             csv::format_double(result.se(i)), csv::format_double(result.lower(i)),
                             csv::format_double(result.upper(i))});
    }
}

nlohmann::json bootstrap_json(const BootstrapResult& result, bool include_replicates) {
    nlohmann::json j = {{"level", result.level},
                        {"failed_replicates", result.failed_replicates},
                        {"parameters", result.names}};
    auto vec = [](const Eigen::VectorXd& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
    };
    j["estimate"] = vec(result.estimate);
    j["se"] = vec(result.se);
    j["lower"] = vec(result.lower);
    j["upper"] = vec(result.upper);
    if (include_replicates) {
        nlohmann::json rows = nlohmann::json::array();
        for (int s = 0; s < result.replicates.rows(); ++s) {
            rows.push_back(std::vector<double>(result.replicates.row(s).begin(),
                                               result.replicates.row(s).end()));
        }
        j["replicates"] = std::move(rows);
    }
    return j;
}

}  // namespace mlta
