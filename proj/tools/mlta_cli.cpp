// Command-line front end: file-based pipeline over the library modules.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "mlta/bootstrap.hpp"
#include "mlta/data.hpp"
#include "mlta/errors.hpp"
#include "mlta/fit.hpp"
#include "mlta/posthoc.hpp"
#include "mlta/selection.hpp"
#include "mlta/synthlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string sha256_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mlta::ConfigError("cannot open input file: " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        char b[3];
        std::snprintf(b, sizeof b, "%02x", md[i]);
        hex += b;
    }
    return hex;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mlta::ConfigError("cannot open JSON file: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw mlta::ConfigError("malformed JSON in " + path + ": " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mlta::ConfigError("cannot write output file: " + path.string());
    out << text;
}

void write_manifest(const fs::path& out_dir, const std::string& subcommand, const json& options,
                    const std::vector<std::string>& inputs, std::uint64_t seed) {
    json digests = json::object();
    for (const auto& path : inputs) digests[path] = "sha256:" + sha256_hex(path);
    const json manifest = {{"tool", "mlta"},          {"version", kVersion},
                           {"subcommand", subcommand}, {"options", options},
                           {"inputs", digests},        {"seed", seed},
                           {"wall_clock", utc_now()}};
    write_text_file(out_dir / (subcommand + ".manifest.json"), manifest.dump(2) + "\n");
}

fs::path ensure_out_dir(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

struct DatasetArgs {
    std::string incidence;
    std::string design;
    std::string design_meta;

    void attach(CLI::App* cmd) {
        cmd->add_option("--incidence", incidence, "incidence matrix CSV")->required();
        cmd->add_option("--design", design, "covariate design CSV")->required();
        cmd->add_option("--design-meta", design_meta, "design metadata JSON (category levels)");
    }

    mlta::Dataset load() const {
        mlta::Dataset data;
        data.incidence = mlta::read_incidence_csv(mlta::csv::read_file(incidence));
        if (design_meta.empty()) {
            data.design = mlta::read_design_csv(mlta::csv::read_file(design), nullptr);
        } else {
            const json meta = read_json_file(design_meta);
            data.design = mlta::read_design_csv(mlta::csv::read_file(design), &meta);
        }
        if (data.incidence.ids != data.design.ids) {
            throw mlta::DataError("incidence and design files carry different id sequences");
        }
        return data;
    }

    std::vector<std::string> paths() const {
        std::vector<std::string> p{incidence, design};
        if (!design_meta.empty()) p.push_back(design_meta);
        return p;
    }
};

struct FitArgs {
    int starts = 10;
    std::uint64_t seed = 0;
    double tol = 1e-6;
    int max_iter = 1000;
    int inner_sweeps = 3;
    int jobs = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--starts", starts, "random starts")->capture_default_str();
        cmd->add_option("--seed", seed, "master RNG seed")->capture_default_str();
        cmd->add_option("--tol", tol, "relative ELBO tolerance")->capture_default_str();
        cmd->add_option("--max-iter", max_iter, "outer iteration cap")->capture_default_str();
        cmd->add_option("--inner-sweeps", inner_sweeps, "variational sweeps per outer iteration")
            ->capture_default_str();
        cmd->add_option("--jobs", jobs, "worker threads for starts/cells/replicates")
            ->capture_default_str();
    }

    mlta::FitOptions options() const {
        mlta::FitOptions opts;
        opts.starts = starts;
        opts.seed = seed;
        opts.tol = tol;
        opts.max_outer = max_iter;
        opts.inner_sweeps = inner_sweeps;
        opts.jobs = jobs;
        return opts;
    }

    json to_json() const {
        return {{"starts", starts},       {"seed", seed},
                {"tol", tol},             {"max_iter", max_iter},
                {"inner_sweeps", inner_sweeps}, {"jobs", jobs}};
    }
};

std::vector<int> parse_int_grid(const std::string& text, const char* what) {
    std::vector<int> values;
    const auto dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            const int lo = std::stoi(text.substr(0, dots));
            const int hi = std::stoi(text.substr(dots + 2));
            for (int v = lo; v <= hi; ++v) values.push_back(v);
        } else {
            std::size_t pos = 0;
            while (pos < text.size()) {
                const auto comma = text.find(',', pos);
                const auto token = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
                values.push_back(std::stoi(token));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
    } catch (const std::exception&) {
        throw mlta::ConfigError(std::string("cannot parse ") + what + " grid: '" + text + "'");
    }
    if (values.empty()) throw mlta::ConfigError(std::string("empty ") + what + " grid");
    return values;
}

void write_fit_outputs(const fs::path& out_dir, const mlta::FitResult& result,
                       const mlta::Dataset& data, const std::string& prefix = "") {
    write_text_file(out_dir / (prefix + "fit.json"), mlta::fit_result_json(result).dump(2) + "\n");
    const mlta::AssignmentTable table = mlta::map_assign(data.incidence.ids, result.state.z_hat);
    std::ofstream out(out_dir / (prefix + "assignments.csv"));
    mlta::write_assignments_csv(out, table);
}

int run_ingest(const std::string& raw_path, const std::string& rules_path,
               const std::string& missing_override, bool missing_set, const std::string& out) {
    const fs::path out_dir = ensure_out_dir(out);
    const mlta::IngestRules rules = mlta::parse_rules(read_json_file(rules_path));
    const std::string missing = missing_set ? missing_override : rules.missing_marker;
    const auto raw = mlta::RawSurveyTable::from_csv(mlta::csv::read_file(raw_path), missing);

    const auto flagged_incidence = mlta::dichotomize(raw, rules.items);
    const auto flagged_design = mlta::encode_covariates(raw, rules.covariates);
    for (const auto& warning : flagged_design.warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    const mlta::Dataset data = mlta::complete_cases(flagged_incidence, flagged_design);

    {
        std::ofstream f(out_dir / "incidence.csv");
        mlta::write_incidence_csv(f, data.incidence);
    }
    {
        std::ofstream f(out_dir / "design.csv");
        mlta::write_design_csv(f, data.design);
    }
    write_text_file(out_dir / "design.meta.json", mlta::design_meta_json(data.design).dump(2) + "\n");

    {
        std::ofstream f(out_dir / "summary.csv");
        mlta::csv::write_row(f, {"section", "name", "category", "value"});
        mlta::csv::write_row(f, {"dataset", "n_rows", "", std::to_string(data.n_rows())});
        mlta::csv::write_row(f, {"dataset", "dropped_rows", "", std::to_string(data.dropped_rows)});
        const Eigen::VectorXd density = mlta::tie_density(data.incidence);
        for (int k = 0; k < density.size(); ++k) {
            mlta::csv::write_row(f, {"skill", data.incidence.skills[static_cast<std::size_t>(k)], "",
                                     mlta::csv::format_double(density(k))});
        }
        for (const auto& var : data.design.variables) {
            for (std::size_t lv = 0; lv < var.levels.size(); ++lv) {
                double share = 0.0;
                const int col = var.level_columns[lv];
                if (col >= 0) {
                    share = data.design.X.col(col).mean();
                } else {
                    share = 1.0;
                    for (int c : var.level_columns) {
                        if (c >= 0) share -= data.design.X.col(c).mean();
                    }
                }
                mlta::csv::write_row(f, {"covariate", var.name, var.levels[lv],
                                         mlta::csv::format_double(share)});
            }
        }
    }
    write_manifest(out_dir, "ingest",
                   {{"raw", raw_path}, {"rules", rules_path}, {"missing", missing}, {"out", out}},
                   {raw_path, rules_path}, 0);
    std::cout << "ingest: " << data.n_rows() << " rows, " << data.incidence.n_items() << " skills, "
              << data.design.n_cols() << " design columns, dropped " << data.dropped_rows << "\n";
    return 0;
}

int run_simulate(const std::string& model_path, const DatasetArgs& dataset_args, bool has_design,
                 int n, std::uint64_t seed, const std::string& out) {
    const fs::path out_dir = ensure_out_dir(out);
    const mlta::MLTAModel model = mlta::model_from_json(read_json_file(model_path));
    mlta::CovariateDesign design;
    std::vector<std::string> inputs{model_path};
    if (has_design) {
        if (dataset_args.design_meta.empty()) {
            design = mlta::read_design_csv(mlta::csv::read_file(dataset_args.design), nullptr);
        } else {
            const json meta = read_json_file(dataset_args.design_meta);
            design = mlta::read_design_csv(mlta::csv::read_file(dataset_args.design), &meta);
        }
        inputs.push_back(dataset_args.design);
        if (!dataset_args.design_meta.empty()) inputs.push_back(dataset_args.design_meta);
    } else {
        if (n < 1) throw mlta::ConfigError("simulate: need --design or --n");
        if (model.n_covariate_cols() != 1) {
            throw mlta::ConfigError(
                "simulate: --n builds an intercept-only design, but the model has covariates");
        }
        design.column_names = {"intercept"};
        design.X = Eigen::MatrixXd::Ones(n, 1);
        char buf[16];
        for (int i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, "sim%06d", i + 1);
            design.ids.push_back(buf);
        }
    }
    const mlta::SimTruth truth = mlta::simulate(model, design, seed);
    mlta::write_sim_truth(out_dir.string(), truth);
    write_manifest(out_dir, "simulate", {{"model", model_path}, {"n", n}, {"out", out}}, inputs, seed);
    std::cout << "simulate: " << design.n_rows() << " rows written to " << out << "\n";
    return 0;
}

int run_fit(const DatasetArgs& dataset_args, const FitArgs& fit_args, int groups, int trait_dim,
            bool constrained, const std::string& out) {
    const fs::path out_dir = ensure_out_dir(out);
    const mlta::Dataset data = dataset_args.load();
    const mlta::ModelConfig config{
        groups, trait_dim, constrained ? mlta::Variant::Constrained : mlta::Variant::Unconstrained};
    const mlta::FitResult result = mlta::fit(data, config, fit_args.options());
    write_fit_outputs(out_dir, result, data);
    json options = fit_args.to_json();
    options["groups"] = groups;
    options["trait_dim"] = trait_dim;
    options["constrained"] = constrained;
    write_manifest(out_dir, "fit", options, dataset_args.paths(), fit_args.seed);
    std::cout << "fit: elbo " << result.final_elbo << ", bic " << result.bic << ", converged "
              << (result.converged ? "yes" : "no") << ", winning start " << result.start_index
              << "\n";
    return 0;
}

int run_select(const DatasetArgs& dataset_args, const FitArgs& fit_args, const std::string& grid_g,
               const std::string& grid_d, const std::string& variants, const std::string& out) {
    const fs::path out_dir = ensure_out_dir(out);
    const mlta::Dataset data = dataset_args.load();
    mlta::SelectionGrid grid;
    grid.groups = parse_int_grid(grid_g, "G");
    grid.trait_dims = parse_int_grid(grid_d, "D");
    if (variants == "both") {
        grid.variants = {mlta::Variant::Unconstrained, mlta::Variant::Constrained};
    } else {
        grid.variants = {mlta::variant_from_name(variants)};
    }
    const mlta::SelectionTable table = mlta::grid_search(data, grid, fit_args.options());
    for (const mlta::Variant v : grid.variants) {
        std::ofstream f(out_dir / ("bic_" + mlta::variant_name(v) + ".csv"));
        mlta::write_selection_csv(f, table, v);
    }
    write_text_file(out_dir / "selection.json", mlta::selection_json(table).dump(2) + "\n");
    if (table.best_fit.has_value()) {
        write_fit_outputs(out_dir, *table.best_fit, data, "best_");
    }
    json options = fit_args.to_json();
    options["grid_g"] = grid_g;
    options["grid_d"] = grid_d;
    options["variants"] = variants;
    write_manifest(out_dir, "select", options, dataset_args.paths(), fit_args.seed);
    const auto& best = table.cells[static_cast<std::size_t>(table.best_index)];
    std::cout << "select: best G=" << best.config.groups << " D=" << best.config.trait_dim << " "
              << mlta::variant_name(best.config.variant) << " (bic " << best.bic << ")\n";
    return 0;
}

int run_bootstrap(const DatasetArgs& dataset_args, const FitArgs& fit_args, int groups,
                  int trait_dim, bool constrained, int samples, double level,
                  std::uint64_t bootstrap_seed, bool emit_replicates, const std::string& out) {
    const fs::path out_dir = ensure_out_dir(out);
    const mlta::Dataset data = dataset_args.load();
    const mlta::ModelConfig config{
        groups, trait_dim, constrained ? mlta::Variant::Constrained : mlta::Variant::Unconstrained};
    mlta::BootstrapSpec spec;
    spec.samples = samples;
    spec.level = level;
    spec.seed = bootstrap_seed;
    const mlta::BootstrapResult result = mlta::bootstrap_se(data, config, fit_args.options(), spec);
    {
        std::ofstream f(out_dir / "bootstrap.csv");
        mlta::write_bootstrap_csv(f, result);
    }
    write_text_file(out_dir / "bootstrap.json",
                    mlta::bootstrap_json(result, emit_replicates).dump(2) + "\n");
    json options = fit_args.to_json();
    options["groups"] = groups;
    options["trait_dim"] = trait_dim;
    options["constrained"] = constrained;
    options["bootstrap_samples"] = samples;
    options["level"] = level;
    options["bootstrap_seed"] = bootstrap_seed;
    write_manifest(out_dir, "bootstrap", options, dataset_args.paths(), bootstrap_seed);
    std::cout << "bootstrap: " << result.replicates.rows() << " replicates kept, "
              << result.failed_replicates << " failed\n";
    return 0;
}

int run_predict(const std::string& fit_path, const DatasetArgs& dataset_args,
                const std::string& variables, const std::string& out) {
    const fs::path out_dir = ensure_out_dir(out);
    const mlta::Dataset data = dataset_args.load();
    const json fit_json = read_json_file(fit_path);
    if (!fit_json.contains("model")) throw mlta::ConfigError("predict: fit JSON has no model block");
    const mlta::MLTAModel model = mlta::model_from_json(fit_json.at("model"));
    const mlta::FitResult rec = mlta::reconstruct_fit(data, model);

    const mlta::AssignmentTable table = mlta::map_assign(data.incidence.ids, rec.state.z_hat);
    {
        std::ofstream f(out_dir / "assignments.csv");
        mlta::write_assignments_csv(f, table);
    }
    const mlta::SkillProbSummary summary = mlta::predicted_skill_probs(rec, data);
    {
        std::ofstream f(out_dir / "skill_probs.csv");
        mlta::write_skill_probs_csv(f, summary, data.incidence.ids);
    }
    {
        std::ofstream f(out_dir / "skill_prob_means.csv");
        mlta::write_skill_prob_means_csv(f, summary);
    }
    std::vector<std::string> vars;
    if (variables.empty()) {
        for (const auto& v : data.design.variables) vars.push_back(v.name);
    } else {
        std::size_t pos = 0;
        while (pos < variables.size()) {
            const auto comma = variables.find(',', pos);
            vars.push_back(variables.substr(pos, comma == std::string::npos ? comma : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    for (const auto& name : vars) {
        const mlta::GroupProbTable probs = mlta::group_probs_by_covariate(rec, data, name);
        std::ofstream f(out_dir / ("group_probs_" + name + ".csv"));
        mlta::write_group_probs_csv(f, probs);
    }
    std::vector<std::string> inputs = dataset_args.paths();
    inputs.push_back(fit_path);
    write_manifest(out_dir, "predict", {{"fit", fit_path}, {"variables", variables}, {"out", out}},
                   inputs, 0);
    std::cout << "predict: wrote assignments and skill/group probability tables to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture of latent trait analyzers for binary bipartite networks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto* ingest = app.add_subcommand("ingest", "dichotomize a raw survey CSV into dataset files");
    std::string raw_path, rules_path, missing_override, out_dir;
    ingest->add_option("--raw", raw_path, "raw survey CSV (first column id)")->required();
    ingest->add_option("--rules", rules_path, "rules/schema JSON")->required();
    auto* missing_opt = ingest->add_option("--missing", missing_override, "missing marker override");
    ingest->add_option("--out", out_dir, "output directory")->required();

    auto* simulate_cmd = app.add_subcommand("simulate", "draw a synthetic dataset from a model JSON");
    std::string model_path;
    DatasetArgs sim_design;
    int sim_n = 0;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    simulate_cmd->add_option("--model", model_path, "model JSON")->required();
    auto* sim_design_opt =
        simulate_cmd->add_option("--design", sim_design.design, "covariate design CSV");
    simulate_cmd->add_option("--design-meta", sim_design.design_meta, "design metadata JSON");
    simulate_cmd->add_option("--n", sim_n, "rows for an intercept-only design");
    simulate_cmd->add_option("--seed", sim_seed, "RNG seed")->capture_default_str();
    simulate_cmd->add_option("--out", sim_out, "output directory")->required();

    auto* fit_cmd = app.add_subcommand("fit", "fit one model configuration");
    DatasetArgs fit_data;
    FitArgs fit_args;
    int groups = 1, trait_dim = 0;
    bool constrained = false;
    std::string fit_out;
    fit_data.attach(fit_cmd);
    fit_cmd->add_option("--groups", groups, "number of groups G")->required();
    fit_cmd->add_option("--trait-dim", trait_dim, "latent trait dimension D")->required();
    fit_cmd->add_flag("--constrained", constrained, "share slopes across groups");
    fit_args.attach(fit_cmd);
    fit_cmd->add_option("--out", fit_out, "output directory")->required();

    auto* select_cmd = app.add_subcommand("select", "BIC grid search over (G, D, variant)");
    DatasetArgs select_data;
    FitArgs select_args;
    std::string grid_g = "1..4", grid_d = "0..3", variants = "both", select_out;
    select_data.attach(select_cmd);
    select_cmd->add_option("--grid-g", grid_g, "groups grid, e.g. 1..4 or 1,2,3")->capture_default_str();
    select_cmd->add_option("--grid-d", grid_d, "trait-dimension grid")->capture_default_str();
    select_cmd->add_option("--variants", variants, "both | unconstrained | constrained")
        ->capture_default_str();
    select_args.attach(select_cmd);
    select_cmd->add_option("--out", select_out, "output directory")->required();

    auto* boot_cmd = app.add_subcommand("bootstrap", "nonparametric bootstrap standard errors");
    DatasetArgs boot_data;
    FitArgs boot_args;
    int boot_groups = 1, boot_trait_dim = 0, boot_samples = 200;
    bool boot_constrained = false, emit_replicates = false;
    double level = 0.95;
    std::uint64_t boot_seed = 0;
    std::string boot_out;
    boot_data.attach(boot_cmd);
    boot_cmd->add_option("--groups", boot_groups, "number of groups G")->required();
    boot_cmd->add_option("--trait-dim", boot_trait_dim, "latent trait dimension D")->required();
    boot_cmd->add_flag("--constrained", boot_constrained, "share slopes across groups");
    boot_cmd->add_option("--bootstrap-samples", boot_samples, "replicates S")->capture_default_str();
    boot_cmd->add_option("--level", level, "confidence level")->capture_default_str();
    boot_cmd->add_option("--bootstrap-seed", boot_seed, "resampling seed")->capture_default_str();
    boot_cmd->add_flag("--emit-replicates", emit_replicates,
                       "include the replicate matrix in the JSON");
    boot_args.attach(boot_cmd);
    boot_cmd->add_option("--out", boot_out, "output directory")->required();

    auto* predict_cmd = app.add_subcommand("predict", "post-hoc tables from a stored fit");
    DatasetArgs predict_data;
    std::string predict_fit, predict_vars, predict_out;
    predict_cmd->add_option("--fit", predict_fit, "fit JSON from the fit/select stage")->required();
    predict_data.attach(predict_cmd);
    predict_cmd->add_option("--variables", predict_vars, "comma-separated covariates (default: all)");
    predict_cmd->add_option("--out", predict_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (ingest->parsed()) {
            return run_ingest(raw_path, rules_path, missing_override, missing_opt->count() > 0,
                              out_dir);
        }
        if (simulate_cmd->parsed()) {
            return run_simulate(model_path, sim_design, sim_design_opt->count() > 0, sim_n, sim_seed,
                                sim_out);
        }
        if (fit_cmd->parsed()) {
            return run_fit(fit_data, fit_args, groups, trait_dim, constrained, fit_out);
        }
        if (select_cmd->parsed()) {
            return run_select(select_data, select_args, grid_g, grid_d, variants, select_out);
        }
        if (boot_cmd->parsed()) {
            return run_bootstrap(boot_data, boot_args, boot_groups, boot_trait_dim, boot_constrained,
                                 boot_samples, level, boot_seed, emit_replicates, boot_out);
        }
        if (predict_cmd->parsed()) {
            return run_predict(predict_fit, predict_data, predict_vars, predict_out);
        }
        throw mlta::ConfigError("no subcommand selected");
    } catch (const mlta::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const mlta::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const mlta::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
