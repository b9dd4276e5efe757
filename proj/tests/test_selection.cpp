#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "mlta/errors.hpp"
#include "mlta/selection.hpp"
#include "mlta/synthlab.hpp"

using namespace mlta;

namespace {

SelectionCell cell(int g, int d, Variant v, double bic_value, int p = 10) {
    SelectionCell c;
    c.config = {g, d, v};
    c.final_elbo = -bic_value / 2.0;
    c.p = p;
    c.bic = bic_value;
    c.converged = true;
    return c;
}

// BIC grid of a published two-group, one-trait analysis; used as a fixture
// for the selection mechanics.
SelectionTable finland_table() {
    SelectionTable t;
    const double unconstrained[4][4] = {{8744.80, 16103.64, 16283.59, 16299.93},
                                        {8744.79, 7931.08, 8009.96, 8100.53},
                                        {8715.03, 7988.37, 8093.67, 8329.72},
                                        {8848.27, 8078.93, 8214.62, 8433.85}};
    const double constrained[4][4] = {{8744.80, 16103.64, 16283.59, 16299.93},
                                      {8744.79, 7967.73, 8030.17, 7996.66},
                                      {8715.03, 8013.47, 7976.59, 8039.76},
                                      {8848.27, 8064.31, 8110.20, 8074.98}};
    for (int d = 0; d <= 3; ++d) {
        for (int g = 1; g <= 4; ++g) {
            t.cells.push_back(cell(g, d, Variant::Unconstrained, unconstrained[d][g - 1],
                                   param_count({g, d, Variant::Unconstrained}, 19, 7)));
            t.cells.push_back(cell(g, d, Variant::Constrained, constrained[d][g - 1],
                                   param_count({g, d, Variant::Constrained}, 19, 7)));
        }
    }
    return t;
}

}  // namespace

TEST_CASE("select_best on a single cell") {
    SelectionTable t;
    t.cells.push_back(cell(2, 1, Variant::Unconstrained, 123.0));
    const ModelConfig best = select_best(t);
    CHECK(best.groups == 2);
    CHECK(best.trait_dim == 1);
}

TEST_CASE("select_best breaks BIC ties toward fewer parameters") {
    SelectionTable t;
    t.cells.push_back(cell(3, 1, Variant::Unconstrained, 100.0, 48));
    t.cells.push_back(cell(2, 2, Variant::Unconstrained, 100.0, 41));
    const ModelConfig best = select_best(t);
    CHECK(best.groups == 2);
    CHECK(best.trait_dim == 2);

    // equal p: smaller G, then smaller D, then constrained first
    SelectionTable t2;
    t2.cells.push_back(cell(2, 1, Variant::Unconstrained, 100.0, 30));
    t2.cells.push_back(cell(2, 1, Variant::Constrained, 100.0, 30));
    CHECK(select_best(t2).variant == Variant::Constrained);
}

TEST_CASE("select_best picks the published optimum from the fixture table") {
    const SelectionTable t = finland_table();
    const ModelConfig best = select_best(t);
    CHECK(best.groups == 2);
    CHECK(best.trait_dim == 1);
    CHECK(best.variant == Variant::Unconstrained);
    for (const auto& c : t.cells) {
        if (c.config.groups == 2 && c.config.trait_dim == 1 && c.config.variant == Variant::Unconstrained) {
            CHECK(c.bic == doctest::Approx(7931.08));
        }
    }
}

TEST_CASE("select_best ignores failed and unconverged cells and rejects empty tables") {
    SelectionTable t;
    auto bad = cell(2, 1, Variant::Unconstrained, 10.0);
    bad.failed = true;
    t.cells.push_back(bad);
    auto unconverged = cell(3, 1, Variant::Unconstrained, 20.0);
    unconverged.converged = false;
    t.cells.push_back(unconverged);
    t.cells.push_back(cell(1, 0, Variant::Unconstrained, 30.0));
    CHECK(select_best(t).groups == 1);

    SelectionTable empty;
    CHECK_THROWS_AS(select_best(empty), NumericalError);
}

TEST_CASE("adding a strictly worse cell never changes the winner") {
    SelectionTable t = finland_table();
    const ModelConfig before = select_best(t);
    t.cells.push_back(cell(4, 3, Variant::Unconstrained, 99999.0));
    const ModelConfig after = select_best(t);
    CHECK(before.groups == after.groups);
    CHECK(before.trait_dim == after.trait_dim);
    CHECK(before.variant == after.variant);
}

TEST_CASE("grid_search mirrors degenerate cells and is reproducible") {
    Rng rng(149);
    auto model = testutil::random_model(2, 1, Variant::Unconstrained, 4, &rng, 1.5);
    auto sim = simulate(model, testutil::intercept_design(120), 7000);

    SelectionGrid grid;
    grid.groups = {1, 2};
    grid.trait_dims = {0, 1};
    grid.variants = {Variant::Unconstrained, Variant::Constrained};
    FitOptions opts;
    opts.starts = 2;
    opts.seed = 99;
    opts.max_outer = 60;

    const SelectionTable a = grid_search(sim.dataset, grid, opts);
    const SelectionTable b = grid_search(sim.dataset, grid, opts);
    REQUIRE(a.cells.size() == 8);

    auto find = [&](const SelectionTable& t, int g, int d, Variant v) -> const SelectionCell& {
        for (const auto& c : t.cells) {
            if (c.config.groups == g && c.config.trait_dim == d && c.config.variant == v) return c;
        }
        FAIL("cell not found");
        return t.cells.front();
    };

    // mirrored cells carry bitwise-equal records across variants
    for (int g : {1, 2}) {
        CHECK(find(a, g, 0, Variant::Unconstrained).final_elbo ==
              find(a, g, 0, Variant::Constrained).final_elbo);
        CHECK(find(a, g, 0, Variant::Unconstrained).bic == find(a, g, 0, Variant::Constrained).bic);
    }
    CHECK(find(a, 1, 1, Variant::Unconstrained).final_elbo ==
          find(a, 1, 1, Variant::Constrained).final_elbo);

    // determinism across repeated runs
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].final_elbo == b.cells[i].final_elbo);
        CHECK(a.cells[i].bic == b.cells[i].bic);
    }
    CHECK(a.best_index == b.best_index);
    REQUIRE(a.best_fit.has_value());

    // parallel execution does not change the table
    FitOptions par = opts;
    par.jobs = 4;
    const SelectionTable c = grid_search(sim.dataset, grid, par);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].final_elbo == c.cells[i].final_elbo);
    }
}

TEST_CASE("grid over D=0 only reproduces the latent-class BIC column") {
    Rng rng(151);
    auto model = testutil::random_model(2, 0, Variant::Unconstrained, 4, &rng);
    auto sim = simulate(model, testutil::intercept_design(100), 7100);

    SelectionGrid grid;
    grid.groups = {1, 2};
    grid.trait_dims = {0};
    grid.variants = {Variant::Unconstrained};
    FitOptions opts;
    opts.starts = 3;
    opts.seed = 5;

    const SelectionTable table = grid_search(sim.dataset, grid, opts);
    for (const auto& c : table.cells) {
        CHECK(!c.failed);
        CHECK(c.p == param_count(c.config, 0, 4));
        CHECK(c.bic == doctest::Approx(bic(c.final_elbo, c.p, 100)).epsilon(1e-12));
    }
}

TEST_CASE("selection table CSV emits the D-by-G layout") {
    const SelectionTable t = finland_table();
    std::ostringstream out;
    write_selection_csv(out, t, Variant::Unconstrained);
    const std::string text = out.str();
    CHECK(text.find("D,G=1,G=2,G=3,G=4") == 0);
    CHECK(text.find(csv::format_double(7931.08)) != std::string::npos);

    std::ostringstream outc;
    write_selection_csv(outc, t, Variant::Constrained);
    CHECK(outc.str().find(csv::format_double(7967.73)) != std::string::npos);
}
