#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "mlta/errors.hpp"
#include "mlta/posthoc.hpp"
#include "mlta/quadrature.hpp"

using namespace mlta;

namespace {

// A dataset with one two-level covariate ("v" in {a, b}, reference b).
Dataset covariate_dataset(const Eigen::MatrixXi& y, const std::vector<int>& v_is_a) {
    Dataset data = testutil::make_dataset(y);
    const int n = data.n_rows();
    data.design.column_names = {"intercept", "v=a"};
    data.design.X.resize(n, 2);
    data.design.X.col(0).setOnes();
    for (int i = 0; i < n; ++i) data.design.X(i, 1) = v_is_a[static_cast<std::size_t>(i)];
    CovariateVariable var;
    var.name = "v";
    var.levels = {"a", "b"};
    var.reference = "b";
    var.level_columns = {1, -1};
    data.design.variables = {var};
    return data;
}

}  // namespace

TEST_CASE("map_assign takes the row argmax with ties to the lowest group") {
    Eigen::MatrixXd z(3, 2);
    z << 0.7, 0.3, 0.5, 0.5, 0.2, 0.8;
    const AssignmentTable t = map_assign({"a", "b", "c"}, z);
    CHECK(t.group == std::vector<int>{1, 1, 2});

    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 1);
    const AssignmentTable t1 = map_assign({"a", "b", "c", "d"}, ones);
    CHECK(t1.group == std::vector<int>{1, 1, 1, 1});
}

TEST_CASE("map labels are invariant under monotone transformations of a row") {
    Rng rng(193);
    for (int trial = 0; trial < 30; ++trial) {
        Eigen::MatrixXd z(1, 4);
        for (int g = 0; g < 4; ++g) z(0, g) = rng.uniform();
        z /= z.sum();
        const auto base = map_assign({"x"}, z);
        Eigen::MatrixXd logz = z.array().log().matrix();  // strictly monotone map
        Eigen::MatrixXd expz = (3.0 * z).array().exp().matrix();
        CHECK(map_assign({"x"}, logz).group == base.group);
        CHECK(map_assign({"x"}, expz).group == base.group);
    }
}

TEST_CASE("predicted skill probabilities are degenerate without a trait") {
    Eigen::MatrixXd b(2, 2);
    b << 1.0, -0.5, -1.0, 0.5;
    auto model = testutil::make_model(2, 0, Variant::Unconstrained, b, {}, 0.0);
    Eigen::MatrixXi y(6, 2);
    y << 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 1, 1;
    auto data = testutil::make_dataset(y);
    const FitResult rec = reconstruct_fit(data, model);
    const SkillProbSummary summary = predicted_skill_probs(rec, data);
    for (int g = 0; g < 2; ++g) {
        for (int k = 0; k < 2; ++k) {
            for (double p : summary.probs[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)]) {
                CHECK(p == doctest::Approx(sigmoid(b(g, k))).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("zero slope pins one item at sigmoid(b) while others vary") {
    Eigen::MatrixXd b(1, 2);
    b << 0.3, -0.8;
    std::vector<Eigen::MatrixXd> w{(Eigen::MatrixXd(2, 1) << 0.0, 1.2).finished()};
    auto model = testutil::make_model(1, 1, Variant::Unconstrained, b, w);
    auto sim = simulate(model, testutil::intercept_design(40), 9000);
    const FitResult rec = reconstruct_fit(sim.dataset, model);
    const SkillProbSummary summary = predicted_skill_probs(rec, sim.dataset);
    for (double p : summary.probs[0][0]) CHECK(p == doctest::Approx(sigmoid(0.3)).epsilon(1e-12));
    double spread = 0.0;
    for (double p : summary.probs[0][1]) spread = std::max(spread, std::abs(p - sigmoid(-0.8)));
    CHECK(spread > 1e-3);
}

TEST_CASE("group skill-probability means track the quadrature conditional expectation") {
    Rng rng(197);
    Eigen::MatrixXd b(2, 4);
    b << -1.2, -0.8, -1.5, -1.0, 1.1, 0.9, 1.4, 0.7;
    std::vector<Eigen::MatrixXd> w{Eigen::MatrixXd::Constant(4, 1, 0.7),
                                   Eigen::MatrixXd::Constant(4, 1, 0.6)};
    auto model = testutil::make_model(2, 1, Variant::Unconstrained, b, w, 0.0);
    auto sim = simulate(model, testutil::intercept_design(300), 9100);
    const FitResult rec = reconstruct_fit(sim.dataset, model);
    const SkillProbSummary summary = predicted_skill_probs(rec, sim.dataset);
    const AssignmentTable assign = map_assign(sim.dataset.incidence.ids, rec.state.z_hat);

    // oracle: per individual, E[sigmoid(b + w u) | y_i, group g] by
    // quadrature over the exact trait posterior; averaged within the
    // MAP-assigned group
    const GaussHermite gh = gauss_hermite(60);
    for (int g = 0; g < 2; ++g) {
        for (int k = 0; k < 4; ++k) {
            double total = 0.0;
            int count = 0;
            for (int i = 0; i < sim.dataset.n_rows(); ++i) {
                if (assign.group[static_cast<std::size_t>(i)] - 1 != g) continue;
                double num = 0.0, den = 0.0;
                for (int j = 0; j < gh.nodes.size(); ++j) {
                    double log_lik = gh.log_weights(j);
                    for (int kk = 0; kk < 4; ++kk) {
                        const double a = b(g, kk) + w[static_cast<std::size_t>(g)](kk, 0) * gh.nodes(j);
                        log_lik += sim.dataset.incidence.ties(i, kk) == 1 ? log_sigmoid(a)
                                                                          : log_sigmoid(-a);
                    }
                    const double lik = std::exp(log_lik);
                    den += lik;
                    num += lik * sigmoid(b(g, k) + w[static_cast<std::size_t>(g)](k, 0) * gh.nodes(j));
                }
                total += num / den;
                ++count;
            }
            if (count == 0) continue;
            CHECK(summary.means(g, k) == doctest::Approx(total / count).epsilon(0.05));
        }
    }
}

TEST_CASE("quadrature-integrated skill probabilities stay in [0,1] and near plug-in") {
    Rng rng(199);
    auto model = testutil::random_model(2, 1, Variant::Unconstrained, 3, &rng, 1.0);
    auto sim = simulate(model, testutil::intercept_design(50), 9200);
    const FitResult rec = reconstruct_fit(sim.dataset, model);
    const SkillProbSummary plug = predicted_skill_probs(rec, sim.dataset, TraitIntegration::PlugIn);
    const SkillProbSummary quad = predicted_skill_probs(rec, sim.dataset, TraitIntegration::Quadrature);
    for (int g = 0; g < 2; ++g) {
        for (int k = 0; k < 3; ++k) {
            CHECK(quad.means(g, k) >= 0.0);
            CHECK(quad.means(g, k) <= 1.0);
            CHECK(std::abs(quad.means(g, k) - plug.means(g, k)) < 0.15);
        }
    }
}

TEST_CASE("group membership probabilities by covariate category") {
    Eigen::MatrixXi y(6, 2);
    y << 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 1, 1;

    // beta = 0: every cell is 1/G
    {
        auto data = covariate_dataset(y, {1, 0, 1, 0, 1, 0});
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
        auto model = testutil::make_model(2, 0, Variant::Unconstrained, b, {}, 0.0);
        model.covariates = {"intercept", "v=a"};
        model.gating.beta = Eigen::MatrixXd::Zero(1, 2);
        const FitResult rec = reconstruct_fit(data, model);
        const GroupProbTable table = group_probs_by_covariate(rec, data, "v");
        for (int c = 0; c < 2; ++c) {
            for (int g = 0; g < 2; ++g) CHECK(table.probs(c, g) == doctest::Approx(0.5));
            CHECK(table.probs.row(c).sum() == doctest::Approx(1.0).epsilon(1e-10));
        }
    }

    // intercept-only gating with beta_2 = ln 3: every category row is (0.25, 0.75)
    {
        auto data = covariate_dataset(y, {1, 1, 0, 0, 1, 0});
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
        auto model = testutil::make_model(2, 0, Variant::Unconstrained, b, {}, 0.0);
        model.covariates = {"intercept", "v=a"};
        model.gating.beta.resize(1, 2);
        model.gating.beta << std::log(3.0), 0.0;
        const FitResult rec = reconstruct_fit(data, model);
        const GroupProbTable table = group_probs_by_covariate(rec, data, "v");
        for (int c = 0; c < 2; ++c) {
            CHECK(table.probs(c, 0) == doctest::Approx(0.25).epsilon(1e-12));
            CHECK(table.probs(c, 1) == doctest::Approx(0.75).epsilon(1e-12));
        }
    }

    // empty category gets a missing marker row
    {
        auto data = covariate_dataset(y, {1, 1, 1, 1, 1, 1});
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
        auto model = testutil::make_model(2, 0, Variant::Unconstrained, b, {}, 0.3);
        model.covariates = {"intercept", "v=a"};
        model.gating.beta.resize(1, 2);
        model.gating.beta << 0.3, 0.1;
        const FitResult rec = reconstruct_fit(data, model);
        const GroupProbTable table = group_probs_by_covariate(rec, data, "v");
        CHECK(table.category_counts[1] == 0);
        CHECK(std::isnan(table.probs(1, 0)));
        CHECK(table.probs.row(0).sum() == doctest::Approx(1.0).epsilon(1e-10));

        std::ostringstream out;
        write_group_probs_csv(out, table);
        CHECK(out.str().find("NA") != std::string::npos);

        CHECK_THROWS_AS(group_probs_by_covariate(rec, data, "nope"), DataError);
    }
}

TEST_CASE("predicted probabilities are invariant under the D=1 sign flip") {
    Rng rng(211);
    auto model = testutil::random_model(2, 1, Variant::Unconstrained, 3, &rng);
    auto sim = simulate(model, testutil::intercept_design(40), 9300);
    const FitResult rec = reconstruct_fit(sim.dataset, model);

    MLTAModel flipped = model;
    for (auto& block : flipped.items.w) block = -block;
    const FitResult rec_flipped = reconstruct_fit(sim.dataset, flipped);

    const SkillProbSummary a = predicted_skill_probs(rec, sim.dataset);
    const SkillProbSummary b = predicted_skill_probs(rec_flipped, sim.dataset);
    CHECK((a.means - b.means).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("assignment CSV layout") {
    Eigen::MatrixXd z(2, 2);
    z << 0.9, 0.1, 0.2, 0.8;
    const AssignmentTable t = map_assign({"p1", "p2"}, z);
    std::ostringstream out;
    write_assignments_csv(out, t);
    const std::string text = out.str();
    CHECK(text.find("id,group,z_1,z_2") == 0);
    CHECK(text.find("p1,1,") != std::string::npos);
    CHECK(text.find("p2,2,") != std::string::npos);
}
