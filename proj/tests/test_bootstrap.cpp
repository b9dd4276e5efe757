#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "mlta/bootstrap.hpp"
#include "mlta/errors.hpp"
#include "mlta/synthlab.hpp"

using namespace mlta;

TEST_CASE("resample keeps size and is an identity at N=1") {
    Eigen::MatrixXi y(1, 2);
    y << 1, 0;
    auto data = testutil::make_dataset(y);
    const Dataset r = resample(data, 5);
    CHECK(r.n_rows() == 1);
    CHECK(r.incidence.ties == y);
    CHECK(r.incidence.ids == data.incidence.ids);

    Eigen::MatrixXi y5 = Eigen::MatrixXi::Identity(5, 5);
    auto d5 = testutil::make_dataset(y5);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CHECK(resample(d5, seed).n_rows() == 5);
    }
}

TEST_CASE("resample draws rows jointly and reproducibly") {
    Eigen::MatrixXi y(4, 2);
    y << 1, 0, 0, 1, 1, 1, 0, 0;
    Eigen::MatrixXd x(4, 2);
    x << 1, 0.1, 1, 0.2, 1, 0.3, 1, 0.4;
    auto data = testutil::make_dataset(y, x);
    const Dataset a = resample(data, 17);
    const Dataset b = resample(data, 17);
    CHECK(a.incidence.ties == b.incidence.ties);
    CHECK(a.design.X == b.design.X);
    // each drawn id carries its own incidence and covariate row
    for (int i = 0; i < 4; ++i) {
        const auto it = std::find(data.incidence.ids.begin(), data.incidence.ids.end(),
                                  a.incidence.ids[static_cast<std::size_t>(i)]);
        const int src = static_cast<int>(it - data.incidence.ids.begin());
        CHECK(a.incidence.ties.row(i) == data.incidence.ties.row(src));
        CHECK(a.design.X.row(i) == data.design.X.row(src));
    }
}

TEST_CASE("resample multiplicities match the multinomial expectation") {
    const int n = 5;
    Eigen::MatrixXi y = Eigen::MatrixXi::Identity(n, n);
    auto data = testutil::make_dataset(y);
    const int replicates = 10000;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
    for (int s = 0; s < replicates; ++s) {
        const Dataset r = resample(data, static_cast<std::uint64_t>(s));
        for (const auto& id : r.incidence.ids) {
            const auto it = std::find(data.incidence.ids.begin(), data.incidence.ids.end(), id);
            counts(static_cast<int>(it - data.incidence.ids.begin())) += 1.0;
        }
    }
    // multiplicity of one row per replicate ~ Binomial(n, 1/n): mean 1,
    // variance (n-1)/n; the mean over replicates has se sqrt(var/replicates)
    const double se = std::sqrt((static_cast<double>(n - 1) / n) / replicates);
    for (int i = 0; i < n; ++i) {
        CHECK(std::abs(counts(i) / replicates - 1.0) < 3.0 * se);
    }
}

TEST_CASE("align_labels is the identity on identical models") {
    Rng rng(157);
    auto model = testutil::random_model(3, 1, Variant::Unconstrained, 4, &rng);
    const MLTAModel aligned = align_labels(model, model);
    CHECK(aligned.items.b == model.items.b);
    CHECK(aligned.gating.beta == model.gating.beta);
    for (std::size_t blk = 0; blk < model.items.w.size(); ++blk) {
        CHECK(aligned.items.w[blk] == model.items.w[blk]);
    }
}

TEST_CASE("align_labels undoes a group swap exactly") {
    Rng rng(163);
    auto reference = testutil::random_model(3, 1, Variant::Unconstrained, 4, &rng);
    reference.gating.beta = Eigen::MatrixXd::Random(2, 1);

    // permute groups 0 and 1 in the candidate, rebuilding the gating logits
    // for the new reference group
    MLTAModel swapped = reference;
    swapped.items.b.row(0) = reference.items.b.row(1);
    swapped.items.b.row(1) = reference.items.b.row(0);
    swapped.items.w[0] = reference.items.w[1];
    swapped.items.w[1] = reference.items.w[0];
    // old logits: l1 = 0, l2 = beta(0), l3 = beta(1); new order (2,1,3)
    // relative to new reference 2: l1 - l2 = -beta(0), l3 - l2
    swapped.gating.beta.row(0) = -reference.gating.beta.row(0);
    swapped.gating.beta.row(1) = reference.gating.beta.row(1) - reference.gating.beta.row(0);

    const MLTAModel aligned = align_labels(reference, swapped);
    CHECK((aligned.items.b - reference.items.b).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((aligned.gating.beta - reference.gating.beta).cwiseAbs().maxCoeff() < 1e-12);
    for (std::size_t blk = 0; blk < reference.items.w.size(); ++blk) {
        CHECK((aligned.items.w[blk] - reference.items.w[blk]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("align_labels restores slope signs without moving the likelihood") {
    Rng rng(167);
    auto reference = testutil::random_model(2, 1, Variant::Unconstrained, 4, &rng);
    MLTAModel negated = reference;
    for (auto& block : negated.items.w) block = -block;

    const MLTAModel aligned = align_labels(reference, negated);
    for (std::size_t blk = 0; blk < reference.items.w.size(); ++blk) {
        CHECK((aligned.items.w[blk] - reference.items.w[blk]).cwiseAbs().maxCoeff() < 1e-12);
    }
    auto sim = simulate(reference, testutil::intercept_design(40), 8000);
    CHECK(gh_loglik(sim.dataset, aligned) ==
          doctest::Approx(gh_loglik(sim.dataset, negated)).epsilon(1e-12));
}

TEST_CASE("align_labels rejects mismatched configurations") {
    Rng rng(173);
    auto a = testutil::random_model(2, 1, Variant::Unconstrained, 4, &rng);
    auto b = testutil::random_model(3, 1, Variant::Unconstrained, 4, &rng);
    CHECK_THROWS_AS(align_labels(a, b), ConfigError);
}

TEST_CASE("covariance_from_replicates matches the two-point formula") {
    Eigen::MatrixXd reps(2, 2);
    reps << 1.0, 4.0, 3.0, 0.0;
    const Eigen::MatrixXd v = covariance_from_replicates(reps);
    // mean (2, 2); deviations (-1, 2) and (1, -2)
    CHECK(v(0, 0) == doctest::Approx(1.0));
    CHECK(v(1, 1) == doctest::Approx(4.0));
    CHECK(v(0, 1) == doctest::Approx(-2.0));
    CHECK(v(1, 0) == doctest::Approx(-2.0));
}

TEST_CASE("bootstrap on a degenerate dataset yields zero standard errors") {
    Eigen::MatrixXi y(30, 3);
    for (int i = 0; i < 30; ++i) y.row(i) << 1, 0, 1;
    auto data = testutil::make_dataset(y);
    FitOptions opts;
    opts.starts = 2;
    opts.seed = 3;
    opts.max_outer = 2500;  // the separable boundary crawl converges slowly
    BootstrapSpec spec;
    spec.samples = 8;
    spec.seed = 19;
    const BootstrapResult result = bootstrap_se(data, {1, 0, Variant::Unconstrained}, opts, spec);
    CHECK(result.failed_replicates == 0);
    CHECK(result.se.maxCoeff() == doctest::Approx(0.0));
    CHECK((result.upper - result.lower).maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("bootstrap covariance is positive semidefinite with ordered intervals") {
    Rng rng(179);
    auto model = testutil::separated_model(2, 0, Variant::Unconstrained, 3, &rng);
    auto sim = simulate(model, testutil::intercept_design(120), 8100);
    FitOptions opts;
    opts.starts = 2;
    opts.seed = 23;
    opts.tol = 1e-5;
    BootstrapSpec spec;
    spec.samples = 12;
    spec.seed = 29;
    const BootstrapResult result = bootstrap_se(sim.dataset, model.config, opts, spec);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(result.covariance);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    for (int j = 0; j < result.lower.size(); ++j) {
        CHECK(result.lower(j) <= result.upper(j));
        CHECK(result.se(j) >= 0.0);
    }

    // widening the level widens every interval
    BootstrapSpec narrow = spec;
    narrow.level = 0.5;
    const BootstrapResult tight = bootstrap_se(sim.dataset, model.config, opts, narrow);
    for (int j = 0; j < result.lower.size(); ++j) {
        CHECK(result.upper(j) - result.lower(j) >= tight.upper(j) - tight.lower(j) - 1e-12);
    }

    // percentile endpoints are order statistics of the replicate columns
    for (int j = 0; j < result.lower.size(); ++j) {
        std::set<double> values(result.replicates.col(j).begin(), result.replicates.col(j).end());
        CHECK(values.count(result.lower(j)) == 1);
        CHECK(values.count(result.upper(j)) == 1);
    }
}

TEST_CASE("bootstrap errors out when too many replicates fail") {
    Rng rng(181);
    auto model = testutil::random_model(2, 1, Variant::Unconstrained, 3, &rng);
    auto sim = simulate(model, testutil::intercept_design(40), 8200);
    FitOptions opts;
    opts.starts = 1;
    opts.max_outer = 1;  // cannot converge in one outer iteration
    opts.tol = 1e-14;
    BootstrapSpec spec;
    spec.samples = 5;
    const FitResult point = reconstruct_fit(sim.dataset, model);
    CHECK_THROWS_AS(bootstrap_se(sim.dataset, model.config, opts, spec, &point), NumericalError);
}

TEST_CASE("flatten_params names every free parameter once") {
    Rng rng(191);
    auto model = testutil::random_model(3, 2, Variant::Unconstrained, 4, &rng);
    model.covariates = {"intercept"};
    const ParameterTable t = flatten_params(model);
    CHECK(static_cast<int>(t.names.size()) == t.values.size());
    CHECK(t.values.size() == param_count(model.config, 0, 4));
    const std::set<std::string> unique(t.names.begin(), t.names.end());
    CHECK(unique.size() == t.names.size());

    auto constrained = testutil::random_model(3, 2, Variant::Constrained, 4, &rng);
    const ParameterTable tc = flatten_params(constrained);
    CHECK(tc.values.size() == param_count(constrained.config, 0, 4));
}
