#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mlta/data.hpp"
#include "mlta/model.hpp"
#include "mlta/rng.hpp"

namespace testutil {

inline std::vector<std::string> make_ids(int n) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids.push_back("n" + std::to_string(i + 1));
    return ids;
}

inline mlta::CovariateDesign intercept_design(int n) {
    mlta::CovariateDesign d;
    d.ids = make_ids(n);
    d.column_names = {"intercept"};
    d.X = Eigen::MatrixXd::Ones(n, 1);
    return d;
}

inline mlta::Dataset make_dataset(const Eigen::MatrixXi& y, const Eigen::MatrixXd& x) {
    mlta::Dataset data;
    data.incidence.ids = make_ids(static_cast<int>(y.rows()));
    for (int k = 0; k < y.cols(); ++k) data.incidence.skills.push_back("s" + std::to_string(k + 1));
    data.incidence.ties = y;
    data.design.ids = data.incidence.ids;
    data.design.column_names.push_back("intercept");
    for (int c = 1; c < x.cols(); ++c) data.design.column_names.push_back("x" + std::to_string(c));
    data.design.X = x;
    return data;
}

inline mlta::Dataset make_dataset(const Eigen::MatrixXi& y) {
    return make_dataset(y, Eigen::MatrixXd::Ones(static_cast<int>(y.rows()), 1));
}

// Model with intercept-only gating. beta2 applies when g > 1 (every
// non-reference group gets the same intercept coefficient).
inline mlta::MLTAModel make_model(int g, int d, mlta::Variant variant, const Eigen::MatrixXd& b,
                                  const std::vector<Eigen::MatrixXd>& w, double beta2 = 0.0) {
    mlta::MLTAModel m;
    m.config = {g, d, variant};
    m.covariates = {"intercept"};
    for (int k = 0; k < b.cols(); ++k) m.skills.push_back("s" + std::to_string(k + 1));
    m.items.b = b;
    m.items.w = w;
    if (g > 1) m.gating.beta = Eigen::MatrixXd::Constant(g - 1, 1, beta2);
    m.validate();
    return m;
}

// Well-separated mixture: group attractiveness rows spread apart so the
// likelihood surface has one dominant optimum that independent estimators
// agree on.
inline mlta::MLTAModel separated_model(int g, int d, mlta::Variant variant, int r, mlta::Rng* rng,
                                       double gap = 1.5) {
    Eigen::MatrixXd b(g, r);
    for (int gg = 0; gg < g; ++gg) {
        const double center = gap * (2.0 * gg - (g - 1));
        for (int k = 0; k < r; ++k) b(gg, k) = center + 0.4 * (2.0 * rng->uniform() - 1.0);
    }
    std::vector<Eigen::MatrixXd> w;
    if (d > 0) {
        const int blocks = variant == mlta::Variant::Constrained ? 1 : g;
        for (int blk = 0; blk < blocks; ++blk) {
            Eigen::MatrixXd wg(r, d);
            for (int k = 0; k < r; ++k) {
                for (int dd = 0; dd < d; ++dd) wg(k, dd) = 0.5 + 0.5 * rng->uniform();
            }
            w.push_back(std::move(wg));
        }
    }
    return make_model(g, d, variant, b, w, 0.25);
}

// Random model on an intercept-only design, parameters uniform in
// [-scale, scale].
inline mlta::MLTAModel random_model(int g, int d, mlta::Variant variant, int r, mlta::Rng* rng,
                                    double scale = 2.0) {
    Eigen::MatrixXd b(g, r);
    for (int gg = 0; gg < g; ++gg) {
        for (int k = 0; k < r; ++k) b(gg, k) = scale * (2.0 * rng->uniform() - 1.0);
    }
    std::vector<Eigen::MatrixXd> w;
    if (d > 0) {
        const int blocks = variant == mlta::Variant::Constrained ? 1 : g;
        for (int blk = 0; blk < blocks; ++blk) {
            Eigen::MatrixXd wg(r, d);
            for (int k = 0; k < r; ++k) {
                for (int dd = 0; dd < d; ++dd) wg(k, dd) = scale * (2.0 * rng->uniform() - 1.0);
            }
            w.push_back(std::move(wg));
        }
    }
    const double beta2 = g > 1 ? scale * (2.0 * rng->uniform() - 1.0) : 0.0;
    return make_model(g, d, variant, b, w, beta2);
}

}  // namespace testutil
