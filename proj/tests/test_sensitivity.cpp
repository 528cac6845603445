#include "helpers.hpp"
#include "ovb/sensitivity.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ovb;

namespace {

struct Components {
    DmlEstimate theta, sigma2, nu2;
};

// Estimates with given values and arbitrary centred influence vectors.
Components components(double theta, double sigma2, double nu2, Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix z = testing::normal_matrix(rng, n, 3);
    z.col(1) += 0.5 * z.col(0);
    for (Eigen::Index j = 0; j < 3; ++j) z.col(j).array() -= z.col(j).mean();
    Components c;
    const double values[3] = {theta, sigma2, nu2};
    const double scales[3] = {3.0, 2.0, 5.0};
    DmlEstimate* e[3] = {&c.theta, &c.sigma2, &c.nu2};
    for (int k = 0; k < 3; ++k) {
        e[k]->value = values[k];
        e[k]->influence = scales[k] * z.col(k);
        e[k]->std_error = std::sqrt(e[k]->influence.squaredNorm()) / static_cast<double>(n);
    }
    return c;
}

}  // namespace

TEST_CASE("bound arithmetic on a reference example") {
    const auto p = SensitivityParams::from_eta(0.04, 0.03);
    const PointBounds b = point_bounds(9189, 119837, p);
    CHECK(std::abs(b.bias_bound - 4215) <= 1);
    CHECK(std::abs(b.theta_minus - 4974) <= 1);
    CHECK(std::abs(b.theta_plus - 13404) <= 1);
    CHECK(std::abs(robustness_value(9189, 119837, 0) - 0.074) <= 0.001);
}

TEST_CASE("partial eta squared arithmetic") {
    CHECK(partial_eta2(0.28 + 0.03, 0.28) == doctest::Approx(0.041666666666666664).epsilon(1e-12));
    const Vector v = Vector::LinSpaced(50, -1, 3);
    CHECK(eta_nonparametric(v, Vector::Constant(50, v.mean())) == 0.0);
    CHECK(eta_nonparametric(v, v) == doctest::Approx(1.0));
    CHECK_THROWS_AS(eta_nonparametric(Vector::Ones(5), Vector::Ones(5)), Error);
}

TEST_CASE("cd2 conversion") {
    CHECK(cd2_from_eta(0.5) == 1.0);
    double prev = -1;
    for (double e = 0; e < 0.999; e += 0.01) {
        const double c = cd2_from_eta(e);
        CHECK(c > prev);
        prev = c;
        CHECK(std::abs(eta_from_cd2(c) - e) < 1e-12);
    }
    CHECK_THROWS_AS(cd2_from_eta(1.0), Error);
    CHECK_THROWS_AS(SensitivityParams::from_eta(0.1, 0.1, 1.5), Error);
}

TEST_CASE("compute_bounds: bias identity, ordering and influence formula") {
    const Components c = components(2.0, 1.5, 3.0, 800, 1);
    const auto p = SensitivityParams::direct(0.2, 0.3, 0.7);
    const BoundsResult b = compute_bounds(c.theta, c.sigma2, c.nu2, p, 0.05);
    const double S = std::sqrt(1.5 * 3.0);
    CHECK(std::abs(b.bias_bound - S * 0.7 * std::sqrt(0.06)) < 1e-12);
    CHECK(b.theta_minus <= b.theta_s);
    CHECK(b.theta_s <= b.theta_plus);
    CHECK(b.conf_lower <= b.theta_minus);
    CHECK(b.theta_plus <= b.conf_upper);
    // phi = psi_theta -/+ (|rho|/2)(Cy Cd / S)(sigma2 psi_nu2 + nu2 psi_sigma2)
    const double k = 0.35 * std::sqrt(0.06) / S;
    const Vector phi = c.theta.influence - k * (1.5 * c.nu2.influence + 3.0 * c.sigma2.influence);
    CHECK((b.influence_minus - phi).cwiseAbs().maxCoeff() < 1e-12);
    const double z = 1.6448536269514722;
    CHECK(b.conf_lower == doctest::Approx(b.theta_minus - z * std::sqrt(phi.squaredNorm()) / 800).epsilon(1e-12));
}

TEST_CASE("compute_bounds: no confounding gives ordinary one-sided intervals") {
    const Components c = components(-1.0, 2.0, 0.5, 300, 2);
    for (const auto& p : {SensitivityParams::direct(0.0, 0.4), SensitivityParams::direct(0.4, 0.4, 0.0)}) {
        const BoundsResult b = compute_bounds(c.theta, c.sigma2, c.nu2, p, 0.05);
        CHECK(b.bias_bound == 0.0);
        CHECK(b.theta_minus == -1.0);
        CHECK(b.conf_lower == doctest::Approx(-1.0 - 1.6448536269514722 * c.theta.std_error).epsilon(1e-12));
        CHECK(b.conf_upper == doctest::Approx(-1.0 + 1.6448536269514722 * c.theta.std_error).epsilon(1e-12));
    }
    Components bad = c;
    bad.nu2.value = 0;
    CHECK_THROWS_AS(compute_bounds(bad.theta, bad.sigma2, bad.nu2, SensitivityParams::direct(0.1, 0.1), 0.05), Error);
    CHECK_THROWS_AS(compute_bounds(c.theta, c.sigma2, c.nu2, SensitivityParams::direct(0.1, 0.1), 0.6), Error);
}

TEST_CASE("bias bound is monotone in each strength parameter") {
    const double S = 2.5;
    double last = -1;
    for (double cy = 0; cy <= 1.0; cy += 0.1) {
        const double b = point_bounds(0, S, SensitivityParams::direct(cy, 0.3)).bias_bound;
        CHECK(b >= last);
        last = b;
    }
    last = -1;
    for (double cd = 0; cd <= 5.0; cd += 0.25) {
        const double b = point_bounds(0, S, SensitivityParams::direct(0.3, cd)).bias_bound;
        CHECK(b >= last);
        last = b;
    }
    last = -1;
    for (double r = 0; r <= 1.0; r += 0.1) {
        const double b = point_bounds(0, S, SensitivityParams::direct(0.3, 0.3, r)).bias_bound;
        CHECK(b >= last);
        last = b;
    }
}

TEST_CASE("robustness value: closed form, bisection oracle and self-consistency") {
    CHECK(robustness_value(3.0, 2.0, 3.0) == 0.0);
    CHECK_THROWS_AS(robustness_value(1.0, 0.0, 0.0), Error);
    for (double theta : {9189.0, -0.701, 0.05, 12.0}) {
        const double S = 119837.0 * (theta == 9189.0) + 14.56 * (theta == -0.701) + 1.0 * (theta == 0.05) + 3.0 * (theta == 12.0);
        const double r = robustness_value(theta, S, 0.0);
        CHECK(std::abs(S * std::sqrt(r * r / (1 - r)) - std::abs(theta)) < 1e-9 * std::max(1.0, std::abs(theta)));
        // Bisection on the lower bound at equal strength on both axes.
        double lo = 0, hi = 1 - 1e-15;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (S * std::sqrt(mid * mid / (1 - mid)) < std::abs(theta) ? lo : hi) = mid;
        }
        CHECK(r == doctest::Approx(lo).epsilon(1e-9));
    }
}

TEST_CASE("confidence robustness value matches an independent bisection") {
    const Components c = components(1.2, 1.0, 2.0, 500, 3);
    const double a = 0.05, z = 1.6448536269514722;
    auto lower = [&](double r) {
        const double cc = std::sqrt(r * r / (1 - r));
        const double S = std::sqrt(2.0);
        const Vector phi = c.theta.influence - 0.5 * cc / S * (1.0 * c.nu2.influence + 2.0 * c.sigma2.influence);
        return 1.2 - S * cc - z * std::sqrt(phi.squaredNorm()) / 500;
    };
    double lo = 0, hi = 1 - 1e-12;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (lower(mid) > 0 ? lo : hi) = mid;
    }
    const double rv_a = robustness_value_conf(c.theta, c.sigma2, c.nu2, 0.0, a);
    CHECK(std::abs(rv_a - lo) < 2e-6);
    CHECK(rv_a < robustness_value(1.2, std::sqrt(2.0), 0.0));
    CHECK(robustness_value_conf(c.theta, c.sigma2, c.nu2, 1.2, a) == 0.0);
    DmlEstimate bare = c.theta;
    bare.influence.resize(0);
    CHECK(std::isnan(robustness_value_conf(bare, c.sigma2, c.nu2, 0.0, a)));
}

TEST_CASE("contour grid") {
    const Components c = components(9189, 119837.0 * 119837.0 / 4.0, 4.0, 400, 4);
    SUBCASE("zero axes") {
        const ContourGrid g = contour_grid(c.theta, c.sigma2, c.nu2, 1.0, {0.0}, {0.0}, ContourQuantity::Lower, 0, 0.05);
        CHECK(g.cells[0][0].theta_minus == 9189);
        CHECK(g.cells[0][0].theta_plus == 9189);
        CHECK(g.cells[0][0].bias_bound == 0);
    }
    SUBCASE("cell reproduces the reference lower bound") {
        const ContourGrid g = contour_grid(c.theta, c.sigma2, c.nu2, 1.0, {0.0, 0.03}, {0.0, 0.04}, ContourQuantity::Lower, 0, 0.05);
        CHECK(std::abs(g.cells[1][1].theta_minus - 4974) <= 1);
    }
    SUBCASE("bias increases along both axes") {
        const auto axis = linear_axis(0, 0.5, 11);
        const ContourGrid g = contour_grid(c.theta, c.sigma2, c.nu2, 1.0, axis, axis, ContourQuantity::Bias, 0, 0.05);
        const Matrix v = g.values();
        for (Eigen::Index i = 0; i < v.rows(); ++i)
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                if (i > 0) CHECK(v(i, j) >= v(i - 1, j));
                if (j > 0) CHECK(v(i, j) >= v(i, j - 1));
            }
        CHECK(g.to_csv().rfind("eta_d2,eta_y2,value\n", 0) == 0);
    }
    SUBCASE("critical contour crosses the diagonal at the robustness value") {
        const auto axis = linear_axis(0, 0.2, 201);
        const ContourGrid g = contour_grid(c.theta, c.sigma2, c.nu2, 1.0, axis, axis, ContourQuantity::Lower, 0, 0.05);
        const auto cross = diagonal_crossing(g);
        REQUIRE(cross);
        CHECK(std::abs(*cross - robustness_value(9189, 119837, 0)) < 0.001);
        const ContourGrid gc = contour_grid(c.theta, c.sigma2, c.nu2, 1.0, axis, axis, ContourQuantity::ConfLower, 0, 0.05);
        CHECK(std::abs(*diagonal_crossing(gc) - robustness_value_conf(c.theta, c.sigma2, c.nu2, 0, 0.05)) < 0.001);
    }
    CHECK_THROWS_AS(contour_grid(c.theta, c.sigma2, c.nu2, 1.0, {0.0, 1.0}, {0.0}, ContourQuantity::Bias, 0, 0.05), Error);
    CHECK_THROWS_AS(contour_grid(c.theta, c.sigma2, c.nu2, 1.0, {0.2, 0.1}, {0.0}, ContourQuantity::Bias, 0, 0.05), Error);
}

TEST_CASE("implied bounds from benchmark gains") {
    BenchmarkRow row;
    row.delta_eta_y2 = 0.11;
    row.delta_eta_d2 = 0.01;
    row.rho_j = -0.21;
    const ImpliedBound b = implied_bound(row, 2.0, 0.28, 0.1, 10.0);
    CHECK(b.eta_y2 == doctest::Approx(0.22 / 0.72));
    CHECK(b.eta_d2 == doctest::Approx(0.02 / 0.9));
    const double cc = std::sqrt(b.eta_y2 * b.eta_d2 / (1 - b.eta_d2));
    CHECK(b.bias_adversarial == doctest::Approx(10.0 * cc));
    CHECK(b.bias_with_rho_j == doctest::Approx(2.1 * cc));
    row.delta_eta_d2 = -0.02;
    const ImpliedBound z = implied_bound(row, 1.0, 0.28, 0.1, 10.0);
    CHECK(z.eta_d2 == 0.0);
    CHECK(z.bias_with_rho_j == 0.0);
}

namespace {

EngineConfig plm_engine() {
    EngineConfig cfg;
    cfg.outcome_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::raw(), 0.001, 0.0)};
    cfg.treatment_learners = cfg.outcome_learners;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("benchmark: a single driving covariate") {
    // D = X1 + V, Y = D + X1 + e, X2 irrelevant.
    std::mt19937_64 rng(5);
    const Eigen::Index n = 6000;
    const Matrix z = testing::normal_matrix(rng, n, 4);
    const Matrix x = z.leftCols(2);
    const Vector d = z.col(0) + z.col(2);
    const Vector y = d + z.col(0) + z.col(3);
    const Dataset data = testing::make_data(y, d, x);
    FunctionalSpec spec;
    spec.kind = FunctionalKind::PLMCoefficient;
    const BenchmarkResult r = benchmark_covariates(data, spec, plm_engine(), {"x1", "x2", "nope"}, {1.0, 2.0});
    REQUIRE(r.rows.size() == 3);
    // eta^2 of Y on (D, X) is 5/6; on D alone 3/4. eta^2 of D on X is 1/2, on X2 alone 0.
    CHECK(r.eta_y_base == doctest::Approx(5.0 / 6.0).epsilon(0.03));
    CHECK(r.rows[0].delta_eta_y2 == doctest::Approx(1.0 / 12.0).epsilon(0.25));
    CHECK(r.rows[0].delta_eta_d2 == doctest::Approx(0.5).epsilon(0.06));
    CHECK(r.rows[0].delta_theta == doctest::Approx(-0.5).epsilon(0.1));
    CHECK(std::abs(r.rows[1].delta_eta_y2) < 0.01);
    CHECK(std::abs(r.rows[1].delta_eta_d2) < 0.01);
    CHECK(r.rows[0].implied.size() == 2);
    CHECK(r.rows[2].error.find("nope") != std::string::npos);
}

TEST_CASE("benchmark: a duplicated covariate carries no information") {
    std::mt19937_64 rng(6);
    const Eigen::Index n = 2000;
    const Matrix z = testing::normal_matrix(rng, n, 3);
    Matrix x(n, 2);
    x.col(0) = z.col(0);
    x.col(1) = z.col(0);
    const Vector d = z.col(0) + z.col(1);
    const Vector y = d + 2 * z.col(0) + z.col(2);
    FunctionalSpec spec;
    spec.kind = FunctionalKind::PLMCoefficient;
    const BenchmarkResult r = benchmark_covariates(testing::make_data(y, d, x), spec, plm_engine(), {"x2"});
    CHECK(std::abs(r.rows[0].delta_eta_y2) < 1e-3);
    CHECK(std::abs(r.rows[0].delta_eta_d2) < 1e-3);
    CHECK(std::abs(r.rows[0].delta_theta) < 1e-3);
}
