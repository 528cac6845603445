#include "helpers.hpp"
#include "ovb/dml.hpp"
#include "ovb/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ovb;

namespace {

EvaluableFunction toy_g(const testing::DiscreteToy& t) {
    return [&t](const Matrix& r) -> Vector {
        Vector v(r.rows());
        for (Eigen::Index i = 0; i < r.rows(); ++i)
            v(i) = t.cell_mean[static_cast<int>(r(i, 0))][static_cast<int>(r(i, 1))];
        return v;
    };
}

EvaluableFunction toy_alpha(const testing::DiscreteToy& t) {
    return [&t](const Matrix& r) -> Vector {
        Vector v(r.rows());
        for (Eigen::Index i = 0; i < r.rows(); ++i) {
            const double pi = t.propensity[static_cast<int>(r(i, 1))];
            v(i) = r(i, 0) == 1 ? 1 / pi : -1 / (1 - pi);
        }
        return v;
    };
}

void check_invariants(const DmlEstimate& e) {
    const auto n = static_cast<double>(e.influence.size());
    CHECK(std::abs(e.influence.mean()) < 1e-10);
    CHECK(std::abs(e.std_error - std::sqrt(e.influence.squaredNorm()) / n) < 1e-12);
}

Dataset binary_data(std::uint64_t seed, Eigen::Index n) {
    std::mt19937_64 rng(seed);
    const Matrix x = testing::normal_matrix(rng, n, 3);
    Vector d(n), y(n);
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> z;
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i) = u(rng) < 1 / (1 + std::exp(-0.7 * x(i, 0))) ? 1 : 0;
        y(i) = 1.5 * d(i) + x(i, 0) - 0.5 * x(i, 1) * x(i, 1) + z(rng);
    }
    return testing::make_data(y, d, x);
}

}  // namespace

TEST_CASE("oracle equivalence on an enumerated discrete population") {
    const auto t = testing::discrete_toy();
    const auto nuis = testing::oracle_nuisances(t.data.n(), 5, toy_g(t), toy_alpha(t));
    FunctionalSpec spec;
    const DmlEstimate est = dml_solve(ScoreKind::Theta, spec, t.data, nuis);
    double enumerated = 0;
    for (int d = 0; d < 2; ++d)
        for (int x = 0; x < 3; ++x) {
            const double pi = t.propensity[x];
            enumerated += t.cell_prob[d][x] * t.cell_mean[d][x] * (d == 1 ? 1 / pi : -1 / (1 - pi));
        }
    CHECK(std::abs(est.value - enumerated) < 1e-9);
    check_invariants(est);
}

TEST_CASE("theta score with the exact regression on noiseless data equals the plug-in") {
    std::mt19937_64 rng(2);
    const Eigen::Index n = 400;
    const Matrix x = testing::normal_matrix(rng, n, 2);
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = static_cast<double>(i % 3 == 0);
    const EvaluableFunction g = [](const Matrix& r) -> Vector {
        return 2.0 * r.col(0) + r.col(1) + r.col(0).cwiseProduct(r.col(2));
    };
    const Dataset data = testing::make_data(g(testing::make_data(Vector::Zero(n), d, x).short_rows()), d, x);
    const auto nuis = testing::oracle_nuisances(n, 5, g, [](const Matrix& r) -> Vector { return Vector::Constant(r.rows(), 3.0); });
    FunctionalSpec spec;
    const DmlEstimate est = dml_solve(ScoreKind::Theta, spec, data, nuis);
    CHECK(est.value == doctest::Approx(plugin_theta(spec, g, data)).epsilon(1e-14));
    CHECK(est.value == doctest::Approx(2.0 + x.col(1).mean()).epsilon(1e-12));
}

TEST_CASE("sigma2 score with the mean regression is the sample variance") {
    const Dataset data = binary_data(3, 300);
    const double ybar = data.outcome.mean();
    const auto nuis = testing::oracle_nuisances(300, 3, [ybar](const Matrix& r) -> Vector { return Vector::Constant(r.rows(), ybar); },
                                                [](const Matrix& r) -> Vector { return Vector::Ones(r.rows()); });
    const DmlEstimate est = dml_solve(ScoreKind::Sigma2, FunctionalSpec{}, data, nuis);
    CHECK(est.value == doctest::Approx((data.outcome.array() - ybar).square().mean()).epsilon(1e-13));
    check_invariants(est);
}

TEST_CASE("nu2 on the constant one-half propensity toy is four") {
    const Eigen::Index n = 200;
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = static_cast<double>(i % 2);
    const Dataset data = testing::make_data(Vector::Zero(n), d, Matrix::Zero(n, 1));
    const auto nuis = testing::oracle_nuisances(n, 4, [](const Matrix& r) -> Vector { return Vector::Zero(r.rows()); },
                                                [](const Matrix& r) -> Vector { return (4.0 * r.col(0)).array() - 2.0; });
    const DmlEstimate est = dml_solve(ScoreKind::Nu2, FunctionalSpec{}, data, nuis);
    CHECK(est.value == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(est.influence.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nonpositive nu2 is an error") {
    const Dataset data = binary_data(4, 100);
    const auto nuis = testing::oracle_nuisances(100, 2, [](const Matrix& r) -> Vector { return Vector::Zero(r.rows()); },
                                                [](const Matrix& r) -> Vector { return Vector::Constant(r.rows(), 3.0); });
    try {
        dml_solve(ScoreKind::Nu2, FunctionalSpec{}, data, nuis);
        FAIL("expected nonpositive_nu2");
    } catch (const Error& e) {
        CHECK(e.kind() == "nonpositive_nu2");
    }
}

TEST_CASE("score covariance") {
    const Dataset data = binary_data(5, 500);
    EngineConfig cfg;
    cfg.outcome_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::expanded(0), 0.01, 0.0)};
    cfg.treatment_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::raw(), 0.01, 0.0)};
    cfg.riesz_method = RieszMethod::Variational;
    const ComponentEstimates c = estimate_components(data, FunctionalSpec{}, cfg);
    const Matrix one = score_covariance({c.theta});
    CHECK(one(0, 0) == doctest::Approx(500 * c.theta.std_error * c.theta.std_error).epsilon(1e-12));
    const Matrix twin = score_covariance({c.theta, c.theta});
    CHECK(twin(0, 1) / std::sqrt(twin(0, 0) * twin(1, 1)) == doctest::Approx(1.0).epsilon(1e-12));
    DmlEstimate other = c.theta;
    other.influence.resize(3);
    CHECK_THROWS_AS(score_covariance({c.theta, other}), Error);

    std::mt19937_64 rng(6);
    DmlEstimate a, b;
    a.influence = testing::normal_matrix(rng, 20000, 1).col(0);
    b.influence = testing::normal_matrix(rng, 20000, 1).col(0);
    CHECK(std::abs(score_covariance({a, b})(0, 1)) < 0.04);
}

TEST_CASE("engine estimates satisfy centering and standard-error identities") {
    const Dataset data = binary_data(7, 600);
    EngineConfig cfg;
    cfg.outcome_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::expanded(0), 0.01, 0.0)};
    cfg.treatment_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::raw(), 0.01, 0.0)};
    for (auto method : {RieszMethod::Analytic, RieszMethod::Variational}) {
        cfg.riesz_method = method;
        const ComponentEstimates c = estimate_components(data, FunctionalSpec{}, cfg);
        check_invariants(c.theta);
        check_invariants(c.sigma2);
        check_invariants(c.nu2);
        CHECK(c.theta.value == doctest::Approx(1.5).epsilon(0.25));
    }
}

TEST_CASE("engine is deterministic and independent of thread count") {
    const Dataset data = binary_data(8, 400);
    EngineConfig cfg;
    cfg.outcome_learners = {std::make_shared<TreeEnsembleLearner>(TreeEnsembleParams{})};
    cfg.treatment_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::raw(), 0.01, 0.0)};
    cfg.riesz_method = RieszMethod::Analytic;
    cfg.repetitions = 3;
    set_num_threads(1);
    const ComponentEstimates a = estimate_components(data, FunctionalSpec{}, cfg);
    set_num_threads(4);
    const ComponentEstimates b = estimate_components(data, FunctionalSpec{}, cfg);
    set_num_threads(1);
    CHECK(a.theta.value == b.theta.value);
    CHECK(a.theta.std_error == b.theta.std_error);
    CHECK(a.nu2.influence == b.nu2.influence);
    CHECK(a.diagnostics.fold_seeds.size() == 3);
}

TEST_CASE("cross-fit purity: evaluations come from the fit that excluded the row") {
    const Dataset data = binary_data(9, 300);
    EngineConfig cfg;
    cfg.outcome_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::expanded(0), 0.0, 0.0)};
    cfg.treatment_learners = {std::make_shared<PenalizedLinearLearner>(Dictionary::raw(), 0.0, 0.0)};
    cfg.riesz_method = RieszMethod::Variational;
    const ComponentEstimates c = estimate_components(data, FunctionalSpec{}, cfg);
    // Refit on all rows: predictions at training points differ from the out-of-fold values.
    const Matrix w = data.short_rows();
    const Vector in_sample = cfg.outcome_learners[0]->fit(w, data.outcome)->predict(w);
    CHECK((in_sample - c.values.g).cwiseAbs().maxCoeff() > 1e-6);
    // Recompute with an explicit fold plan and compare row by row.
    const FoldPlan plan = make_fold_plan(data.n(), cfg.folds, c.diagnostics.fold_seeds.at(0));
    for (int f = 0; f < cfg.folds; ++f) {
        const auto train = plan.train_rows(f);
        const auto fit = cfg.outcome_learners[0]->fit(select_rows(w, train), select_rows(data.outcome, train));
        const auto test = plan.test_rows(f);
        const Vector pred = fit->predict(select_rows(w, test));
        for (std::size_t k = 0; k < test.size(); ++k)
            CHECK(c.values.g(test[k]) == doctest::Approx(pred(static_cast<Eigen::Index>(k))).epsilon(1e-12));
    }
}

TEST_CASE("repetition aggregation uses the median and inflates the standard error") {
    std::vector<DmlEstimate> reps(3);
    const double vals[3] = {1.0, 2.0, 4.0}, ses[3] = {0.1, 0.2, 0.3};
    for (int r = 0; r < 3; ++r) {
        reps[r].value = vals[r];
        reps[r].std_error = ses[r];
        reps[r].influence = Vector::LinSpaced(10, -1, 1) * (r + 1);
        reps[r].folds = 5;
    }
    const DmlEstimate agg = aggregate_repetitions(reps);
    CHECK(agg.value == 2.0);
    // median of {0.01 + 1, 0.04 + 0, 0.09 + 4}
    CHECK(agg.std_error == doctest::Approx(std::sqrt(1.01)).epsilon(1e-12));
    CHECK(agg.repetitions == 3);
    CHECK(std::sqrt(agg.influence.squaredNorm()) / 10 == doctest::Approx(agg.std_error).epsilon(1e-12));
}

TEST_CASE("orthogonality of the three scores at oracle nuisances") {
    SynthSpec s;
    s.dgp = SynthDgp::AcdGaussian;
    s.n = 20000;
    s.p = 2;
    s.cy2 = 0.1;
    s.cd2 = 0.1;
    s.sigma_v = 10.0;
    s.sigma_eps = 0.1;
    s.quadratic = 0.05;
    s.seed = 11;
    const SynthResult r = generate(s);
    const auto& o = r.oracle;
    const auto nuis = testing::oracle_nuisances(s.n, 5, o.g_short, o.alpha_short);
    const Matrix w = r.data.short_rows();
    // Unit-RMS directions built from observables.
    const EvaluableFunction h = [](const Matrix& rows) -> Vector {
        return (0.1 * rows.col(0) + rows.col(1)).array().sin() * std::sqrt(2.0);
    };
    const double tol = 5e-3;  // MC noise at n = 2e4
    CHECK(std::abs(orthogonality_check(ScoreKind::Theta, o.functional, r.data, nuis, h, NuisanceComponent::G, 1e-3)) < tol);
    CHECK(std::abs(orthogonality_check(ScoreKind::Theta, o.functional, r.data, nuis, h, NuisanceComponent::Alpha, 1e-3)) < tol);
    CHECK(std::abs(orthogonality_check(ScoreKind::Sigma2, o.functional, r.data, nuis, h, NuisanceComponent::G, 1e-3)) < tol);
    CHECK(std::abs(orthogonality_check(ScoreKind::Nu2, o.functional, r.data, nuis, h, NuisanceComponent::Alpha, 1e-3)) < tol);

    // Wrong representer: derivative in g is E[h (alpha_s - alpha_wrong)].
    const auto alpha_s = o.alpha_short;
    const EvaluableFunction wrong = [alpha_s, h](const Matrix& rows) -> Vector { return alpha_s(rows) - 0.2 * h(rows); };
    const auto bad = testing::oracle_nuisances(s.n, 5, o.g_short, wrong);
    const double contrast = orthogonality_check(ScoreKind::Theta, o.functional, r.data, bad, h, NuisanceComponent::G, 1e-3);
    CHECK(contrast == doctest::Approx(0.2 * h(w).squaredNorm() / static_cast<double>(s.n) + orthogonality_check(ScoreKind::Theta, o.functional, r.data, nuis, h, NuisanceComponent::G, 1e-3)).epsilon(1e-9));
    CHECK(std::abs(contrast) > 10 * tol);
}
