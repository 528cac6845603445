#include "helpers.hpp"
#include "ovb/synth.hpp"

#include <doctest.h>

#include <cmath>

using namespace ovb;

namespace {

struct Moments {
    double bg2, ba2, rho, cross, sigma2, nu2;
};

// Sample moments of the oracle long/short gaps on the realized data.
Moments realized(const SynthResult& r) {
    const Matrix w = r.data.short_rows();
    const Matrix lw = long_rows(r.data, r.oracle.realized_A);
    const Vector eg = r.oracle.g_long(lw) - r.oracle.g_short(w);
    const Vector ea = r.oracle.alpha_long(lw) - r.oracle.alpha_short(w);
    const auto n = static_cast<double>(w.rows());
    Moments m{};
    m.bg2 = eg.squaredNorm() / n;
    m.ba2 = ea.squaredNorm() / n;
    m.cross = eg.dot(ea) / n;
    m.rho = m.cross / std::sqrt(m.bg2 * m.ba2);
    m.sigma2 = (r.data.outcome - r.oracle.g_short(w)).squaredNorm() / n;
    m.nu2 = r.oracle.alpha_short(w).squaredNorm() / n;
    return m;
}

}  // namespace

TEST_CASE("Gaussian designs hit the requested strength") {
    for (auto dgp : {SynthDgp::PlmGaussian, SynthDgp::AcdGaussian}) {
        for (double rho : {1.0, 0.4, -0.6}) {
            SynthSpec s;
            s.dgp = dgp;
            s.n = 200000;
            s.cy2 = 0.2;
            s.cd2 = 0.3;
            s.rho = rho;
            s.quadratic = dgp == SynthDgp::AcdGaussian ? 0.3 : 0.0;
            s.seed = 7;
            const SynthResult r = generate(s);
            const PopulationSummary& pop = r.oracle.population;
            CHECK(pop.cy2 == doctest::Approx(0.2).epsilon(1e-10));
            CHECK(pop.cd2 == doctest::Approx(0.3).epsilon(1e-10));
            CHECK(pop.rho == doctest::Approx(rho).epsilon(1e-10));
            const Moments m = realized(r);
            CHECK(m.bg2 == doctest::Approx(pop.b_g2).epsilon(0.02));
            CHECK(m.ba2 == doctest::Approx(pop.b_alpha2).epsilon(0.02));
            CHECK(m.sigma2 == doctest::Approx(pop.sigma2_s).epsilon(0.02));
            CHECK(m.nu2 == doctest::Approx(pop.nu2_s).epsilon(0.02));
            CHECK(m.rho == doctest::Approx(rho).epsilon(0.03));
            // theta - theta_s = E (g - g_s)(alpha - alpha_s)
            CHECK(std::abs((r.oracle.true_theta - r.oracle.true_theta_s) - m.cross) < 0.02 * std::sqrt(pop.b_g2 * pop.b_alpha2));
        }
    }
}

TEST_CASE("long-short gaps are orthogonal to functions of observables") {
    SynthSpec s;
    s.n = 200000;
    s.cy2 = 0.3;
    s.cd2 = 0.5;
    s.rho = 0.7;
    s.seed = 8;
    const SynthResult r = generate(s);
    const Matrix w = r.data.short_rows();
    const Matrix lw = long_rows(r.data, r.oracle.realized_A);
    const Vector eg = r.oracle.g_long(lw) - r.oracle.g_short(w);
    const Vector ea = r.oracle.alpha_long(lw) - r.oracle.alpha_short(w);
    const Vector h1 = w.col(0);
    const Vector h2 = w.col(1).array().cos();
    const Vector h3 = w.col(0).cwiseProduct(w.col(2));
    for (const Vector* h : {&h1, &h2, &h3}) {
        const double scale_g = std::sqrt(eg.squaredNorm() * h->squaredNorm()) / s.n;
        const double scale_a = std::sqrt(ea.squaredNorm() * h->squaredNorm()) / s.n;
        CHECK(std::abs(eg.dot(*h) / s.n) < 0.01 * scale_g + 1e-12);
        CHECK(std::abs(ea.dot(*h) / s.n) < 0.01 * scale_a + 1e-12);
    }
}

TEST_CASE("no confounding means equal targets") {
    SynthSpec s;
    s.n = 100;
    const SynthResult r = generate(s);
    CHECK(r.oracle.true_theta == r.oracle.true_theta_s);
    s.b_g = 0.0;
    s.b_alpha = 0.5;
    CHECK(generate(s).oracle.true_theta == generate(s).oracle.true_theta_s);
}

TEST_CASE("binary design with constant propensity") {
    SynthSpec s;
    s.dgp = SynthDgp::BinaryAteLogit;
    s.n = 500;
    s.beta_scale = 0.0;
    s.seed = 3;
    const SynthResult r = generate(s);
    const Vector a = r.oracle.alpha_short(r.data.short_rows());
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(std::abs(a(i)) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.data.treatment_is_binary());
}

TEST_CASE("binary design hits the requested strength") {
    SynthSpec s;
    s.dgp = SynthDgp::BinaryAteLogit;
    s.n = 200000;
    s.cy2 = 0.1;
    s.cd2 = 0.2;
    s.rho = -1.0;
    s.seed = 4;
    const SynthResult r = generate(s);
    const PopulationSummary& pop = r.oracle.population;
    CHECK(pop.cy2 == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(pop.cd2 == doctest::Approx(0.2).epsilon(1e-4));
    CHECK(pop.rho < 0);
    const Moments m = realized(r);
    CHECK(m.bg2 == doctest::Approx(pop.b_g2).epsilon(0.03));
    CHECK(m.ba2 == doctest::Approx(pop.b_alpha2).epsilon(0.05));
    CHECK(m.nu2 == doctest::Approx(pop.nu2_s).epsilon(0.03));
    CHECK(m.rho == doctest::Approx(pop.rho).epsilon(0.05));
    CHECK(std::abs((r.oracle.true_theta - r.oracle.true_theta_s) - m.cross) < 0.05 * std::sqrt(pop.b_g2 * pop.b_alpha2));
    s.cd2 = 1e100;
    CHECK_THROWS_AS(generate(s), Error);
}

TEST_CASE("generation is reproducible from the seed") {
    for (auto dgp : {SynthDgp::PlmGaussian, SynthDgp::BinaryAteLogit, SynthDgp::AcdGaussian}) {
        SynthSpec s;
        s.dgp = dgp;
        s.n = 300;
        s.cy2 = 0.1;
        s.cd2 = 0.1;
        s.seed = 99;
        const SynthResult a = generate(s), b = generate(s);
        CHECK(a.data.outcome == b.data.outcome);
        CHECK(a.data.covariates == b.data.covariates);
        CHECK(a.oracle.realized_A == b.oracle.realized_A);
        s.seed = 100;
        CHECK(generate(s).data.outcome != a.data.outcome);
        CHECK(synth_dgp_from_string(to_string(dgp)) == dgp);
    }
}

TEST_CASE("synth config validation") {
    SynthSpec s;
    s.cy2 = 0.1;
    CHECK_THROWS_AS(s.validate(), Error);
    s.cd2 = 0.1;
    s.b_g = 0.1;
    CHECK_THROWS_AS(s.validate(), Error);
    SynthSpec q;
    q.quadratic = 1.0;
    CHECK_THROWS_AS(q.validate(), Error);
    CHECK_THROWS_AS(synth_dgp_from_string("nope"), Error);
}

TEST_CASE("PSD square root") {
    Matrix m(2, 2);
    m << 1, 0, 0, 1;
    CHECK(psd_sqrt(m).isApprox(Matrix::Identity(2, 2)));
    m << 4, 2, 2, 1;
    const Matrix r = psd_sqrt(m);
    CHECK((r * r - m).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((r - r.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rationalizing confounding") {
    SynthSpec s;
    s.n = 100000;
    s.sigma_eps = 2.0;
    s.seed = 12;
    const SynthResult base = generate(s);
    const ShortModel sm{base.data, base.oracle.g_short, base.oracle.alpha_short, base.oracle.true_theta_s};

    SUBCASE("rho zero gives the identity loadings") {
        const RationalizedModel r = rationalize_confounding(0.0, 1.0, 1.0, sm, 1);
        CHECK((r.loadings - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("adversarial confounding attains the bound") {
        const double bg = 0.6, ba = 0.8;
        const RationalizedModel r = rationalize_confounding(1.0, bg, ba, sm, 2);
        const SynthResult wrapped{r.data, r.oracle};
        const Moments m = realized(wrapped);
        CHECK(m.rho == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(std::abs(m.cross) / (bg * ba) == doctest::Approx(1.0).epsilon(0.02));
        CHECK(r.oracle.true_theta - r.oracle.true_theta_s == doctest::Approx(bg * ba).epsilon(1e-12));
        CHECK(m.sigma2 == doctest::Approx(realized(base).sigma2).epsilon(0.02));
    }
    SUBCASE("negative correlation") {
        const RationalizedModel r = rationalize_confounding(-0.5, 0.5, 0.5, sm, 3);
        const Moments m = realized(SynthResult{r.data, r.oracle});
        CHECK(m.rho == doctest::Approx(-0.5).epsilon(0.03));
        CHECK(r.oracle.true_theta < r.oracle.true_theta_s);
    }
    SUBCASE("no outcome confounding") {
        const RationalizedModel r = rationalize_confounding(1.0, 0.0, 0.7, sm, 4);
        CHECK(r.oracle.true_theta == r.oracle.true_theta_s);
    }
    SUBCASE("budget") {
        try {
            rationalize_confounding(1.0, 10.0, 1.0, sm, 5);
            FAIL("expected confounding_budget");
        } catch (const Error& e) {
            CHECK(e.kind() == "confounding_budget");
        }
    }
}

TEST_CASE("natural confounding: mean squared correlation is one over K") {
    for (int k : {1, 2, 10}) {
        const double m = natural_confounding_rho2(k, 100000, static_cast<std::uint64_t>(k));
        CHECK(m == doctest::Approx(1.0 / k).epsilon(0.05));
    }
}

TEST_CASE("coverage experiment with oracle nuisances") {
    SynthSpec s;
    s.n = 500;
    s.cy2 = 0.1;
    s.cd2 = 0.1;
    s.seed = 21;
    CoverageConfig cfg;
    cfg.reps = 300;
    cfg.mode = NuisanceMode::Oracle;
    const CoverageSummary sum = coverage_experiment(s, cfg);
    CHECK(sum.failures == 0);
    // Two-sided nominal 1 - 2a = 0.9; 99% binomial band for 300 reps.
    const double band = 2.5758 * std::sqrt(0.9 * 0.1 / 300);
    CHECK(std::abs(sum.coverage_theta_s - 0.9) <= band);
    CHECK(sum.coverage_lower >= 0.9);
    CHECK(sum.coverage_upper >= 0.9);
    CHECK(sum.to_csv().find("conf_lower") != std::string::npos);

    SUBCASE("true rho zero, assumed one: conservative") {
        SynthSpec z = s;
        z.rho = 0.0;
        CoverageConfig c2 = cfg;
        c2.reps = 100;
        c2.assumed = SensitivityParams::direct(0.1, 0.1, 1.0);
        const CoverageSummary cz = coverage_experiment(z, c2);
        CHECK(cz.coverage_theta >= 0.99);
    }
    SUBCASE("small n warning and minimum replications") {
        SynthSpec tiny = s;
        tiny.n = 50;
        CoverageConfig c3 = cfg;
        c3.reps = 100;
        const CoverageSummary ct = coverage_experiment(tiny, c3);
        CHECK(!ct.warnings.empty());
        c3.reps = 50;
        CHECK_THROWS_AS(coverage_experiment(tiny, c3), Error);
    }
}
