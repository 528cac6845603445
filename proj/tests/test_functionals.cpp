#include "helpers.hpp"
#include "ovb/expr.hpp"
#include "ovb/functionals.hpp"

#include <doctest.h>

#include <cmath>

using namespace ovb;

namespace {

Matrix rows_dx(std::initializer_list<std::pair<double, double>> vals) {
    Matrix m(static_cast<Eigen::Index>(vals.size()), 2);
    Eigen::Index i = 0;
    for (auto [d, x] : vals) {
        m(i, 0) = d;
        m(i, 1) = x;
        ++i;
    }
    return m;
}

const std::vector<std::string> kNames{"d", "x1"};

}  // namespace

TEST_CASE("expression language") {
    Matrix r(2, 2);
    r << 1, 2, 0, -3;
    CHECK(Expression::parse("d + 2 * x1").evaluate(r, kNames).isApprox(Vector((Vector(2) << 5, -6).finished())));
    CHECK(Expression::parse("(x1 > 0) * 3 - -1").evaluate(r, kNames) == Vector((Vector(2) << 4, 1).finished()));
    CHECK(Expression::parse("x1 / 2 <= -1.5").evaluate(r, kNames) == Vector((Vector(2) << 0, 1).finished()));
    CHECK(Expression::parse("1e-1 * 10").evaluate(r, kNames).isApprox(Vector::Ones(2)));
    CHECK(Expression::parse("x1 + d * x1").identifiers() == std::vector<std::string>{"d", "x1"});
    auto kind = [&](const std::string& src) {
        try {
            Expression::parse(src).evaluate(r, kNames);
        } catch (const Error& e) {
            return e.kind();
        }
        return std::string("none");
    };
    CHECK(kind("1 +") == "expr_parse");
    CHECK(kind("(1") == "expr_parse");
    CHECK(kind("income * 2") == "expr_unknown_column");
}

TEST_CASE("binary ATE m-score of f(d,x)=d is one") {
    FunctionalSpec spec;
    spec.kind = FunctionalKind::BinaryATE;
    const Matrix rows = rows_dx({{0, 1}, {1, 2}, {1, -1}});
    const EvaluableFunction f = [](const Matrix& r) -> Vector { return r.col(0); };
    CHECK(m_score(spec, f, rows) == Vector::Ones(3));
}

TEST_CASE("binary APO and weights") {
    FunctionalSpec spec;
    spec.kind = FunctionalKind::BinaryAPO;
    spec.apo_level = 0.0;
    const Matrix rows = rows_dx({{0, 1}, {1, 2}});
    const EvaluableFunction f = [](const Matrix& r) -> Vector {
        return (r.col(1).array() + 10 * r.col(0).array()).matrix();
    };
    CHECK(m_score(spec, f, rows, kNames) == Vector((Vector(2) << 1, 2).finished()));
    spec.weight = Expression::parse("x1 > 1");
    CHECK(m_score(spec, f, rows, kNames) == Vector((Vector(2) << 0, 2).finished()));
}

TEST_CASE("ACD central difference is exact for quadratics") {
    FunctionalSpec spec;
    spec.kind = FunctionalKind::ACD;
    spec.fd_step = 0.01;
    const Matrix rows = rows_dx({{1, 0}, {1, 5}});
    const EvaluableFunction sq = [](const Matrix& r) -> Vector { return r.col(0).array().square().matrix(); };
    CHECK((m_score(spec, sq, rows).array() - 2.0).abs().maxCoeff() < 1e-10);
}

TEST_CASE("ACD of a linear function is its slope for any step") {
    const Dataset data = testing::make_data(Vector::Zero(4), Vector::LinSpaced(4, -1, 2), Matrix::Zero(4, 1));
    const EvaluableFunction g = [](const Matrix& r) -> Vector { return 3.0 * r.col(0); };
    for (double h : {1e-3, 0.1, 2.0}) {
        FunctionalSpec spec;
        spec.kind = FunctionalKind::ACD;
        spec.fd_step = h;
        CHECK(plugin_theta(spec, g, data) == doctest::Approx(3.0).epsilon(1e-9));
    }
}

TEST_CASE("ACD error shrinks quadratically for cubics") {
    const Matrix rows = rows_dx({{0.7, 0}});
    const EvaluableFunction cube = [](const Matrix& r) -> Vector { return r.col(0).array().cube().matrix(); };
    auto err = [&](double h) {
        FunctionalSpec spec;
        spec.kind = FunctionalKind::ACD;
        spec.fd_step = h;
        return std::abs(m_score(spec, cube, rows)(0) - 3 * 0.49);
    };
    CHECK(err(0.1) / err(0.05) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("distribution shift with equal samples is zero") {
    FunctionalSpec spec;
    spec.kind = FunctionalKind::DistributionShift;
    const Matrix sample = rows_dx({{0, 1}, {1, 3}, {0.5, 2}});
    spec.shift_target = sample;
    spec.shift_base = sample;
    const EvaluableFunction f = [](const Matrix& r) -> Vector { return r.col(1).array().exp().matrix(); };
    CHECK(m_score(spec, f, rows_dx({{0, 0}, {1, 1}})).cwiseAbs().maxCoeff() == 0.0);
    Matrix shifted = sample;
    shifted.col(1).array() += 1.0;
    spec.shift_target = shifted;
    const Vector m = m_score(spec, [](const Matrix& r) -> Vector { return r.col(1); }, rows_dx({{0, 0}}));
    CHECK(m(0) == doctest::Approx(1.0));
}

TEST_CASE("policy transport") {
    FunctionalSpec spec;
    spec.kind = FunctionalKind::PolicyTransport;
    spec.transport.push_back({"x1", Expression::parse("x1 + 1")});
    const Matrix rows = rows_dx({{0, 1}, {1, 2}});
    const EvaluableFunction f = [](const Matrix& r) -> Vector { return r.col(1).array().square().matrix(); };
    CHECK(m_score(spec, f, rows, kNames) == Vector((Vector(2) << 3, 5).finished()));
    const auto outside = transport_outside_hull(spec, rows, kNames);
    CHECK(outside == std::vector<Eigen::Index>{1});
}

TEST_CASE("plugin theta for binary ATE") {
    const Dataset data = testing::make_data(Vector::Zero(4), (Vector(4) << 0, 1, 0, 1).finished(), Matrix::Zero(4, 1));
    FunctionalSpec spec;
    const EvaluableFunction g = [](const Matrix& r) -> Vector { return 2.0 * r.col(0); };
    CHECK(plugin_theta(spec, g, data) == doctest::Approx(2.0));
}

TEST_CASE("plugin theta matches enumeration on a discrete toy") {
    // (D, X) cells with probabilities; g(d, x) = 1 + d + 2x + 3dx.
    const double p[2][2] = {{0.1, 0.3}, {0.2, 0.4}};  // p[d][x]
    Matrix rows(1000, 2);
    Eigen::Index i = 0;
    for (int d = 0; d < 2; ++d)
        for (int x = 0; x < 2; ++x)
            for (int k = 0; k < static_cast<int>(std::lround(p[d][x] * 1000)); ++k) {
                rows(i, 0) = d;
                rows(i, 1) = x;
                ++i;
            }
    const Dataset data = testing::make_data(Vector::Zero(1000), rows.col(0), rows.rightCols(1));
    const EvaluableFunction g = [](const Matrix& r) -> Vector {
        return (1 + r.col(0).array() + 2 * r.col(1).array() + 3 * r.col(0).array() * r.col(1).array()).matrix();
    };
    const double px1 = p[0][1] + p[1][1];
    const double enumerated = (1 - px1) * 1.0 + px1 * 4.0;
    FunctionalSpec spec;
    CHECK(plugin_theta(spec, g, data) == doctest::Approx(enumerated).epsilon(1e-12));
}

TEST_CASE("m-score is linear and scales with the weight") {
    std::mt19937_64 rng(1);
    Matrix rows = testing::normal_matrix(rng, 30, 2);
    for (Eigen::Index i = 0; i < 30; ++i) rows(i, 0) = rows(i, 0) > 0 ? 1 : 0;
    const EvaluableFunction f1 = [](const Matrix& r) -> Vector { return (r.col(0).array() * r.col(1).array().sin()).matrix(); };
    const EvaluableFunction f2 = [](const Matrix& r) -> Vector { return (r.col(0).array().square() + r.col(1).array()).matrix(); };
    const EvaluableFunction comb = [&](const Matrix& r) -> Vector { return 2.5 * f1(r) - 0.5 * f2(r); };
    for (auto kind : {FunctionalKind::BinaryATE, FunctionalKind::BinaryAPO, FunctionalKind::ACD}) {
        FunctionalSpec spec;
        spec.kind = kind;
        spec.weight = Expression::parse("1 + (x1 > 0)");
        const Vector lhs = m_score(spec, comb, rows, kNames);
        const Vector rhs = 2.5 * m_score(spec, f1, rows, kNames) - 0.5 * m_score(spec, f2, rows, kNames);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
        FunctionalSpec doubled = spec;
        doubled.weight = Expression::parse("2 * (1 + (x1 > 0))");
        CHECK((m_score(doubled, f1, rows, kNames) - 2 * m_score(spec, f1, rows, kNames)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("m-score errors") {
    const EvaluableFunction f = [](const Matrix& r) -> Vector { return r.col(0); };
    FunctionalSpec plm;
    plm.kind = FunctionalKind::PLMCoefficient;
    auto kind = [&](const FunctionalSpec& s, const EvaluableFunction& g, const Matrix& rows) {
        try {
            m_score(s, g, rows, kNames);
        } catch (const Error& e) {
            return e.kind();
        }
        return std::string("none");
    };
    CHECK(kind(plm, f, rows_dx({{1, 0}})) == "functional_mismatch");
    FunctionalSpec ate;
    CHECK(kind(ate, f, rows_dx({{0.5, 0}})) == "functional_mismatch");
    const EvaluableFunction bad = [](const Matrix& r) -> Vector { return (1.0 / (r.col(0).array() - 1.0)).matrix(); };
    CHECK(kind(ate, bad, rows_dx({{0, 0}})) == "non_finite");
}

TEST_CASE("functional names round-trip") {
    for (auto k : {FunctionalKind::BinaryATE, FunctionalKind::BinaryAPO, FunctionalKind::PLMCoefficient,
                   FunctionalKind::ACD, FunctionalKind::PolicyTransport, FunctionalKind::DistributionShift})
        CHECK(functional_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(functional_kind_from_string("nope"), Error);
}
