#include "ovb/synth.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace ovb {

std::string to_string(SynthDgp dgp) {
    switch (dgp) {
        case SynthDgp::PlmGaussian: return "plm_gaussian";
        case SynthDgp::BinaryAteLogit: return "binary_ate_logit";
        case SynthDgp::AcdGaussian: return "acd_gaussian";
    }
    return "?";
}

SynthDgp synth_dgp_from_string(const std::string& name) {
    if (name == "plm_gaussian") return SynthDgp::PlmGaussian;
    if (name == "binary_ate_logit") return SynthDgp::BinaryAteLogit;
    if (name == "acd_gaussian") return SynthDgp::AcdGaussian;
    throw Error("invalid_config", "unknown dgp '" + name + "'");
}

void SynthSpec::validate() const {
    auto bad = [](const std::string& m) { throw Error("invalid_spec", m); };
    if (n < 2) bad("n must be at least 2");
    if (p < 1) bad("p must be at least 1");
    const bool c_form = cy2.has_value() || cd2.has_value();
    const bool b_form = b_g.has_value() || b_alpha.has_value();
    if (c_form && b_form) bad("give either (cy2, cd2) or (b_g, b_alpha), not both");
    if (c_form && !(cy2 && cd2)) bad("cy2 and cd2 must be given together");
    if (b_form && !(b_g && b_alpha)) bad("b_g and b_alpha must be given together");
    if (cy2 && !(*cy2 >= 0.0 && *cy2 < 1.0)) bad("cy2 must lie in [0, 1)");
    if (cd2 && !(*cd2 >= 0.0 && std::isfinite(*cd2))) bad("cd2 must be finite and nonnegative");
    if (b_g && !(*b_g >= 0.0 && std::isfinite(*b_g))) bad("b_g must be finite and nonnegative");
    if (b_alpha && !(*b_alpha >= 0.0 && std::isfinite(*b_alpha)))
        bad("b_alpha must be finite and nonnegative");
    if (!(rho >= -1.0 && rho <= 1.0)) bad("rho must lie in [-1, 1]");
    if (!(sigma_eps > 0.0) || !(sigma_v > 0.0)) bad("noise scales must be positive");
    if (!std::isfinite(theta) || !std::isfinite(treatment_mean) || !std::isfinite(quadratic) ||
        !std::isfinite(propensity_intercept) || !std::isfinite(beta_scale) ||
        !std::isfinite(gamma_scale))
        bad("coefficients must be finite");
    if (quadratic != 0.0 && dgp != SynthDgp::AcdGaussian)
        bad("quadratic term is only available for acd_gaussian");
    if (b_alpha && dgp != SynthDgp::BinaryAteLogit && *b_alpha * sigma_v >= 1.0)
        bad("b_alpha * sigma_v must be below 1 in the Gaussian designs");
}

double PopulationSummary::S() const { return std::sqrt(sigma2_s * nu2_s); }

Matrix long_rows(const Dataset& data, const Matrix& latent) {
    if (latent.rows() != data.n()) throw Error("invalid_input", "latent rows do not match data");
    Matrix out(data.n(), 1 + data.p() + latent.cols());
    out << data.short_rows(), latent;
    return out;
}

namespace {

Vector draw_normal(std::mt19937_64& rng, Eigen::Index n, double sd = 1.0) {
    std::normal_distribution<double> z(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = sd * z(rng);
    return v;
}

Vector coefficient_vector(Eigen::Index p, double scale, bool alternate) {
    Vector v(p);
    const double s = scale / std::sqrt(static_cast<double>(p));
    for (Eigen::Index j = 0; j < p; ++j) v(j) = (alternate && j % 2 == 1) ? -s : s;
    return v;
}

Dataset make_dataset(Vector y, Vector d, Matrix x) {
    Dataset data;
    data.outcome = std::move(y);
    data.treatment = std::move(d);
    data.covariates = std::move(x);
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j)
        data.column_names.push_back("x" + std::to_string(j + 1));
    return data;
}

// ---- Gaussian designs --------------------------------------------------------

SynthResult generate_gaussian(const SynthSpec& spec) {
    const Eigen::Index n = spec.n, p = spec.p;
    const double sv = spec.sigma_v, se = spec.sigma_eps;
    const double c = spec.quadratic, mu = spec.treatment_mean, th = spec.theta;

    double cd2 = 0.0, bg = 0.0;
    if (spec.cy2) {
        cd2 = *spec.cd2;
        bg = std::sqrt(*spec.cy2 * se * se / (1.0 - *spec.cy2));
    } else if (spec.b_g) {
        const double ba2 = *spec.b_alpha * *spec.b_alpha * sv * sv;
        cd2 = ba2 / (1.0 - ba2);
        bg = *spec.b_g;
    }
    const double delta = sv * std::sqrt(cd2);
    const double s2 = sv * sv * (1.0 + cd2);
    const double s = std::sqrt(s2);
    const double k1 = -spec.rho * bg * s / sv;
    const double k2 = bg * std::sqrt(std::max(0.0, 1.0 - spec.rho * spec.rho));
    const Vector beta = coefficient_vector(p, spec.beta_scale, false);
    const Vector gamma = coefficient_vector(p, spec.gamma_scale, true);
    const double shift = k1 * delta / s2;  // slope of g_s in the treatment residual

    std::mt19937_64 rng(spec.seed);
    Matrix x(n, p);
    for (Eigen::Index j = 0; j < p; ++j) x.col(j) = draw_normal(rng, n);
    Matrix a(n, 2);
    a.col(0) = draw_normal(rng, n);
    a.col(1) = draw_normal(rng, n);
    const Vector v = draw_normal(rng, n, sv);
    const Vector eps = draw_normal(rng, n, se);

    const Vector xb = x * beta;
    const Vector d = (mu + xb.array() + delta * a.col(0).array() + v.array()).matrix();
    const Vector y = (th * d.array() + c * d.array().square() + (x * gamma).array() +
                      k1 * a.col(0).array() + k2 * a.col(1).array() + eps.array())
                         .matrix();

    SynthResult out{make_dataset(y, d, x), {}};
    OracleBundle& o = out.oracle;
    o.realized_A = a;

    auto index = [beta, p, mu](const Matrix& rows) -> Vector {
        return (mu + (rows.middleCols(1, p) * beta).array()).matrix();
    };
    o.g_long = [=](const Matrix& rows) -> Vector {
        const Eigen::ArrayXd dd = rows.col(0).array();
        return (th * dd + c * dd.square() + (rows.middleCols(1, p) * gamma).array() +
                k1 * rows.col(p + 1).array() + k2 * rows.col(p + 2).array())
            .matrix();
    };
    o.g_short = [=](const Matrix& rows) -> Vector {
        const Eigen::ArrayXd dd = rows.col(0).array();
        return (th * dd + c * dd.square() + (rows.middleCols(1, p) * gamma).array() +
                shift * (dd - index(rows).array()))
            .matrix();
    };
    o.alpha_long = [=](const Matrix& rows) -> Vector {
        return ((rows.col(0).array() - index(rows).array() - delta * rows.col(p + 1).array()) /
                (sv * sv))
            .matrix();
    };
    o.alpha_short = [=](const Matrix& rows) -> Vector {
        return ((rows.col(0).array() - index(rows).array()) / s2).matrix();
    };

    o.long_rows_from_shocks = [=](const Matrix& z) -> Matrix {
        Matrix rows(z.rows(), p + 3);
        rows.middleCols(1, p + 2) = z.leftCols(p + 2);
        rows.col(0) = (mu + (z.leftCols(p) * beta).array() + delta * z.col(p).array() +
                       sv * z.col(p + 2).array())
                          .matrix();
        return rows;
    };

    PopulationSummary& pop = o.population;
    pop.theta = th + 2.0 * c * mu;
    pop.theta_s = pop.theta + shift;
    pop.b_g2 = bg * bg;
    pop.sigma2_s = pop.b_g2 + se * se;
    pop.nu2_s = 1.0 / s2;
    pop.b_alpha2 = 1.0 / (sv * sv) - 1.0 / s2;
    pop.cy2 = pop.b_g2 / pop.sigma2_s;
    pop.cd2 = cd2;
    pop.rho = (bg > 0.0 && cd2 > 0.0) ? spec.rho : 0.0;
    o.true_theta = pop.theta;
    o.true_theta_s = pop.theta_s;

    if (spec.dgp == SynthDgp::PlmGaussian) {
        o.functional.kind = FunctionalKind::PLMCoefficient;
        const double ts = pop.theta_s;
        o.m_g_short = [ts](const Matrix& rows) -> Vector { return Vector::Constant(rows.rows(), ts); };
    } else {
        o.functional.kind = FunctionalKind::ACD;
        o.functional.fd_step = 0.01 * s;
        o.m_g_short = [=](const Matrix& rows) -> Vector {
            return (th + shift + 2.0 * c * rows.col(0).array()).matrix();
        };
    }
    o.m_alpha_short = [s2](const Matrix& rows) -> Vector {
        return Vector::Constant(rows.rows(), 1.0 / s2);
    };
    return out;
}

// ---- Binary logit design -----------------------------------------------------

using Gauss = boost::math::quadrature::gauss<double, 64>;
constexpr double kQuadRange = 9.0;

double logistic(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

// E_A[f(A)] for A ~ N(0, 1).
template <class F>
double normal_expect(F&& f) {
    return Gauss::integrate([&](double z) { return f(z) * std_normal_pdf(z); }, -kQuadRange,
                            kQuadRange);
}

struct ShortPropensity {
    double pi = 0.5;  // E_A logistic(b0 + u + delta A)
    double m1 = 0.0;  // E_A[A logistic(b0 + u + delta A)]
};

ShortPropensity short_propensity(double t0, double delta) {
    ShortPropensity s;
    if (delta == 0.0) {
        s.pi = logistic(t0);
        return s;
    }
    s.pi = normal_expect([&](double a) { return logistic(t0 + delta * a); });
    s.m1 = normal_expect([&](double a) { return a * logistic(t0 + delta * a); });
    return s;
}

struct BinaryMoments {
    double e_alpha2 = 0.0;    // E alpha^2
    double e_alpha_s2 = 0.0;  // E alpha_s^2
    double e_var_a = 1.0;     // E Var(A | D, X)
    double shift = 0.0;       // E[m1 / (pi_s (1 - pi_s))]
};

BinaryMoments binary_moments(double b0, double beta_norm, double delta) {
    BinaryMoments m;
    double ea2 = 0.0, eas2 = 0.0, econd = 0.0, shift = 0.0;
    auto outer = [&](auto&& f) {
        if (beta_norm == 0.0) return f(0.0);
        return normal_expect([&](double z) { return f(beta_norm * z); });
    };
    ea2 = outer([&](double u) {
        return normal_expect([&](double a) {
            const double pi = logistic(b0 + u + delta * a);
            return 1.0 / pi + 1.0 / (1.0 - pi);
        });
    });
    eas2 = outer([&](double u) {
        const auto s = short_propensity(b0 + u, delta);
        return 1.0 / s.pi + 1.0 / (1.0 - s.pi);
    });
    econd = outer([&](double u) {
        const auto s = short_propensity(b0 + u, delta);
        return s.m1 * s.m1 / (s.pi * (1.0 - s.pi));
    });
    shift = outer([&](double u) {
        const auto s = short_propensity(b0 + u, delta);
        return s.m1 / (s.pi * (1.0 - s.pi));
    });
    m.e_alpha2 = ea2;
    m.e_alpha_s2 = eas2;
    m.e_var_a = 1.0 - econd;
    m.shift = shift;
    return m;
}

SynthResult generate_binary(const SynthSpec& spec) {
    const Eigen::Index n = spec.n, p = spec.p;
    const double se = spec.sigma_eps, th = spec.theta, b0 = spec.propensity_intercept;
    const Vector beta = coefficient_vector(p, spec.beta_scale, false);
    const Vector gamma = coefficient_vector(p, spec.gamma_scale, true);
    const double bnorm = beta.norm();

    // delta from the treatment-side target (cd2 or B_alpha^2), increasing in delta.
    const bool c_form = spec.cy2.has_value();
    const double target = c_form ? *spec.cd2 : (spec.b_alpha ? *spec.b_alpha * *spec.b_alpha : 0.0);
    auto achieved = [&](double dl) {
        const auto m = binary_moments(b0, bnorm, dl);
        return c_form ? m.e_alpha2 / m.e_alpha_s2 - 1.0 : m.e_alpha2 - m.e_alpha_s2;
    };
    double delta = 0.0;
    if (target > 0.0) {
        double lo = 0.0, hi = 0.5;
        for (double v = achieved(hi); !(v >= target && std::isfinite(v)); v = achieved(hi)) {
            lo = hi;
            hi *= 2.0;
            if (hi > 16.0 || !std::isfinite(v))
                throw Error("invalid_spec",
                            "treatment-side confounding target is out of reach for binary_ate_logit");
        }
        for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
            const double mid = 0.5 * (lo + hi);
            (achieved(mid) < target ? lo : hi) = mid;
        }
        delta = 0.5 * (lo + hi);
    }
    const BinaryMoments mom = binary_moments(b0, bnorm, delta);

    double bg = 0.0;
    if (c_form)
        bg = std::sqrt(*spec.cy2 * se * se / (1.0 - *spec.cy2));
    else if (spec.b_g)
        bg = *spec.b_g;
    const double sign = spec.rho < 0.0 ? -1.0 : 1.0;
    const double kappa = (mom.e_var_a > 0.0 && delta > 0.0) ? -sign * bg / std::sqrt(mom.e_var_a)
                                                            : sign * bg;

    std::mt19937_64 rng(spec.seed);
    Matrix x(n, p);
    for (Eigen::Index j = 0; j < p; ++j) x.col(j) = draw_normal(rng, n);
    Matrix a(n, 1);
    a.col(0) = draw_normal(rng, n);
    const Vector eps = draw_normal(rng, n, se);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vector d(n);
    const Vector xb = x * beta;
    for (Eigen::Index i = 0; i < n; ++i)
        d(i) = unif(rng) < logistic(b0 + xb(i) + delta * a(i, 0)) ? 1.0 : 0.0;
    const Vector y =
        (th * d.array() + (x * gamma).array() + kappa * a.col(0).array() + eps.array()).matrix();

    SynthResult out{make_dataset(y, d, x), {}};
    OracleBundle& o = out.oracle;
    o.realized_A = a;
    o.functional.kind = FunctionalKind::BinaryATE;

    auto props = [=](const Matrix& rows) {
        std::vector<ShortPropensity> v(static_cast<std::size_t>(rows.rows()));
        const Vector u = rows.middleCols(1, p) * beta;
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            v[static_cast<std::size_t>(i)] = short_propensity(b0 + u(i), delta);
        return v;
    };
    o.g_long = [=](const Matrix& rows) -> Vector {
        return (th * rows.col(0).array() + (rows.middleCols(1, p) * gamma).array() +
                kappa * rows.col(p + 1).array())
            .matrix();
    };
    o.g_short = [=](const Matrix& rows) -> Vector {
        const auto pr = props(rows);
        Vector out = (th * rows.col(0).array() + (rows.middleCols(1, p) * gamma).array()).matrix();
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const auto& s = pr[static_cast<std::size_t>(i)];
            out(i) += kappa * (rows(i, 0) == 1.0 ? s.m1 / s.pi : -s.m1 / (1.0 - s.pi));
        }
        return out;
    };
    o.alpha_long = [=](const Matrix& rows) -> Vector {
        const Vector u = rows.middleCols(1, p) * beta;
        Vector out(rows.rows());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const double pi = logistic(b0 + u(i) + delta * rows(i, p + 1));
            out(i) = rows(i, 0) == 1.0 ? 1.0 / pi : -1.0 / (1.0 - pi);
        }
        return out;
    };
    o.alpha_short = [=](const Matrix& rows) -> Vector {
        const auto pr = props(rows);
        Vector out(rows.rows());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const double pi = pr[static_cast<std::size_t>(i)].pi;
            out(i) = rows(i, 0) == 1.0 ? 1.0 / pi : -1.0 / (1.0 - pi);
        }
        return out;
    };
    o.m_g_short = [=](const Matrix& rows) -> Vector {
        const auto pr = props(rows);
        Vector out(rows.rows());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const auto& s = pr[static_cast<std::size_t>(i)];
            out(i) = th + kappa * s.m1 / (s.pi * (1.0 - s.pi));
        }
        return out;
    };
    o.m_alpha_short = [=](const Matrix& rows) -> Vector {
        const auto pr = props(rows);
        Vector out(rows.rows());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            const double pi = pr[static_cast<std::size_t>(i)].pi;
            out(i) = 1.0 / pi + 1.0 / (1.0 - pi);
        }
        return out;
    };

    PopulationSummary& pop = o.population;
    pop.theta = th;
    pop.theta_s = th + kappa * mom.shift;
    pop.b_g2 = kappa * kappa * mom.e_var_a;
    pop.sigma2_s = pop.b_g2 + se * se;
    pop.nu2_s = mom.e_alpha_s2;
    pop.b_alpha2 = mom.e_alpha2 - mom.e_alpha_s2;
    pop.cy2 = pop.b_g2 / pop.sigma2_s;
    pop.cd2 = pop.b_alpha2 / pop.nu2_s;
    const double denom = std::sqrt(pop.b_g2 * pop.b_alpha2);
    pop.rho = denom > 0.0 ? (pop.theta - pop.theta_s) / denom : 0.0;
    o.true_theta = pop.theta;
    o.true_theta_s = pop.theta_s;
    return out;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
    spec.validate();
    if (spec.dgp == SynthDgp::BinaryAteLogit) return generate_binary(spec);
    return generate_gaussian(spec);
}

Matrix psd_sqrt(const Matrix& m) {
    if (m.rows() != m.cols()) throw Error("invalid_input", "psd_sqrt needs a square matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
    Vector ev = eig.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-12) throw Error("invalid_input", "matrix is not positive semidefinite");
        ev(i) = ev(i) < 1e-12 ? 0.0 : std::sqrt(ev(i));
    }
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

RationalizedModel rationalize_confounding(double rho, double b_g, double b_alpha,
                                          const ShortModel& base, std::uint64_t seed) {
    if (!(rho >= -1.0 && rho <= 1.0)) throw Error("invalid_spec", "rho must lie in [-1, 1]");
    if (!(b_g >= 0.0) || !(b_alpha >= 0.0) || !std::isfinite(b_g) || !std::isfinite(b_alpha))
        throw Error("invalid_spec", "B_g and B_alpha must be finite and nonnegative");
    if (!base.g_short || !base.alpha_short)
        throw Error("invalid_spec", "base model needs g_short and alpha_short");
    base.data.validate();

    const Matrix w = base.data.short_rows();
    const Vector gs = base.g_short(w);
    const Vector resid = base.data.outcome - gs;
    const double resvar = (resid.array().square()).mean();
    if (b_g * b_g > resvar)
        throw Error("confounding_budget",
                    "B_g^2 exceeds the residual variance of the base model");

    Matrix cov(2, 2);
    cov << b_g * b_g, rho * b_g * b_alpha, rho * b_g * b_alpha, b_alpha * b_alpha;
    const Matrix mu = psd_sqrt(cov);
    const Vector mu1 = mu.row(0).transpose();
    const Vector mu2 = mu.row(1).transpose();

    std::mt19937_64 rng(seed);
    Matrix a(base.data.n(), 2);
    a.col(0) = draw_normal(rng, base.data.n());
    a.col(1) = draw_normal(rng, base.data.n());

    RationalizedModel out;
    out.loadings = mu;
    out.data = base.data;
    const double keep = resvar > 0.0 ? std::sqrt(1.0 - b_g * b_g / resvar) : 0.0;
    out.data.outcome = gs + a * mu1 + keep * resid;

    OracleBundle& o = out.oracle;
    o.realized_A = a;
    const Eigen::Index q = w.cols();
    const auto g_short = base.g_short;
    const auto alpha_short = base.alpha_short;
    o.g_short = g_short;
    o.alpha_short = alpha_short;
    o.g_long = [=](const Matrix& rows) -> Vector {
        return g_short(rows.leftCols(q)) + rows.middleCols(q, 2) * mu1;
    };
    o.alpha_long = [=](const Matrix& rows) -> Vector {
        return alpha_short(rows.leftCols(q)) + rows.middleCols(q, 2) * mu2;
    };
    o.true_theta_s = base.theta_s;
    o.true_theta = base.theta_s + mu1.dot(mu2);
    PopulationSummary& pop = o.population;
    pop.theta_s = o.true_theta_s;
    pop.theta = o.true_theta;
    pop.b_g2 = b_g * b_g;
    pop.b_alpha2 = b_alpha * b_alpha;
    pop.rho = rho;
    pop.sigma2_s = resvar;
    const Vector as = alpha_short(w);
    pop.nu2_s = as.squaredNorm() / static_cast<double>(as.size());
    pop.cy2 = pop.sigma2_s > 0.0 ? pop.b_g2 / pop.sigma2_s : 0.0;
    pop.cd2 = pop.nu2_s > 0.0 ? pop.b_alpha2 / pop.nu2_s : 0.0;
    return out;
}

double natural_confounding_rho2(int k, int draws, std::uint64_t seed) {
    if (k < 1 || draws < 1) throw Error("invalid_input", "k and draws must be positive");
    std::mt19937_64 rng(seed);
    double total = 0.0;
    for (int r = 0; r < draws; ++r) {
        const Vector m1 = draw_normal(rng, k);
        const Vector m2 = draw_normal(rng, k);
        const double c = m1.dot(m2);
        total += c * c / (m1.squaredNorm() * m2.squaredNorm());
    }
    return total / draws;
}

// ---- Coverage ----------------------------------------------------------------

namespace {

NuisanceFit oracle_nuisances(const OracleBundle& o, Eigen::Index n, int folds, std::uint64_t seed) {
    NuisanceFit fit;
    fit.plan = make_fold_plan(n, folds, seed);
    FoldNuisance f{o.g_short, o.alpha_short, nullptr, nullptr};
    if (o.functional.kind == FunctionalKind::PLMCoefficient) {
        f.m_g = o.m_g_short;
        f.m_alpha = o.m_alpha_short;
    }
    fit.folds.assign(static_cast<std::size_t>(folds), f);
    return fit;
}

}  // namespace

std::string CoverageSummary::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "rep,ok,theta_s_hat,se,sigma2_hat,nu2_hat,theta_minus,theta_plus,conf_lower,conf_upper,"
          "error\n";
    for (const auto& r : rows) {
        os << r.rep << ',' << (r.ok ? 1 : 0) << ',';
        if (r.ok)
            os << r.theta_s_hat << ',' << r.se << ',' << r.sigma2_hat << ',' << r.nu2_hat << ','
               << r.theta_minus << ',' << r.theta_plus << ',' << r.conf_lower << ','
               << r.conf_upper << ',';
        else
            os << ",,,,,,,,";
        std::string e = r.error;
        std::replace(e.begin(), e.end(), ',', ';');
        std::replace(e.begin(), e.end(), '\n', ' ');
        os << e << '\n';
    }
    return os.str();
}

CoverageSummary coverage_experiment(const SynthSpec& spec, const CoverageConfig& config) {
    spec.validate();
    if (config.reps < 100) throw Error("invalid_config", "coverage needs at least 100 replications");
    if (!(config.a > 0.0 && config.a < 0.5)) throw Error("invalid_config", "a must lie in (0, 0.5)");
    if (config.mode == NuisanceMode::Learned && config.engine.outcome_learners.empty())
        throw Error("invalid_config", "learned mode needs outcome learners");

    // Population values from a tiny draw (they do not depend on n or seed).
    SynthSpec probe = spec;
    probe.n = 2;
    const PopulationSummary pop = generate(probe).oracle.population;
    SensitivityParams assumed = config.assumed.value_or(
        SensitivityParams::direct(pop.cy2, pop.cd2, 1.0));
    assumed.validate();
    const PointBounds truth = point_bounds(pop.theta_s, pop.S(), assumed);

    CoverageSummary out;
    out.reps = config.reps;
    out.true_theta = pop.theta;
    out.true_theta_s = pop.theta_s;
    out.true_theta_minus = truth.theta_minus;
    out.true_theta_plus = truth.theta_plus;
    if (spec.n < 100)
        out.warnings.push_back("n = " + std::to_string(spec.n) +
                               " is small; asymptotic coverage may not apply");

    out.rows.resize(static_cast<std::size_t>(config.reps));
    parallel_for(out.rows.size(), [&](std::size_t r) {
        CoverageRow& row = out.rows[r];
        row.rep = static_cast<int>(r);
        try {
            SynthSpec s = spec;
            s.seed = mix_seed(spec.seed, r);
            const SynthResult sim = generate(s);
            ComponentEstimates est;
            if (config.mode == NuisanceMode::Oracle) {
                est = estimate_components(sim.data, sim.oracle.functional,
                                          oracle_nuisances(sim.oracle, sim.data.n(),
                                                           config.engine.folds,
                                                           mix_seed(s.seed, 1)));
            } else {
                EngineConfig eng = config.engine;
                eng.seed = mix_seed(s.seed, 1);
                est = estimate_components(sim.data, sim.oracle.functional, eng);
            }
            const BoundsResult b = compute_bounds(est.theta, est.sigma2, est.nu2, assumed, config.a);
            row.theta_s_hat = est.theta.value;
            row.se = est.theta.std_error;
            row.sigma2_hat = est.sigma2.value;
            row.nu2_hat = est.nu2.value;
            row.theta_minus = b.theta_minus;
            row.theta_plus = b.theta_plus;
            row.conf_lower = b.conf_lower;
            row.conf_upper = b.conf_upper;
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    });

    const double z = normal_quantile(1.0 - config.a);
    int ok = 0, cs = 0, cl = 0, cu = 0, ct = 0;
    double e_t = 0.0, e_s = 0.0, e_n = 0.0;
    for (const auto& r : out.rows) {
        if (!r.ok) {
            ++out.failures;
            continue;
        }
        ++ok;
        if (std::abs(r.theta_s_hat - pop.theta_s) <= z * r.se) ++cs;
        if (truth.theta_minus >= r.conf_lower) ++cl;
        if (truth.theta_plus <= r.conf_upper) ++cu;
        if (r.conf_lower <= pop.theta && pop.theta <= r.conf_upper) ++ct;
        e_t += (r.theta_s_hat - pop.theta_s) * (r.theta_s_hat - pop.theta_s);
        e_s += (r.sigma2_hat - pop.sigma2_s) * (r.sigma2_hat - pop.sigma2_s);
        e_n += (r.nu2_hat - pop.nu2_s) * (r.nu2_hat - pop.nu2_s);
    }
    if (out.failures > 0)
        out.warnings.push_back(std::to_string(out.failures) + " of " +
                               std::to_string(config.reps) + " replications failed");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto rate = [&](int c) { return ok > 0 ? static_cast<double>(c) / ok : nan; };
    out.coverage_theta_s = rate(cs);
    out.coverage_lower = rate(cl);
    out.coverage_upper = rate(cu);
    out.coverage_theta = rate(ct);
    out.rmse_theta_s = ok > 0 ? std::sqrt(e_t / ok) : nan;
    out.rmse_sigma2 = ok > 0 ? std::sqrt(e_s / ok) : nan;
    out.rmse_nu2 = ok > 0 ? std::sqrt(e_n / ok) : nan;
    return out;
}

}  // namespace ovb
