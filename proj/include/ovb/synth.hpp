#pragma once

#include "ovb/common.hpp"
#include "ovb/dataio.hpp"
#include "ovb/dml.hpp"
#include "ovb/functionals.hpp"
#include "ovb/sensitivity.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ovb {

// Synthetic structural models with a latent confounder A observed only by
// the oracle.
//
// plm_gaussian / acd_gaussian (A in R^2, X ~ N(0, I_p)):
//   D = mu_D + X'beta + delta A_1 + V,                V ~ N(0, sigma_v^2)
//   Y = theta D + c D^2 + X'gamma + k_1 A_1 + k_2 A_2 + eps,  eps ~ N(0, sigma_eps^2)
// with c = 0 for plm_gaussian. delta, k_1, k_2 follow in closed form from the
// requested (cy2, cd2, rho).
//
// binary_ate_logit (A scalar):
//   D ~ Bernoulli(logistic(b_0 + X'beta + delta A)),  Y = theta D + X'gamma + kappa A + eps
// delta is found by bisection to hit cd2 and kappa then follows from cy2;
// rho is whatever the scalar confounder implies (its sign follows the
// requested rho).
enum class SynthDgp { PlmGaussian, BinaryAteLogit, AcdGaussian };

std::string to_string(SynthDgp dgp);
SynthDgp synth_dgp_from_string(const std::string& name);

struct SynthSpec {
    SynthDgp dgp = SynthDgp::PlmGaussian;
    Eigen::Index n = 1000;
    Eigen::Index p = 3;
    // Confounding strength: either (cy2, cd2) or (b_g, b_alpha), plus rho.
    std::optional<double> cy2;
    std::optional<double> cd2;
    std::optional<double> b_g;
    std::optional<double> b_alpha;
    double rho = 1.0;
    double theta = 1.0;
    double sigma_eps = 1.0;
    double sigma_v = 1.0;
    double treatment_mean = 0.0;    // mu_D (Gaussian designs)
    double quadratic = 0.0;         // c (acd_gaussian only)
    double propensity_intercept = 0.0;  // b_0 (binary design)
    double beta_scale = 0.5;        // scales beta
    double gamma_scale = 1.0;       // scales gamma
    std::uint64_t seed = 0;

    void validate() const;
};

// Population quantities of the model, computed in closed form (Gaussian) or
// by quadrature (binary).
struct PopulationSummary {
    double theta = 0.0;
    double theta_s = 0.0;
    double sigma2_s = 0.0;  // E (Y - g_s)^2
    double nu2_s = 0.0;     // E alpha_s^2
    double b_g2 = 0.0;      // E (g - g_s)^2
    double b_alpha2 = 0.0;  // E (alpha - alpha_s)^2
    double cy2 = 0.0;
    double cd2 = 0.0;
    double rho = 0.0;       // Cor(g - g_s, alpha - alpha_s)

    double S() const;
};

// Long functions take rows [d, x_1..x_p, a_1..a_k]; short ones take [d, x].
struct OracleBundle {
    double true_theta = 0.0;
    double true_theta_s = 0.0;
    EvaluableFunction g_long;
    EvaluableFunction g_short;
    EvaluableFunction alpha_long;
    EvaluableFunction alpha_short;
    // Closed-form m-scores of the short nuisances for the design's functional.
    EvaluableFunction m_g_short;
    EvaluableFunction m_alpha_short;
    Matrix realized_A;
    // Gaussian designs only: long rows as a function of independent standard
    // normal shocks (x_1..x_p, a_1, a_2, v / sigma_v), one row per draw.
    std::function<Matrix(const Matrix&)> long_rows_from_shocks;
    PopulationSummary population;
    FunctionalSpec functional;
};

struct SynthResult {
    Dataset data;
    OracleBundle oracle;
};

SynthResult generate(const SynthSpec& spec);

// [W^s | A] for evaluating long functions.
Matrix long_rows(const Dataset& data, const Matrix& latent);

// Short model to which confounding is attached.
struct ShortModel {
    Dataset data;
    EvaluableFunction g_short;
    EvaluableFunction alpha_short;
    double theta_s = 0.0;
};

struct RationalizedModel {
    Dataset data;  // outcome regenerated with the confounding component
    OracleBundle oracle;
    Matrix loadings;  // rows mu_1', mu_2'
};

// Symmetric PSD square root via eigendecomposition; eigenvalues below 1e-12
// are clamped to zero.
Matrix psd_sqrt(const Matrix& m);

// g - g_s = mu_1'A and alpha - alpha_s = mu_2'A with A ~ N(0, I_2) and
// (mu_1', mu_2')' the square root of [[B_g^2, rho B_g B_a], [rho B_g B_a, B_a^2]].
// The new outcome is g_s + mu_1'A + sqrt(1 - B_g^2 / Var(e)) e where e are
// the base residuals Y - g_s.
RationalizedModel rationalize_confounding(double rho, double b_g, double b_alpha,
                                          const ShortModel& base, std::uint64_t seed);

// Monte Carlo mean of rho^2 = Cor(mu_1'A, mu_2'A)^2 with mu_1, mu_2 ~ N(0, I_K).
double natural_confounding_rho2(int k, int draws, std::uint64_t seed);

enum class NuisanceMode { Oracle, Learned };

struct CoverageConfig {
    int reps = 300;
    double a = 0.05;
    NuisanceMode mode = NuisanceMode::Learned;
    EngineConfig engine;
    // Assumed strength for the bounds; defaults to the true (cy2, cd2) with rho = 1.
    std::optional<SensitivityParams> assumed;
};

struct CoverageRow {
    int rep = 0;
    bool ok = false;
    double theta_s_hat = 0.0;
    double se = 0.0;
    double sigma2_hat = 0.0;
    double nu2_hat = 0.0;
    double theta_minus = 0.0;
    double theta_plus = 0.0;
    double conf_lower = 0.0;
    double conf_upper = 0.0;
    std::string error;
};

struct CoverageSummary {
    int reps = 0;
    int failures = 0;
    double true_theta = 0.0;
    double true_theta_s = 0.0;
    double true_theta_minus = 0.0;
    double true_theta_plus = 0.0;
    double coverage_theta_s = 0.0;  // theta_s in theta_hat -/+ z_{1-a} se
    double coverage_lower = 0.0;    // Pr(theta_minus >= l)
    double coverage_upper = 0.0;    // Pr(theta_plus <= u)
    double coverage_theta = 0.0;    // Pr(l <= theta <= u)
    double rmse_theta_s = 0.0;
    double rmse_sigma2 = 0.0;
    double rmse_nu2 = 0.0;
    std::vector<std::string> warnings;
    std::vector<CoverageRow> rows;

    std::string to_csv() const;
};

CoverageSummary coverage_experiment(const SynthSpec& spec, const CoverageConfig& config);

}  // namespace ovb
