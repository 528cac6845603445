#pragma once

#include "ovb/common.hpp"
#include "ovb/dml.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ovb {

// Confounding strength. cy2 is the share of residual outcome variation
// explained by the latent confounders; cd2 is the relative gain in the
// Riesz representer's second moment. The eta-form maps partial R^2 values
// to (cy2, cd2) with cd2 = eta_d2 / (1 - eta_d2), exact for the partially
// linear model and used as the general interface otherwise.
struct SensitivityParams {
    double rho_abs = 1.0;
    double cy2 = 0.0;
    double cd2 = 0.0;
    std::string label;

    static SensitivityParams from_eta(double eta_y2, double eta_d2, double rho_abs = 1.0);
    static SensitivityParams direct(double cy2, double cd2, double rho_abs = 1.0);

    double eta_y2() const { return cy2; }
    double eta_d2() const { return cd2 / (1.0 + cd2); }
    void validate() const;
};

double cd2_from_eta(double eta_d2);
double eta_from_cd2(double cd2);

struct BoundsResult {
    double theta_s = 0.0;
    double se_theta_s = 0.0;
    double S = 0.0;
    double bias_bound = 0.0;
    double theta_minus = 0.0;
    double theta_plus = 0.0;
    double conf_lower = 0.0;
    double conf_upper = 0.0;
    double level = 0.05;
    Vector influence_minus;
    Vector influence_plus;
};

// Point bounds from summary numbers only.
struct PointBounds {
    double bias_bound = 0.0;
    double theta_minus = 0.0;
    double theta_plus = 0.0;
};
PointBounds point_bounds(double theta_s, double S, const SensitivityParams& params);

// Plug-in bounds theta_s -/+ |rho| S Cy Cd with one-sided confidence bounds
// built from the bound influence functions
//   phi_pm = psi_theta pm (|rho|/2)(Cy Cd / S)(sigma2 psi_nu2 + nu2 psi_sigma2)
// and l = theta_minus - z_{1-a} sd(phi_minus)/sqrt(n), u likewise. When the
// estimates carry no influence vectors the confidence bounds are NaN.
BoundsResult compute_bounds(const DmlEstimate& theta, const DmlEstimate& sigma2,
                            const DmlEstimate& nu2, const SensitivityParams& params, double a);

// Closed form: smallest r with S * sqrt(r^2 / (1 - r)) = |theta_s - v|.
double robustness_value(double theta_s, double S, double threshold);

// Smallest r such that the confidence bound at strength (cy2 = r,
// cd2 = r / (1 - r), rho = 1) reaches the threshold; found by bisection.
// NaN when the estimates carry no influence vectors.
struct RobustnessOptions {
    double tolerance = 1e-6;
    int max_iterations = 200;
};
double robustness_value_conf(const DmlEstimate& theta, const DmlEstimate& sigma2,
                             const DmlEstimate& nu2, double threshold, double a,
                             const RobustnessOptions& options = {});

// Partial R^2 of the latent confounders implied by a robustness value r on
// both axes: (eta_y2, eta_d2) = (r, r).
inline SensitivityParams params_at_robustness(double r) {
    return SensitivityParams::from_eta(r, r, 1.0);
}

enum class ContourQuantity { Bias, Lower, Upper, ConfLower, ConfUpper };
std::string to_string(ContourQuantity q);
ContourQuantity contour_quantity_from_string(const std::string& name);

struct ContourCell {
    double bias_bound = 0.0;
    double theta_minus = 0.0;
    double theta_plus = 0.0;
    double conf_lower = 0.0;
    double conf_upper = 0.0;

    double get(ContourQuantity q) const;
};

// Cells are indexed (i, j) with i along eta_d2_axis and j along eta_y2_axis.
struct ContourGrid {
    std::vector<double> eta_d2_axis;
    std::vector<double> eta_y2_axis;
    std::vector<std::vector<ContourCell>> cells;
    ContourQuantity quantity = ContourQuantity::Lower;
    double critical_threshold = 0.0;
    double rho_abs = 1.0;

    Matrix values(ContourQuantity q) const;
    Matrix values() const { return values(quantity); }
    // Long-format CSV "eta_d2,eta_y2,value" for the grid's quantity.
    std::string to_csv() const;
};

// Evenly spaced axis with `count` points from lo to hi inclusive.
std::vector<double> linear_axis(double lo, double hi, int count);

ContourGrid contour_grid(const DmlEstimate& theta, const DmlEstimate& sigma2,
                         const DmlEstimate& nu2, double rho_abs,
                         const std::vector<double>& eta_d2_axis,
                         const std::vector<double>& eta_y2_axis, ContourQuantity quantity,
                         double threshold, double a);

// Where the threshold contour crosses the diagonal eta_d2 = eta_y2, by
// linear interpolation between diagonal cells. Requires identical axes.
std::optional<double> diagonal_crossing(const ContourGrid& grid);

// Nonparametric R^2 (correlation ratio): Var(fitted) / Var(v). With a
// baseline, the partial form (eta_aug - eta_base) / (1 - eta_base).
double eta_nonparametric(const Vector& v, const Vector& fitted,
                         const std::optional<Vector>& baseline_fitted = std::nullopt);
double partial_eta2(double eta_augmented, double eta_baseline);

struct ImpliedBound {
    double multiplier = 1.0;
    double eta_y2 = 0.0;
    double eta_d2 = 0.0;
    double bias_with_rho_j = 0.0;
    double bias_adversarial = 0.0;
};

struct BenchmarkRow {
    std::string covariate;
    double delta_eta_y2 = 0.0;  // raw; may be negative
    double delta_eta_d2 = 0.0;
    double rho_j = 0.0;
    double delta_theta = 0.0;
    double theta_without = 0.0;
    std::vector<ImpliedBound> implied;
    std::string error;  // non-empty when the refit failed
};

// Implied confounding if the latent variables add k times the gains of
// covariate j: eta_y2 = k max(dY, 0) / (1 - eta_Y~DX), eta_d2 likewise. The
// rho_j bias uses |rho_j|, taken as zero when either gain is negative.
ImpliedBound implied_bound(const BenchmarkRow& row, double multiplier, double eta_y_base,
                           double eta_d_base, double S);

struct BenchmarkResult {
    double eta_y_base = 0.0;  // eta^2 of Y on (D, X)
    double eta_d_base = 0.0;  // eta^2 of D on X
    double theta_s = 0.0;
    double S = 0.0;
    std::vector<BenchmarkRow> rows;
};

// Refits g and alpha without each listed covariate and reports the gains
// in explanatory power, the correlation of the induced errors and the
// change in the estimate. Per-covariate failures are reported in the row.
BenchmarkResult benchmark_covariates(const Dataset& data, const FunctionalSpec& spec,
                                     const EngineConfig& config,
                                     const std::vector<std::string>& covariates,
                                     const std::vector<double>& multipliers = {1.0});

}  // namespace ovb
