#include "ovb/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ovb {

double cd2_from_eta(double eta_d2) {
    if (!(eta_d2 >= 0.0 && eta_d2 < 1.0))
        throw Error("invalid_params", "eta_d2 must lie in [0, 1)");
    return eta_d2 / (1.0 - eta_d2);
}

double eta_from_cd2(double cd2) {
    if (!(cd2 >= 0.0)) throw Error("invalid_params", "cd2 must be nonnegative");
    return cd2 / (1.0 + cd2);
}

SensitivityParams SensitivityParams::from_eta(double eta_y2, double eta_d2, double rho_abs) {
    if (!(eta_y2 >= 0.0 && eta_y2 < 1.0))
        throw Error("invalid_params", "eta_y2 must lie in [0, 1)");
    SensitivityParams p;
    p.rho_abs = rho_abs;
    p.cy2 = eta_y2;
    p.cd2 = cd2_from_eta(eta_d2);
    p.validate();
    return p;
}

SensitivityParams SensitivityParams::direct(double cy2, double cd2, double rho_abs) {
    SensitivityParams p;
    p.rho_abs = rho_abs;
    p.cy2 = cy2;
    p.cd2 = cd2;
    p.validate();
    return p;
}

void SensitivityParams::validate() const {
    if (!(rho_abs >= 0.0 && rho_abs <= 1.0)) throw Error("invalid_params", "|rho| must lie in [0, 1]");
    if (!(cy2 >= 0.0 && cy2 <= 1.0)) throw Error("invalid_params", "cy2 must lie in [0, 1]");
    if (!(cd2 >= 0.0) || !std::isfinite(cd2)) throw Error("invalid_params", "cd2 must be finite and nonnegative");
}

PointBounds point_bounds(double theta_s, double S, const SensitivityParams& params) {
    params.validate();
    if (!(S >= 0.0)) throw Error("invalid_params", "S must be nonnegative");
    PointBounds b;
    b.bias_bound = params.rho_abs * S * std::sqrt(params.cy2 * params.cd2);
    b.theta_minus = theta_s - b.bias_bound;
    b.theta_plus = theta_s + b.bias_bound;
    return b;
}

BoundsResult compute_bounds(const DmlEstimate& theta, const DmlEstimate& sigma2,
                            const DmlEstimate& nu2, const SensitivityParams& params, double a) {
    params.validate();
    if (!(a > 0.0 && a <= 0.5)) throw Error("invalid_params", "level a must lie in (0, 0.5]");
    if (!(nu2.value > 0.0)) throw Error("nonpositive_nu2", "nu2 must be positive");
    if (!(sigma2.value > 0.0)) throw Error("nonpositive_sigma2", "sigma2 must be positive");

    BoundsResult r;
    r.level = a;
    r.theta_s = theta.value;
    r.se_theta_s = theta.std_error;
    r.S = std::sqrt(sigma2.value * nu2.value);
    const double cc = std::sqrt(params.cy2 * params.cd2);
    r.bias_bound = params.rho_abs * r.S * cc;
    r.theta_minus = r.theta_s - r.bias_bound;
    r.theta_plus = r.theta_s + r.bias_bound;

    const Eigen::Index n = theta.influence.size();
    if (n == 0 || sigma2.influence.size() != n || nu2.influence.size() != n) {
        r.conf_lower = std::numeric_limits<double>::quiet_NaN();
        r.conf_upper = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    const double k = 0.5 * params.rho_abs * cc / r.S;
    const Vector adj = k * (sigma2.value * nu2.influence + nu2.value * sigma2.influence);
    r.influence_minus = theta.influence - adj;
    r.influence_plus = theta.influence + adj;
    const double z = normal_quantile(1.0 - a);
    const auto nn = static_cast<double>(n);
    r.conf_lower = r.theta_minus - z * std::sqrt(r.influence_minus.squaredNorm() / nn / nn);
    r.conf_upper = r.theta_plus + z * std::sqrt(r.influence_plus.squaredNorm() / nn / nn);
    return r;
}

double robustness_value(double theta_s, double S, double threshold) {
    if (!(S > 0.0)) throw Error("invalid_params", "S must be positive");
    const double t = std::abs(theta_s - threshold) / S;
    const double t2 = t * t;
    return 0.5 * (std::sqrt(t2 * t2 + 4.0 * t2) - t2);
}

double robustness_value_conf(const DmlEstimate& theta, const DmlEstimate& sigma2,
                             const DmlEstimate& nu2, double threshold, double a,
                             const RobustnessOptions& options) {
    if (theta.influence.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    const bool lower_side = theta.value >= threshold;
    // Signed distance of the relevant confidence bound from the threshold;
    // positive while the interval still excludes it.
    auto gap = [&](double r) {
        const BoundsResult b = compute_bounds(theta, sigma2, nu2, params_at_robustness(r), a);
        return lower_side ? b.conf_lower - threshold : threshold - b.conf_upper;
    };
    if (gap(0.0) <= 0.0) return 0.0;
    double lo = 0.0;
    double hi = 1.0 - 1e-12;
    if (gap(hi) > 0.0) return hi;
    for (int it = 0; it < options.max_iterations && hi - lo > options.tolerance; ++it) {
        const double mid = 0.5 * (lo + hi);
        (gap(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::string to_string(ContourQuantity q) {
    switch (q) {
    case ContourQuantity::Bias: return "bias";
    case ContourQuantity::Lower: return "lower";
    case ContourQuantity::Upper: return "upper";
    case ContourQuantity::ConfLower: return "conf_lower";
    case ContourQuantity::ConfUpper: return "conf_upper";
    }
    return "unknown";
}

ContourQuantity contour_quantity_from_string(const std::string& name) {
    for (auto q : {ContourQuantity::Bias, ContourQuantity::Lower, ContourQuantity::Upper,
                   ContourQuantity::ConfLower, ContourQuantity::ConfUpper})
        if (to_string(q) == name) return q;
    throw Error("invalid_config", "unknown contour quantity '" + name + "'");
}

double ContourCell::get(ContourQuantity q) const {
    switch (q) {
    case ContourQuantity::Bias: return bias_bound;
    case ContourQuantity::Lower: return theta_minus;
    case ContourQuantity::Upper: return theta_plus;
    case ContourQuantity::ConfLower: return conf_lower;
    case ContourQuantity::ConfUpper: return conf_upper;
    }
    return 0.0;
}

Matrix ContourGrid::values(ContourQuantity q) const {
    Matrix m(static_cast<Eigen::Index>(eta_d2_axis.size()), static_cast<Eigen::Index>(eta_y2_axis.size()));
    for (std::size_t i = 0; i < eta_d2_axis.size(); ++i)
        for (std::size_t j = 0; j < eta_y2_axis.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cells[i][j].get(q);
    return m;
}

std::string ContourGrid::to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "eta_d2,eta_y2,value\n";
    for (std::size_t i = 0; i < eta_d2_axis.size(); ++i)
        for (std::size_t j = 0; j < eta_y2_axis.size(); ++j)
            out << eta_d2_axis[i] << ',' << eta_y2_axis[j] << ',' << cells[i][j].get(quantity) << '\n';
    return out.str();
}

std::vector<double> linear_axis(double lo, double hi, int count) {
    if (count < 1) throw Error("invalid_params", "axis needs at least one point");
    if (count == 1) return {lo};
    std::vector<double> axis(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        axis[static_cast<std::size_t>(k)] = lo + (hi - lo) * static_cast<double>(k) / (count - 1);
    return axis;
}

ContourGrid contour_grid(const DmlEstimate& theta, const DmlEstimate& sigma2,
                         const DmlEstimate& nu2, double rho_abs,
                         const std::vector<double>& eta_d2_axis,
                         const std::vector<double>& eta_y2_axis, ContourQuantity quantity,
                         double threshold, double a) {
    auto check_axis = [](const std::vector<double>& axis, const char* name) {
        if (axis.empty()) throw Error("invalid_params", std::string(name) + " axis is empty");
        for (std::size_t k = 0; k < axis.size(); ++k) {
            if (!(axis[k] >= 0.0 && axis[k] < 1.0))
                throw Error("invalid_params", std::string(name) + " axis values must lie in [0, 1)");
            if (k > 0 && !(axis[k] > axis[k - 1]))
                throw Error("invalid_params", std::string(name) + " axis must be increasing");
        }
    };
    check_axis(eta_d2_axis, "eta_d2");
    check_axis(eta_y2_axis, "eta_y2");

    ContourGrid grid;
    grid.eta_d2_axis = eta_d2_axis;
    grid.eta_y2_axis = eta_y2_axis;
    grid.quantity = quantity;
    grid.critical_threshold = threshold;
    grid.rho_abs = rho_abs;
    grid.cells.assign(eta_d2_axis.size(), std::vector<ContourCell>(eta_y2_axis.size()));
    parallel_for(eta_d2_axis.size() * eta_y2_axis.size(), [&](std::size_t idx) {
        const std::size_t i = idx / eta_y2_axis.size();
        const std::size_t j = idx % eta_y2_axis.size();
        const BoundsResult b = compute_bounds(
            theta, sigma2, nu2, SensitivityParams::from_eta(eta_y2_axis[j], eta_d2_axis[i], rho_abs), a);
        grid.cells[i][j] = {b.bias_bound, b.theta_minus, b.theta_plus, b.conf_lower, b.conf_upper};
    });
    return grid;
}

std::optional<double> diagonal_crossing(const ContourGrid& grid) {
    if (grid.eta_d2_axis != grid.eta_y2_axis)
        throw Error("invalid_params", "diagonal crossing needs identical axes");
    const auto& axis = grid.eta_d2_axis;
    for (std::size_t k = 0; k < axis.size(); ++k) {
        const double v = grid.cells[k][k].get(grid.quantity) - grid.critical_threshold;
        if (v == 0.0) return axis[k];
        if (k > 0) {
            const double u = grid.cells[k - 1][k - 1].get(grid.quantity) - grid.critical_threshold;
            if ((u < 0.0) != (v < 0.0)) {
                const double w = u / (u - v);
                return axis[k - 1] + w * (axis[k] - axis[k - 1]);
            }
        }
    }
    return std::nullopt;
}

double partial_eta2(double eta_augmented, double eta_baseline) {
    if (!(eta_baseline < 1.0)) throw Error("invalid_params", "baseline eta^2 must be below 1");
    return (eta_augmented - eta_baseline) / (1.0 - eta_baseline);
}

double eta_nonparametric(const Vector& v, const Vector& fitted,
                         const std::optional<Vector>& baseline_fitted) {
    if (v.size() != fitted.size()) throw Error("invalid_input", "length mismatch");
    const double var_v = variance(v);
    if (!(var_v > 0.0)) throw Error("zero_variance", "variance of the target is zero");
    const double eta = variance(fitted) / var_v;
    if (!baseline_fitted) return eta;
    if (baseline_fitted->size() != v.size()) throw Error("invalid_input", "length mismatch");
    return partial_eta2(eta, variance(*baseline_fitted) / var_v);
}

ImpliedBound implied_bound(const BenchmarkRow& row, double multiplier, double eta_y_base,
                           double eta_d_base, double S) {
    ImpliedBound b;
    b.multiplier = multiplier;
    b.eta_y2 = std::min(multiplier * std::max(row.delta_eta_y2, 0.0) / (1.0 - eta_y_base), 1.0 - 1e-12);
    b.eta_d2 = std::min(multiplier * std::max(row.delta_eta_d2, 0.0) / (1.0 - eta_d_base), 1.0 - 1e-12);
    const double cc = std::sqrt(b.eta_y2 * cd2_from_eta(b.eta_d2));
    const bool negative_gain = row.delta_eta_y2 < 0.0 || row.delta_eta_d2 < 0.0;
    const double rho = negative_gain ? 0.0 : std::min(std::abs(row.rho_j), 1.0);
    b.bias_with_rho_j = rho * S * cc;
    b.bias_adversarial = S * cc;
    return b;
}

BenchmarkResult benchmark_covariates(const Dataset& data, const FunctionalSpec& spec,
                                     const EngineConfig& config,
                                     const std::vector<std::string>& covariates,
                                     const std::vector<double>& multipliers) {
    const auto& treatment_learners =
        config.treatment_learners.empty() ? config.outcome_learners : config.treatment_learners;
    const FoldPlan plan =
        make_fold_plan(data.n(), config.folds, config.seed, data.group_label, data.strata);

    auto eta_d = [&](const Dataset& d) {
        if (d.p() == 0) return 0.0;
        const LearnerSelection sel =
            select_learner_cv(treatment_learners, d.covariates, d.treatment, plan);
        return eta_nonparametric(d.treatment,
                                 cross_fit_predict(*sel.learner, d.covariates, d.treatment, plan));
    };

    const ComponentEstimates base = estimate_components(data, spec, config);
    BenchmarkResult out;
    out.theta_s = base.theta.value;
    out.S = std::sqrt(base.sigma2.value * base.nu2.value);
    out.eta_y_base = eta_nonparametric(data.outcome, base.values.g);
    out.eta_d_base = eta_d(data);

    out.rows.resize(covariates.size());
    for (std::size_t k = 0; k < covariates.size(); ++k) {
        BenchmarkRow& row = out.rows[k];
        row.covariate = covariates[k];
        try {
            const auto it = std::find(data.column_names.begin(), data.column_names.end(), covariates[k]);
            if (it == data.column_names.end())
                throw Error("missing_column", "covariate '" + covariates[k] + "' not in dataset");
            const Dataset reduced = data.without_covariate(it - data.column_names.begin());
            const ComponentEstimates drop = estimate_components(reduced, spec, config);
            row.delta_eta_y2 = out.eta_y_base - eta_nonparametric(data.outcome, drop.values.g);
            row.delta_eta_d2 = out.eta_d_base - eta_d(reduced);
            row.rho_j = correlation(base.values.g - drop.values.g, base.values.alpha - drop.values.alpha);
            row.theta_without = drop.theta.value;
            row.delta_theta = base.theta.value - drop.theta.value;
            for (double m : multipliers)
                row.implied.push_back(implied_bound(row, m, out.eta_y_base, out.eta_d_base, out.S));
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    }
    return out;
}

}  // namespace ovb
