#pragma once

#include "ovb/common.hpp"
#include "ovb/dataio.hpp"
#include "ovb/functionals.hpp"
#include "ovb/learners.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ovb {

enum class RieszMethod { Analytic, Plm, Variational };

std::string to_string(RieszMethod method);
RieszMethod riesz_method_from_string(const std::string& name);

struct RieszDiagnostics {
    Eigen::Index trimmed_low = 0;   // out-of-fold propensities raised to trim
    Eigen::Index trimmed_high = 0;  // out-of-fold propensities lowered to 1 - trim
    double residual_second_moment = 0.0;  // PLM denominator
    double l1 = 0.0;
    double l2 = 0.0;
    std::vector<double> fold_loss;        // variational loss on each training fold
    std::vector<int> fold_sweeps;
    std::vector<Eigen::Index> fold_nonzero;
};

// Cross-fitted estimate of the short Riesz representer. fold_function(k) is
// the representer trained on the complement of fold k; out_of_fold evaluates
// each row with the fit that never saw it.
class RieszFit {
public:
    RieszFit(RieszMethod method, FoldPlan plan, std::vector<EvaluableFunction> per_fold,
             std::vector<EvaluableFunction> m_per_fold, RieszDiagnostics diagnostics);

    RieszMethod method() const { return method_; }
    const FoldPlan& plan() const { return plan_; }
    const RieszDiagnostics& diagnostics() const { return diagnostics_; }

    const EvaluableFunction& fold_function(int fold) const;
    // For representers whose m-score is known in closed form (the PLM route);
    // empty when m_score should be applied to fold_function instead.
    const EvaluableFunction* fold_m_function(int fold) const;

    // rows must be the dataset's short rows in plan order.
    Vector out_of_fold(const Matrix& rows) const;

private:
    RieszMethod method_;
    FoldPlan plan_;
    std::vector<EvaluableFunction> per_fold_;
    std::vector<EvaluableFunction> m_per_fold_;
    RieszDiagnostics diagnostics_;
};

inline constexpr double kDefaultTrim = 0.01;

// alpha(d, x) = l(x) * [d / pi(x) - (1 - d) / (1 - pi(x))] for BinaryATE, and
// l(x) * 1{d = level} / P(D = level | x) for BinaryAPO, with pi fitted
// out-of-fold and clipped to [trim, 1 - trim].
RieszFit fit_riesz_analytic_binary(const Dataset& data, const FoldPlan& plan,
                                   const RegressionLearner& propensity_learner, double trim,
                                   const FunctionalSpec& spec = {});

// alpha(d, x) = (d - m(x)) / mean((D - m(X))^2), m = E[D|X] fitted
// out-of-fold. Its m-score (derivative in d) is the constant 1 / denominator.
RieszFit fit_riesz_plm(const Dataset& data, const FoldPlan& plan,
                       const RegressionLearner& treatment_learner);

// Minimizer of (1/2) rho'G rho - rho'M + l1 sum w_j|rho_j| + (l2/2) sum w_j^2 rho_j^2
// where G = mean(phi phi'), M = mean(m(phi)) and w_j is the standard deviation
// of basis column j (1 for constant columns). This is half the empirical loss
// mean(alpha^2 - 2 m(alpha)) plus penalties on the standardized scale.
struct VariationalRiesz {
    Dictionary dictionary;
    Vector coef;
    Matrix gram;
    Vector moments;
    double loss = 0.0;  // mean(alpha^2 - 2 m(alpha)) at coef, without penalty
    int sweeps = 0;

    Vector evaluate(const Matrix& rows) const;
};

inline constexpr double kGramMemoryBudgetBytes = 256.0 * 1024.0 * 1024.0;

VariationalRiesz fit_variational_rows(const Matrix& rows, const std::vector<std::string>& names,
                                      const FunctionalSpec& spec, const Dictionary& dictionary,
                                      double l1_weight, double l2_weight,
                                      const CoordinateDescentOptions& options = {});

RieszFit fit_riesz_variational(const Dataset& data, const FoldPlan& plan,
                               const FunctionalSpec& spec, const Dictionary& dictionary,
                               double l1_weight, double l2_weight, std::uint64_t seed = 0);

// Chooses l1 from grid by the cross-fitted variational loss
// mean(alpha^2 - 2 m(alpha)) on held-out folds; ties go to the larger penalty.
struct RieszPenaltySelection {
    double l1 = 0.0;
    std::vector<double> grid;
    std::vector<double> cv_loss;
};
RieszPenaltySelection select_riesz_penalty_cv(const Dataset& data, const FoldPlan& plan,
                                              const FunctionalSpec& spec,
                                              const Dictionary& dictionary,
                                              const std::vector<double>& l1_grid, double l2_weight);

}  // namespace ovb
