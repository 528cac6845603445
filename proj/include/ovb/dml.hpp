#pragma once

#include "ovb/common.hpp"
#include "ovb/dataio.hpp"
#include "ovb/functionals.hpp"
#include "ovb/learners.hpp"
#include "ovb/riesz.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ovb {

// The three linear scores:
//   theta : m(W, g) + (Y - g) alpha - theta
//   sigma2: (Y - g)^2 - sigma2
//   nu2   : 2 m(W, alpha) - alpha^2 - nu2
enum class ScoreKind { Theta, Sigma2, Nu2 };

std::string to_string(ScoreKind score);

struct DmlEstimate {
    ScoreKind score = ScoreKind::Theta;
    double value = 0.0;
    Vector influence;  // centred per-observation scores
    double std_error = 0.0;
    int folds = 0;
    int repetitions = 1;
};

// Nuisances trained on the complement of one fold. m_g / m_alpha are optional
// closed-form m-scores (used by the partially linear pipeline, whose
// functional is not evaluated through m_score).
struct FoldNuisance {
    EvaluableFunction g;
    EvaluableFunction alpha;
    EvaluableFunction m_g;
    EvaluableFunction m_alpha;
};

struct NuisanceFit {
    FoldPlan plan;
    std::vector<FoldNuisance> folds;
};

// Out-of-fold nuisance evaluations: entry i comes from the fold fit that
// excluded observation i.
struct NuisanceValues {
    Vector g;
    Vector alpha;
    Vector m_g;
    Vector m_alpha;
};

NuisanceValues evaluate_nuisances(const FunctionalSpec& spec, const Dataset& data,
                                  const NuisanceFit& nuis);

// Root of the empirical score. All three scores are linear in the parameter
// with coefficient -1, so the root is a sample mean. Throws
// Error("nonpositive_nu2") when the nu2 estimate is not positive.
DmlEstimate dml_solve(ScoreKind score, const FunctionalSpec& spec, const Dataset& data,
                      const NuisanceFit& nuis);
DmlEstimate dml_solve(ScoreKind score, const Dataset& data, const NuisanceValues& values,
                      int folds);

// Symmetric finite-difference Gateaux derivative of the mean score in the
// direction of `direction` applied to one nuisance.
enum class NuisanceComponent { G, Alpha };
double orthogonality_check(ScoreKind score, const FunctionalSpec& spec, const Dataset& data,
                           const NuisanceFit& nuis, const EvaluableFunction& direction,
                           NuisanceComponent target, double eps);

// (1/n) sum_i psi_i psi_i' over the estimates' influence vectors.
Matrix score_covariance(const std::vector<DmlEstimate>& estimates);

// Median aggregation over repeated cross-fitting. The standard error is
// sqrt(median_r(se_r^2 + (value_r - median)^2)); the influence vector is the
// average of the per-repetition influences rescaled to that standard error.
DmlEstimate aggregate_repetitions(const std::vector<DmlEstimate>& reps);

// ---------------------------------------------------------------------------
// End-to-end component estimation.

// Expanded dictionary on [D | X] with an intercept, D in column 0.
Dictionary default_riesz_dictionary();

struct EngineConfig {
    std::vector<LearnerPtr> outcome_learners;    // candidates for g (or E[Y|X] in the PLM)
    std::vector<LearnerPtr> treatment_learners;  // candidates for P(D=1|X) or E[D|X]
    RieszMethod riesz_method = RieszMethod::Variational;
    double trim = kDefaultTrim;
    Dictionary riesz_dictionary = default_riesz_dictionary();
    double riesz_l1 = 0.0;
    double riesz_l2 = 0.0;
    std::vector<double> riesz_l1_grid;  // non-empty: choose l1 by cross-fitted loss
    int folds = kDefaultFolds;
    std::uint64_t seed = 0;
    int repetitions = 1;
};

struct EngineDiagnostics {
    std::vector<std::uint64_t> fold_seeds;
    std::string outcome_learner;
    std::string treatment_learner;
    std::vector<double> outcome_cv_rmse;
    std::vector<double> treatment_cv_rmse;
    std::vector<std::string> outcome_candidates;
    std::vector<std::string> treatment_candidates;
    Eigen::Index trimmed_low = 0;
    Eigen::Index trimmed_high = 0;
    double riesz_l1 = 0.0;
    std::string riesz_method;
    Eigen::Index transport_outside_hull = 0;
};

struct ComponentEstimates {
    DmlEstimate theta;
    DmlEstimate sigma2;
    DmlEstimate nu2;
    NuisanceValues values;  // first repetition
    EngineDiagnostics diagnostics;
};

// Cross-fits g and alpha under L-fold plans derived from (seed, repetition),
// then solves the three scores. Groups and strata are taken from the dataset.
ComponentEstimates estimate_components(const Dataset& data, const FunctionalSpec& spec,
                                       const EngineConfig& config);

// Same, with caller-provided nuisances (oracle injection in tests and
// simulations).
ComponentEstimates estimate_components(const Dataset& data, const FunctionalSpec& spec,
                                       const NuisanceFit& nuis);

}  // namespace ovb
