#pragma once

#include "ovb/common.hpp"
#include "ovb/dataio.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ovb {

// Basis expansion phi(x) shared by the penalized-linear regression learner
// and the variational Riesz estimator.
struct DictionaryConfig {
    bool intercept = false;
    bool squares = true;
    bool interactions = true;             // pairwise products of non-treatment columns
    bool treatment_interactions = true;   // treatment column times each other column
    std::optional<int> treatment_column;  // which raw column is D, if any
    std::size_t max_columns = 5000;
};

class Dictionary {
public:
    // A basis term is the product of up to two raw columns; -1 marks an unused
    // slot, so {-1,-1} is the constant term and {j,-1} is column j itself.
    struct Term {
        int first = -1;
        int second = -1;
    };

    Dictionary();  // raw features only
    explicit Dictionary(DictionaryConfig config);

    static Dictionary raw();
    static Dictionary expanded(std::optional<int> treatment_column);

    // Terms in output order for a p-column input. Deterministic in p and the
    // config; truncated to max_columns.
    std::vector<Term> terms(Eigen::Index p) const;
    Matrix transform(const Matrix& raw) const;
    std::vector<std::string> describe(const std::vector<std::string>& names) const;

    const DictionaryConfig& config() const { return config_; }

private:
    DictionaryConfig config_;
};

class RegressionFit {
public:
    virtual ~RegressionFit() = default;
    virtual Vector predict(const Matrix& features) const = 0;
    double training_r2() const { return training_r2_; }

protected:
    double training_r2_ = 0.0;
};

using FitPtr = std::shared_ptr<const RegressionFit>;

class RegressionLearner {
public:
    virtual ~RegressionLearner() = default;
    virtual FitPtr fit(const Matrix& features, const Vector& targets) const = 0;
    virtual std::string name() const = 0;
};

using LearnerPtr = std::shared_ptr<const RegressionLearner>;

// ---------------------------------------------------------------------------
// Elastic net by cyclic coordinate descent.

struct CoordinateDescentOptions {
    double tolerance = 1e-7;  // max coefficient change per sweep
    int max_sweeps = 10000;
};

// Minimizes (1/2n)||y - b0 - Z b||^2 + l1 ||b||_1 + (l2/2) ||b||^2 where Z is
// already centred and scaled to unit (population) variance. Returns b; the
// intercept is mean(y).
struct ElasticNetSolution {
    Vector coef;
    int sweeps = 0;
    bool converged = false;
};
ElasticNetSolution elastic_net_standardized(const Matrix& z, const Vector& y, double l1, double l2,
                                            const CoordinateDescentOptions& options = {});

// Largest violation of the subgradient optimality conditions of the problem
// above at coefficients b.
double elastic_net_kkt_violation(const Matrix& z, const Vector& y, const Vector& coef, double l1,
                                 double l2);

// Quadratic form with weighted penalties:
//   (1/2) b'Gb - b'c + l1 sum_j w_j |b_j| + (l2/2) sum_j w_j^2 b_j^2
// G must be symmetric positive semidefinite.
ElasticNetSolution quadratic_coordinate_descent(const Matrix& gram, const Vector& linear,
                                                const Vector& weights, double l1, double l2,
                                                const CoordinateDescentOptions& options = {});

class PenalizedLinearFit final : public RegressionFit {
public:
    PenalizedLinearFit(Dictionary dictionary, double intercept, Vector coef, Vector center,
                       Vector scale, Vector standardized_coef, int sweeps, double training_r2);

    Vector predict(const Matrix& features) const override;

    const Dictionary& dictionary() const { return dictionary_; }
    double intercept() const { return intercept_; }
    // Coefficients on the raw (unstandardized) dictionary scale; zero for
    // dropped constant columns.
    const Vector& coefficients() const { return coef_; }
    const Vector& standardized_coefficients() const { return standardized_coef_; }
    const Vector& center() const { return center_; }
    const Vector& scale() const { return scale_; }  // 0 marks a dropped column
    int sweeps() const { return sweeps_; }

private:
    Dictionary dictionary_;
    double intercept_;
    Vector coef_;
    Vector center_;
    Vector scale_;
    Vector standardized_coef_;
    int sweeps_;
};

// Features are standardized inside the fit and coefficients mapped back.
// Columns with zero variance after expansion are dropped. Throws
// Error("no_convergence") when coordinate descent exhausts its sweeps.
std::shared_ptr<const PenalizedLinearFit> fit_penalized_linear(
    const Matrix& features, const Vector& targets, const Dictionary& dictionary, double l1_weight,
    double l2_weight, std::uint64_t seed = 0, const CoordinateDescentOptions& options = {});

// ---------------------------------------------------------------------------
// Bagged regression trees.

struct TreeEnsembleParams {
    int num_trees = 500;
    int max_depth = 0;  // 0 = unlimited
    int min_leaf = 5;
    double subsample = 1.0;  // bootstrap size as a fraction of n (with replacement)
    int features_per_split = 0;  // 0 = max(1, p/3)
    std::uint64_t seed = 0;
};

class TreeEnsembleFit final : public RegressionFit {
public:
    struct Node {
        int feature = -1;  // -1 for leaves
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };
    using Tree = std::vector<Node>;

    TreeEnsembleFit(std::vector<Tree> trees, double training_r2);
    Vector predict(const Matrix& features) const override;
    std::size_t num_trees() const { return trees_.size(); }

private:
    std::vector<Tree> trees_;
};

std::shared_ptr<const TreeEnsembleFit> fit_tree_ensemble(const Matrix& features,
                                                         const Vector& targets,
                                                         const TreeEnsembleParams& params);

// ---------------------------------------------------------------------------
// Learner objects (hyperparameters bound) for the pluggable contract.

class PenalizedLinearLearner final : public RegressionLearner {
public:
    PenalizedLinearLearner(Dictionary dictionary, double l1, double l2, std::uint64_t seed = 0)
        : dictionary_(std::move(dictionary)), l1_(l1), l2_(l2), seed_(seed) {}
    FitPtr fit(const Matrix& features, const Vector& targets) const override;
    std::string name() const override;

private:
    Dictionary dictionary_;
    double l1_;
    double l2_;
    std::uint64_t seed_;
};

class TreeEnsembleLearner final : public RegressionLearner {
public:
    explicit TreeEnsembleLearner(TreeEnsembleParams params) : params_(params) {}
    FitPtr fit(const Matrix& features, const Vector& targets) const override;
    std::string name() const override;

private:
    TreeEnsembleParams params_;
};

struct LearnerSelection {
    LearnerPtr learner;
    std::size_t index = 0;
    std::vector<double> cv_mse;      // +inf for candidates that failed
    std::vector<std::string> errors;  // empty string when the candidate fit
};

// Candidate with the lowest cross-validated MSE under plan; ties (within
// 1e-12) go to the earlier candidate.
LearnerSelection select_learner_cv(const std::vector<LearnerPtr>& candidates,
                                   const Matrix& features, const Vector& targets,
                                   const FoldPlan& plan);

// Out-of-fold predictions: row i is predicted by the learner fitted on the
// other folds.
Vector cross_fit_predict(const RegressionLearner& learner, const Matrix& features,
                         const Vector& targets, const FoldPlan& plan);

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows);
Vector select_rows(const Vector& v, const std::vector<Eigen::Index>& rows);

}  // namespace ovb
