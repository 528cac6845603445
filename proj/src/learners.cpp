#include "ovb/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace ovb {

// ---------------------------------------------------------------------------
// Dictionary

Dictionary::Dictionary() {
    config_.squares = false;
    config_.interactions = false;
    config_.treatment_interactions = false;
}

Dictionary::Dictionary(DictionaryConfig config) : config_(config) {}

Dictionary Dictionary::raw() { return Dictionary(); }

Dictionary Dictionary::expanded(std::optional<int> treatment_column) {
    DictionaryConfig c;
    c.treatment_column = treatment_column;
    return Dictionary(c);
}

std::vector<Dictionary::Term> Dictionary::terms(Eigen::Index p) const {
    std::vector<Term> out;
    const int cols = static_cast<int>(p);
    const int t = config_.treatment_column.value_or(-1);
    if (config_.intercept) out.push_back({-1, -1});
    for (int j = 0; j < cols; ++j) out.push_back({j, -1});
    if (config_.squares)
        for (int j = 0; j < cols; ++j) out.push_back({j, j});
    if (config_.treatment_interactions && t >= 0 && t < cols)
        for (int j = 0; j < cols; ++j)
            if (j != t) out.push_back({t, j});
    if (config_.interactions)
        for (int i = 0; i < cols; ++i)
            for (int j = i + 1; j < cols; ++j)
                if (i != t && j != t) out.push_back({i, j});
    if (out.size() > config_.max_columns) out.resize(config_.max_columns);
    return out;
}

Matrix Dictionary::transform(const Matrix& raw) const {
    const auto basis = terms(raw.cols());
    Matrix out(raw.rows(), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t k = 0; k < basis.size(); ++k) {
        const auto col = static_cast<Eigen::Index>(k);
        const Term& term = basis[k];
        if (term.first < 0) {
            out.col(col).setOnes();
        } else if (term.second < 0) {
            out.col(col) = raw.col(term.first);
        } else {
            out.col(col) = raw.col(term.first).cwiseProduct(raw.col(term.second));
        }
    }
    return out;
}

std::vector<std::string> Dictionary::describe(const std::vector<std::string>& names) const {
    std::vector<std::string> out;
    for (const Term& term : terms(static_cast<Eigen::Index>(names.size()))) {
        if (term.first < 0) out.emplace_back("1");
        else if (term.second < 0) out.push_back(names[static_cast<std::size_t>(term.first)]);
        else if (term.first == term.second)
            out.push_back(names[static_cast<std::size_t>(term.first)] + "^2");
        else
            out.push_back(names[static_cast<std::size_t>(term.first)] + "*" +
                          names[static_cast<std::size_t>(term.second)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Coordinate descent

namespace {

double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

}  // namespace

ElasticNetSolution elastic_net_standardized(const Matrix& z, const Vector& y, double l1, double l2,
                                            const CoordinateDescentOptions& options) {
    const Eigen::Index n = z.rows();
    const Eigen::Index q = z.cols();
    ElasticNetSolution sol;
    sol.coef = Vector::Zero(q);
    Vector residual = y.array() - y.mean();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (sol.sweeps = 1; sol.sweeps <= options.max_sweeps; ++sol.sweeps) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < q; ++j) {
            const double old = sol.coef[j];
            const double rho = inv_n * z.col(j).dot(residual) + old;
            const double updated = soft_threshold(rho, l1) / (1.0 + l2);
            const double delta = updated - old;
            if (delta != 0.0) {
                residual.noalias() -= delta * z.col(j);
                sol.coef[j] = updated;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        if (max_change < options.tolerance) {
            sol.converged = true;
            return sol;
        }
    }
    sol.sweeps = options.max_sweeps;
    return sol;
}

double elastic_net_kkt_violation(const Matrix& z, const Vector& y, const Vector& coef, double l1,
                                 double l2) {
    const double inv_n = 1.0 / static_cast<double>(z.rows());
    const Vector residual = (y.array() - y.mean()).matrix() - z * coef;
    const Vector grad = -inv_n * (z.transpose() * residual) + l2 * coef;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < coef.size(); ++j) {
        double v;
        if (coef[j] > 0.0) v = std::abs(grad[j] + l1);
        else if (coef[j] < 0.0) v = std::abs(grad[j] - l1);
        else v = std::max(0.0, std::abs(grad[j]) - l1);
        worst = std::max(worst, v);
    }
    return worst;
}

ElasticNetSolution quadratic_coordinate_descent(const Matrix& gram, const Vector& linear,
                                                const Vector& weights, double l1, double l2,
                                                const CoordinateDescentOptions& options) {
    const Eigen::Index q = gram.rows();
    ElasticNetSolution sol;
    sol.coef = Vector::Zero(q);
    Vector g_beta = Vector::Zero(q);  // gram * coef
    for (sol.sweeps = 1; sol.sweeps <= options.max_sweeps; ++sol.sweeps) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < q; ++j) {
            const double diag = gram(j, j) + l2 * weights[j] * weights[j];
            if (!(diag > 0.0)) continue;
            const double old = sol.coef[j];
            const double partial = linear[j] - (g_beta[j] - gram(j, j) * old);
            const double updated = soft_threshold(partial, l1 * weights[j]) / diag;
            const double delta = updated - old;
            if (delta != 0.0) {
                g_beta.noalias() += delta * gram.col(j);
                sol.coef[j] = updated;
                max_change = std::max(max_change,
                                      std::abs(delta) * (weights[j] > 0.0 ? weights[j] : 1.0));
            }
        }
        if (max_change < options.tolerance) {
            sol.converged = true;
            return sol;
        }
    }
    sol.sweeps = options.max_sweeps;
    return sol;
}

// ---------------------------------------------------------------------------
// Penalized linear

PenalizedLinearFit::PenalizedLinearFit(Dictionary dictionary, double intercept, Vector coef,
                                       Vector center, Vector scale, Vector standardized_coef,
                                       int sweeps, double training_r2)
    : dictionary_(std::move(dictionary)),
      intercept_(intercept),
      coef_(std::move(coef)),
      center_(std::move(center)),
      scale_(std::move(scale)),
      standardized_coef_(std::move(standardized_coef)),
      sweeps_(sweeps) {
    training_r2_ = training_r2;
}

Vector PenalizedLinearFit::predict(const Matrix& features) const {
    const Matrix phi = dictionary_.transform(features);
    if (phi.cols() != coef_.size())
        throw Error("invalid_input", "feature count does not match fitted dictionary");
    return (phi * coef_).array() + intercept_;
}

namespace {

double r2_of(const Vector& y, const Vector& fitted) {
    const double tss = (y.array() - y.mean()).square().sum();
    const double rss = (y - fitted).squaredNorm();
    if (!(tss > 0.0)) return rss > 0.0 ? -std::numeric_limits<double>::infinity() : 1.0;
    return 1.0 - rss / tss;
}

void require_finite(const Matrix& x, const Vector& y) {
    if (x.rows() != y.size()) throw Error("invalid_input", "features and targets length mismatch");
    if (!x.allFinite() || !y.allFinite()) throw Error("invalid_input", "non-finite learner input");
}

}  // namespace

std::shared_ptr<const PenalizedLinearFit> fit_penalized_linear(
    const Matrix& features, const Vector& targets, const Dictionary& dictionary, double l1_weight,
    double l2_weight, std::uint64_t /*seed*/, const CoordinateDescentOptions& options) {
    require_finite(features, targets);
    if (features.rows() < 2) throw Error("invalid_input", "penalized linear fit needs n >= 2");
    if (l1_weight < 0.0 || l2_weight < 0.0)
        throw Error("invalid_input", "penalty weights must be nonnegative");

    const Matrix phi = dictionary.transform(features);
    const Eigen::Index n = phi.rows();
    const Eigen::Index q = phi.cols();
    Vector center = phi.colwise().mean().transpose();
    Vector scale(q);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index j = 0; j < q; ++j) {
        const double sd =
            std::sqrt((phi.col(j).array() - center[j]).square().sum() / static_cast<double>(n));
        if (sd > 1e-12 * (1.0 + std::abs(center[j]))) {
            scale[j] = sd;
            kept.push_back(j);
        } else {
            scale[j] = 0.0;
        }
    }
    Matrix z(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const auto j = kept[k];
        z.col(static_cast<Eigen::Index>(k)) = (phi.col(j).array() - center[j]) / scale[j];
    }
    const ElasticNetSolution sol = elastic_net_standardized(z, targets, l1_weight, l2_weight, options);
    if (!sol.converged) {
        std::ostringstream msg;
        msg << "coordinate descent did not converge in " << options.max_sweeps << " sweeps";
        throw Error("no_convergence", msg.str());
    }
    Vector coef = Vector::Zero(q);
    Vector standardized = Vector::Zero(q);
    double intercept = targets.mean();
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const auto j = kept[k];
        standardized[j] = sol.coef[static_cast<Eigen::Index>(k)];
        coef[j] = standardized[j] / scale[j];
        intercept -= coef[j] * center[j];
    }
    const Vector fitted = (phi * coef).array() + intercept;
    return std::make_shared<PenalizedLinearFit>(dictionary, intercept, std::move(coef),
                                                std::move(center), std::move(scale),
                                                std::move(standardized), sol.sweeps,
                                                r2_of(targets, fitted));
}

FitPtr PenalizedLinearLearner::fit(const Matrix& features, const Vector& targets) const {
    return fit_penalized_linear(features, targets, dictionary_, l1_, l2_, seed_);
}

std::string PenalizedLinearLearner::name() const {
    std::ostringstream s;
    s << "penalized_linear(l1=" << l1_ << ",l2=" << l2_ << ")";
    return s.str();
}

// ---------------------------------------------------------------------------
// Tree ensemble

namespace {

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, const Vector& y, const TreeEnsembleParams& params,
                std::uint64_t seed)
        : x_(x), y_(y), params_(params), rng_(seed) {
        const int p = static_cast<int>(x.cols());
        mtry_ = params.features_per_split > 0 ? std::min(params.features_per_split, p)
                                              : std::max(1, p / 3);
        features_.resize(static_cast<std::size_t>(p));
        std::iota(features_.begin(), features_.end(), 0);
    }

    TreeEnsembleFit::Tree build(std::vector<Eigen::Index> rows) {
        tree_.clear();
        grow(rows, 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<Eigen::Index>& rows, int depth) {
        const int id = static_cast<int>(tree_.size());
        tree_.emplace_back();
        double sum = 0.0;
        for (auto r : rows) sum += y_[r];
        const double count = static_cast<double>(rows.size());
        tree_[static_cast<std::size_t>(id)].value = sum / count;

        const auto min_leaf = static_cast<std::size_t>(std::max(1, params_.min_leaf));
        const bool depth_limited = params_.max_depth > 0 && depth >= params_.max_depth;
        if (depth_limited || rows.size() < 2 * min_leaf) return id;

        // Partial Fisher-Yates to draw mtry distinct features.
        for (int k = 0; k < mtry_; ++k) {
            const auto remaining = features_.size() - static_cast<std::size_t>(k);
            const auto pick = static_cast<std::size_t>(k) + static_cast<std::size_t>(rng_() % remaining);
            std::swap(features_[static_cast<std::size_t>(k)], features_[pick]);
        }

        double parent_sse = 0.0;
        {
            const double mu = sum / count;
            for (auto r : rows) parent_sse += (y_[r] - mu) * (y_[r] - mu);
        }
        double best_gain = 1e-12 * std::max(1.0, parent_sse);
        int best_feature = -1;
        double best_threshold = 0.0;

        std::vector<Eigen::Index> sorted = rows;
        for (int k = 0; k < mtry_; ++k) {
            const int f = features_[static_cast<std::size_t>(k)];
            std::sort(sorted.begin(), sorted.end(), [&](Eigen::Index a, Eigen::Index b) {
                const double xa = x_(a, f), xb = x_(b, f);
                return xa < xb || (xa == xb && a < b);
            });
            double left_sum = 0.0, left_sq = 0.0;
            double total_sq = 0.0;
            for (auto r : sorted) total_sq += y_[r] * y_[r];
            for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                const double v = y_[sorted[i]];
                left_sum += v;
                left_sq += v * v;
                const std::size_t nl = i + 1;
                const std::size_t nr = sorted.size() - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double xl = x_(sorted[i], f);
                const double xr = x_(sorted[i + 1], f);
                if (!(xl < xr)) continue;
                const double right_sum = sum - left_sum;
                const double right_sq = total_sq - left_sq;
                const double sse = (left_sq - left_sum * left_sum / static_cast<double>(nl)) +
                                   (right_sq - right_sum * right_sum / static_cast<double>(nr));
                const double gain = parent_sse - sse;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = 0.5 * (xl + xr);
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<Eigen::Index> left, right;
        for (auto r : rows) (x_(r, best_feature) <= best_threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        const int l = grow(left, depth + 1);
        const int rgt = grow(right, depth + 1);
        auto& node = tree_[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = rgt;
        return id;
    }

    const Matrix& x_;
    const Vector& y_;
    const TreeEnsembleParams& params_;
    std::mt19937_64 rng_;
    int mtry_ = 1;
    std::vector<int> features_;
    TreeEnsembleFit::Tree tree_;
};

double predict_tree(const TreeEnsembleFit::Tree& tree, const Matrix& x, Eigen::Index row) {
    int id = 0;
    for (;;) {
        const auto& node = tree[static_cast<std::size_t>(id)];
        if (node.feature < 0) return node.value;
        id = x(row, node.feature) <= node.threshold ? node.left : node.right;
    }
}

}  // namespace

TreeEnsembleFit::TreeEnsembleFit(std::vector<Tree> trees, double training_r2)
    : trees_(std::move(trees)) {
    training_r2_ = training_r2;
}

Vector TreeEnsembleFit::predict(const Matrix& features) const {
    Vector out = Vector::Zero(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        double s = 0.0;
        for (const auto& tree : trees_) s += predict_tree(tree, features, i);
        out[i] = s / static_cast<double>(trees_.size());
    }
    return out;
}

std::shared_ptr<const TreeEnsembleFit> fit_tree_ensemble(const Matrix& features,
                                                         const Vector& targets,
                                                         const TreeEnsembleParams& params) {
    require_finite(features, targets);
    const Eigen::Index n = features.rows();
    if (params.num_trees < 1) throw Error("invalid_input", "num_trees must be positive");
    if (params.min_leaf < 1) throw Error("invalid_input", "min_leaf must be positive");
    if (!(params.subsample > 0.0 && params.subsample <= 1.0))
        throw Error("invalid_input", "subsample must lie in (0, 1]");
    if (n < 2 * params.min_leaf) throw Error("invalid_input", "tree ensemble needs n >= 2*min_leaf");
    if (features.cols() < 1) throw Error("invalid_input", "tree ensemble needs at least one feature");

    const auto draw = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(params.subsample * static_cast<double>(n))));
    std::vector<TreeEnsembleFit::Tree> trees(static_cast<std::size_t>(params.num_trees));
    parallel_for(trees.size(), [&](std::size_t t) {
        const std::uint64_t tree_seed = mix_seed(params.seed, t);
        std::mt19937_64 rng(tree_seed);
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(draw));
        for (auto& r : rows) r = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
        TreeBuilder builder(features, targets, params, mix_seed(tree_seed, 1));
        trees[t] = builder.build(std::move(rows));
    });
    Vector fitted(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& tree : trees) s += predict_tree(tree, features, i);
        fitted[i] = s / static_cast<double>(trees.size());
    }
    return std::make_shared<TreeEnsembleFit>(std::move(trees), r2_of(targets, fitted));
}

FitPtr TreeEnsembleLearner::fit(const Matrix& features, const Vector& targets) const {
    return fit_tree_ensemble(features, targets, params_);
}

std::string TreeEnsembleLearner::name() const {
    std::ostringstream s;
    s << "tree_ensemble(trees=" << params_.num_trees << ",max_depth=" << params_.max_depth
      << ",min_leaf=" << params_.min_leaf << ")";
    return s.str();
}

// ---------------------------------------------------------------------------
// Selection and cross-fitting helpers

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
    return out;
}

Vector select_rows(const Vector& v, const std::vector<Eigen::Index>& rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[rows[k]];
    return out;
}

Vector cross_fit_predict(const RegressionLearner& learner, const Matrix& features,
                         const Vector& targets, const FoldPlan& plan) {
    if (plan.n != features.rows()) throw Error("invalid_input", "fold plan size mismatch");
    Vector out(features.rows());
    for (int fold = 0; fold < plan.num_folds; ++fold) {
        const auto train = plan.train_rows(fold);
        const auto test = plan.test_rows(fold);
        const FitPtr fit = learner.fit(select_rows(features, train), select_rows(targets, train));
        const Vector pred = fit->predict(select_rows(features, test));
        for (std::size_t k = 0; k < test.size(); ++k) out[test[k]] = pred[static_cast<Eigen::Index>(k)];
    }
    return out;
}

LearnerSelection select_learner_cv(const std::vector<LearnerPtr>& candidates,
                                   const Matrix& features, const Vector& targets,
                                   const FoldPlan& plan) {
    if (candidates.empty()) throw Error("invalid_input", "no candidate learners");
    LearnerSelection sel;
    sel.cv_mse.assign(candidates.size(), std::numeric_limits<double>::infinity());
    sel.errors.assign(candidates.size(), std::string());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        try {
            const Vector pred = cross_fit_predict(*candidates[c], features, targets, plan);
            sel.cv_mse[c] = (targets - pred).squaredNorm() / static_cast<double>(targets.size());
        } catch (const std::exception& e) {
            sel.errors[c] = e.what();
        }
    }
    std::size_t best = candidates.size();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (!std::isfinite(sel.cv_mse[c])) continue;
        if (best == candidates.size() || sel.cv_mse[c] < sel.cv_mse[best] - 1e-12) best = c;
    }
    if (best == candidates.size()) {
        std::string all;
        for (const auto& e : sel.errors) all += (all.empty() ? "" : "; ") + e;
        throw Error("learner_failed", "every candidate learner failed: " + all);
    }
    sel.index = best;
    sel.learner = candidates[best];
    return sel;
}

}  // namespace ovb
