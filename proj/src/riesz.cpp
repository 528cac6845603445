#include "ovb/riesz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ovb {

std::string to_string(RieszMethod method) {
    switch (method) {
    case RieszMethod::Analytic: return "analytic";
    case RieszMethod::Plm: return "plm";
    case RieszMethod::Variational: return "variational";
    }
    return "unknown";
}

RieszMethod riesz_method_from_string(const std::string& name) {
    for (auto m : {RieszMethod::Analytic, RieszMethod::Plm, RieszMethod::Variational})
        if (to_string(m) == name) return m;
    throw Error("invalid_config", "unknown riesz method '" + name + "'");
}

RieszFit::RieszFit(RieszMethod method, FoldPlan plan, std::vector<EvaluableFunction> per_fold,
                   std::vector<EvaluableFunction> m_per_fold, RieszDiagnostics diagnostics)
    : method_(method),
      plan_(std::move(plan)),
      per_fold_(std::move(per_fold)),
      m_per_fold_(std::move(m_per_fold)),
      diagnostics_(std::move(diagnostics)) {
    if (static_cast<int>(per_fold_.size()) != plan_.num_folds)
        throw Error("invalid_input", "one representer per fold required");
}

const EvaluableFunction& RieszFit::fold_function(int fold) const {
    return per_fold_.at(static_cast<std::size_t>(fold));
}

const EvaluableFunction* RieszFit::fold_m_function(int fold) const {
    if (m_per_fold_.empty()) return nullptr;
    return &m_per_fold_.at(static_cast<std::size_t>(fold));
}

Vector RieszFit::out_of_fold(const Matrix& rows) const {
    if (rows.rows() != plan_.n) throw Error("invalid_input", "rows do not match fold plan");
    Vector out(rows.rows());
    for (int fold = 0; fold < plan_.num_folds; ++fold) {
        const auto test = plan_.test_rows(fold);
        const Vector v = fold_function(fold)(select_rows(rows, test));
        for (std::size_t k = 0; k < test.size(); ++k) out[test[k]] = v[static_cast<Eigen::Index>(k)];
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

bool mentions_treatment(const Expression& e, const std::string& treatment_name) {
    for (const auto& id : e.identifiers())
        if (id == treatment_name) return true;
    return false;
}

}  // namespace

RieszFit fit_riesz_analytic_binary(const Dataset& data, const FoldPlan& plan,
                                   const RegressionLearner& propensity_learner, double trim,
                                   const FunctionalSpec& spec) {
    if (!data.treatment_is_binary())
        throw Error("functional_mismatch", "analytic Riesz representer needs a binary treatment");
    if (!(trim > 0.0 && trim < 0.5)) throw Error("invalid_input", "trim must lie in (0, 0.5)");
    if (spec.kind != FunctionalKind::BinaryATE && spec.kind != FunctionalKind::BinaryAPO)
        throw Error("functional_mismatch", "analytic Riesz representer covers ATE and APO only");
    if (spec.kind == FunctionalKind::BinaryAPO && spec.apo_level != 0.0 && spec.apo_level != 1.0)
        throw Error("functional_mismatch", "APO level must be 0 or 1");
    if (spec.weight && mentions_treatment(*spec.weight, data.treatment_name))
        throw Error("functional_mismatch",
                    "analytic Riesz representer needs a weight that depends on covariates only");
    if (plan.n != data.n()) throw Error("invalid_input", "fold plan size mismatch");

    const auto names = data.short_names();
    const Eigen::Index p = data.p();
    std::vector<EvaluableFunction> per_fold;
    RieszDiagnostics diag;
    for (int fold = 0; fold < plan.num_folds; ++fold) {
        const auto train = plan.train_rows(fold);
        const Vector d_train = select_rows(data.treatment, train);
        const double treated = d_train.sum();
        if (treated == 0.0 || treated == static_cast<double>(d_train.size()))
            throw Error("degenerate_treatment",
                        "training fold " + std::to_string(fold) + " is all treated or all control");
        const FitPtr fit = propensity_learner.fit(select_rows(data.covariates, train), d_train);

        const auto test = plan.test_rows(fold);
        const Vector pi_test = fit->predict(select_rows(data.covariates, test));
        for (Eigen::Index k = 0; k < pi_test.size(); ++k) {
            if (pi_test[k] < trim) ++diag.trimmed_low;
            if (pi_test[k] > 1.0 - trim) ++diag.trimmed_high;
        }

        const auto weight = spec.weight;
        const auto kind = spec.kind;
        const double level = spec.apo_level;
        per_fold.push_back([fit, trim, p, weight, kind, level, names](const Matrix& rows) -> Vector {
            const Vector pi = fit->predict(rows.rightCols(p)).cwiseMax(trim).cwiseMin(1.0 - trim);
            const Eigen::ArrayXd d = rows.col(0).array();
            Eigen::ArrayXd alpha;
            if (kind == FunctionalKind::BinaryATE) {
                alpha = d / pi.array() - (1.0 - d) / (1.0 - pi.array());
            } else if (level == 1.0) {
                alpha = d / pi.array();
            } else {
                alpha = (1.0 - d) / (1.0 - pi.array());
            }
            if (weight) alpha *= weight->evaluate(rows, names).array();
            return alpha.matrix();
        });
    }
    return RieszFit(RieszMethod::Analytic, plan, std::move(per_fold), {}, diag);
}

RieszFit fit_riesz_plm(const Dataset& data, const FoldPlan& plan,
                       const RegressionLearner& treatment_learner) {
    if (plan.n != data.n()) throw Error("invalid_input", "fold plan size mismatch");
    const Eigen::Index p = data.p();
    std::vector<FitPtr> fits;
    Vector residual(data.n());
    for (int fold = 0; fold < plan.num_folds; ++fold) {
        const auto train = plan.train_rows(fold);
        fits.push_back(treatment_learner.fit(select_rows(data.covariates, train),
                                             select_rows(data.treatment, train)));
        const auto test = plan.test_rows(fold);
        const Vector pred = fits.back()->predict(select_rows(data.covariates, test));
        for (std::size_t k = 0; k < test.size(); ++k)
            residual[test[k]] = data.treatment[test[k]] - pred[static_cast<Eigen::Index>(k)];
    }
    const double denom = residual.squaredNorm() / static_cast<double>(residual.size());
    const double scale = std::max(variance(data.treatment), 1e-300);
    if (!(denom > 1e-12 * scale))
        throw Error("degenerate_treatment",
                    "treatment residual variance is zero; D is determined by X");

    RieszDiagnostics diag;
    diag.residual_second_moment = denom;
    std::vector<EvaluableFunction> per_fold, m_per_fold;
    for (const auto& fit : fits) {
        per_fold.push_back([fit, denom, p](const Matrix& rows) -> Vector {
            return (rows.col(0) - fit->predict(rows.rightCols(p))) / denom;
        });
        m_per_fold.push_back([denom](const Matrix& rows) -> Vector {
            return Vector::Constant(rows.rows(), 1.0 / denom);
        });
    }
    return RieszFit(RieszMethod::Plm, plan, std::move(per_fold), std::move(m_per_fold), diag);
}

// ---------------------------------------------------------------------------

Vector VariationalRiesz::evaluate(const Matrix& rows) const {
    return dictionary.transform(rows) * coef;
}

VariationalRiesz fit_variational_rows(const Matrix& rows, const std::vector<std::string>& names,
                                      const FunctionalSpec& spec, const Dictionary& dictionary,
                                      double l1_weight, double l2_weight,
                                      const CoordinateDescentOptions& options) {
    if (l1_weight < 0.0 || l2_weight < 0.0)
        throw Error("invalid_input", "penalty weights must be nonnegative");
    const auto q = static_cast<double>(dictionary.terms(rows.cols()).size());
    if (q * q * 8.0 > kGramMemoryBudgetBytes) {
        std::ostringstream msg;
        msg << "dictionary has " << q << " columns; the Gram matrix exceeds the memory budget. "
            << "Lower max_columns or disable interactions.";
        throw Error("dictionary_too_large", msg.str());
    }
    const Matrix phi = dictionary.transform(rows);
    const auto n = static_cast<double>(rows.rows());
    const BasisFunction basis = [&dictionary](const Matrix& r) { return dictionary.transform(r); };
    const Matrix m_phi = m_score_basis(spec, basis, rows, names);

    VariationalRiesz out;
    out.dictionary = dictionary;
    out.gram = (phi.transpose() * phi) / n;
    out.moments = m_phi.colwise().mean().transpose();

    Vector weights(phi.cols());
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
        const double sd = std::sqrt((phi.col(j).array() - phi.col(j).mean()).square().mean());
        weights[j] = sd > 1e-12 ? sd : 1.0;
    }

    if (l1_weight == 0.0) {
        Matrix system = out.gram;
        system.diagonal().array() += l2_weight * weights.array().square();
        out.coef = system.completeOrthogonalDecomposition().solve(out.moments);
        out.sweeps = 0;
    } else {
        const ElasticNetSolution sol = quadratic_coordinate_descent(
            out.gram, out.moments, weights, l1_weight, l2_weight, options);
        if (!sol.converged)
            throw Error("no_convergence", "variational Riesz coordinate descent did not converge");
        out.coef = sol.coef;
        out.sweeps = sol.sweeps;
    }
    out.loss = out.coef.dot(out.gram * out.coef) - 2.0 * out.coef.dot(out.moments);
    return out;
}

RieszFit fit_riesz_variational(const Dataset& data, const FoldPlan& plan,
                               const FunctionalSpec& spec, const Dictionary& dictionary,
                               double l1_weight, double l2_weight, std::uint64_t /*seed*/) {
    if (plan.n != data.n()) throw Error("invalid_input", "fold plan size mismatch");
    if (spec.kind == FunctionalKind::PLMCoefficient)
        throw Error("functional_mismatch",
                    "the PLM coefficient uses the partialling-out representer");
    const Matrix rows = data.short_rows();
    const auto names = data.short_names();
    RieszDiagnostics diag;
    diag.l1 = l1_weight;
    diag.l2 = l2_weight;
    std::vector<EvaluableFunction> per_fold;
    for (int fold = 0; fold < plan.num_folds; ++fold) {
        auto model = std::make_shared<VariationalRiesz>(fit_variational_rows(
            select_rows(rows, plan.train_rows(fold)), names, spec, dictionary, l1_weight,
            l2_weight));
        diag.fold_loss.push_back(model->loss);
        diag.fold_sweeps.push_back(model->sweeps);
        diag.fold_nonzero.push_back((model->coef.array() != 0.0).count());
        per_fold.push_back([model](const Matrix& r) -> Vector { return model->evaluate(r); });
    }
    return RieszFit(RieszMethod::Variational, plan, std::move(per_fold), {}, diag);
}

RieszPenaltySelection select_riesz_penalty_cv(const Dataset& data, const FoldPlan& plan,
                                              const FunctionalSpec& spec,
                                              const Dictionary& dictionary,
                                              const std::vector<double>& l1_grid, double l2_weight) {
    if (l1_grid.empty()) throw Error("invalid_input", "empty penalty grid");
    const Matrix rows = data.short_rows();
    const auto names = data.short_names();
    RieszPenaltySelection sel;
    sel.grid = l1_grid;
    for (double l1 : l1_grid) {
        double loss = 0.0;
        try {
            const RieszFit fit = fit_riesz_variational(data, plan, spec, dictionary, l1, l2_weight);
            for (int fold = 0; fold < plan.num_folds; ++fold) {
                const Matrix test = select_rows(rows, plan.test_rows(fold));
                const Vector a = fit.fold_function(fold)(test);
                const Vector ma = m_score(spec, fit.fold_function(fold), test, names);
                loss += (a.array().square() - 2.0 * ma.array()).sum();
            }
            loss /= static_cast<double>(rows.rows());
        } catch (const Error&) {
            loss = std::numeric_limits<double>::infinity();
        }
        sel.cv_loss.push_back(loss);
    }
    std::size_t best = sel.grid.size();
    for (std::size_t k = 0; k < sel.grid.size(); ++k) {
        if (!std::isfinite(sel.cv_loss[k])) continue;
        if (best == sel.grid.size() || sel.cv_loss[k] < sel.cv_loss[best] - 1e-12 ||
            (std::abs(sel.cv_loss[k] - sel.cv_loss[best]) <= 1e-12 && sel.grid[k] > sel.grid[best]))
            best = k;
    }
    if (best == sel.grid.size()) throw Error("riesz_failed", "no penalty level produced a fit");
    sel.l1 = sel.grid[best];
    return sel;
}

}  // namespace ovb
