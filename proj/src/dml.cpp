#include "ovb/dml.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ovb {

std::string to_string(ScoreKind score) {
    switch (score) {
    case ScoreKind::Theta: return "theta";
    case ScoreKind::Sigma2: return "sigma2";
    case ScoreKind::Nu2: return "nu2";
    }
    return "unknown";
}

NuisanceValues evaluate_nuisances(const FunctionalSpec& spec, const Dataset& data,
                                  const NuisanceFit& nuis) {
    const FoldPlan& plan = nuis.plan;
    if (plan.n != data.n()) throw Error("invalid_input", "fold plan size mismatch");
    if (static_cast<int>(nuis.folds.size()) != plan.num_folds)
        throw Error("invalid_input", "one nuisance fit per fold required");
    const Matrix rows = data.short_rows();
    const auto names = data.short_names();
    const Eigen::Index n = data.n();
    NuisanceValues v{Vector(n), Vector(n), Vector(n), Vector(n)};
    for (int fold = 0; fold < plan.num_folds; ++fold) {
        const auto test = plan.test_rows(fold);
        if (test.empty()) continue;
        const Matrix r = select_rows(rows, test);
        const FoldNuisance& f = nuis.folds[static_cast<std::size_t>(fold)];
        const Vector g = f.g(r);
        const Vector a = f.alpha(r);
        const Vector mg = f.m_g ? f.m_g(r) : m_score(spec, f.g, r, names);
        const Vector ma = f.m_alpha ? f.m_alpha(r) : m_score(spec, f.alpha, r, names);
        for (std::size_t k = 0; k < test.size(); ++k) {
            const auto i = test[k];
            const auto kk = static_cast<Eigen::Index>(k);
            v.g[i] = g[kk];
            v.alpha[i] = a[kk];
            v.m_g[i] = mg[kk];
            v.m_alpha[i] = ma[kk];
        }
    }
    if (!v.g.allFinite() || !v.alpha.allFinite() || !v.m_g.allFinite() || !v.m_alpha.allFinite())
        throw Error("non_finite", "nuisance evaluations are not finite");
    return v;
}

namespace {

Vector raw_score(ScoreKind score, const Vector& y, const NuisanceValues& v) {
    switch (score) {
    case ScoreKind::Theta:
        return v.m_g.array() + (y - v.g).array() * v.alpha.array();
    case ScoreKind::Sigma2:
        return (y - v.g).array().square();
    case ScoreKind::Nu2:
        return 2.0 * v.m_alpha.array() - v.alpha.array().square();
    }
    throw Error("invalid_input", "unknown score");
}

}  // namespace

DmlEstimate dml_solve(ScoreKind score, const Dataset& data, const NuisanceValues& values,
                      int folds) {
    const Vector s = raw_score(score, data.outcome, values);
    const auto n = static_cast<double>(s.size());
    DmlEstimate est;
    est.score = score;
    est.value = s.mean();
    est.influence = s.array() - est.value;
    est.std_error = std::sqrt(est.influence.squaredNorm()) / n;
    est.folds = folds;
    if (score == ScoreKind::Nu2 && !(est.value > 0.0)) {
        std::ostringstream msg;
        msg << "estimated nu2 = " << est.value
            << " is not positive; the Riesz representer is badly estimated (mean alpha^2 = "
            << values.alpha.squaredNorm() / n << ", mean m(alpha) = " << values.m_alpha.mean()
            << ")";
        throw Error("nonpositive_nu2", msg.str());
    }
    if (score == ScoreKind::Sigma2 && !(est.value > 0.0))
        throw Error("nonpositive_sigma2", "estimated residual variance is not positive");
    return est;
}

DmlEstimate dml_solve(ScoreKind score, const FunctionalSpec& spec, const Dataset& data,
                      const NuisanceFit& nuis) {
    return dml_solve(score, data, evaluate_nuisances(spec, data, nuis), nuis.plan.num_folds);
}

double orthogonality_check(ScoreKind score, const FunctionalSpec& spec, const Dataset& data,
                           const NuisanceFit& nuis, const EvaluableFunction& direction,
                           NuisanceComponent target, double eps) {
    if (!(eps > 0.0)) throw Error("invalid_input", "eps must be positive");
    auto shifted = [&](double step) {
        NuisanceFit moved = nuis;
        for (auto& f : moved.folds) {
            if (f.m_g || f.m_alpha)
                throw Error("functional_mismatch",
                            "orthogonality check needs nuisances evaluated through m_score");
            if (target == NuisanceComponent::G) {
                f.g = [g = f.g, direction, step](const Matrix& r) -> Vector {
                    return g(r) + step * direction(r);
                };
            } else {
                f.alpha = [a = f.alpha, direction, step](const Matrix& r) -> Vector {
                    return a(r) + step * direction(r);
                };
            }
        }
        return raw_score(score, data.outcome, evaluate_nuisances(spec, data, moved)).mean();
    };
    return (shifted(eps) - shifted(-eps)) / (2.0 * eps);
}

Matrix score_covariance(const std::vector<DmlEstimate>& estimates) {
    if (estimates.empty()) throw Error("invalid_input", "no estimates");
    const Eigen::Index n = estimates.front().influence.size();
    Matrix psi(n, static_cast<Eigen::Index>(estimates.size()));
    for (std::size_t k = 0; k < estimates.size(); ++k) {
        if (estimates[k].influence.size() != n)
            throw Error("invalid_input", "influence vectors have different lengths");
        psi.col(static_cast<Eigen::Index>(k)) = estimates[k].influence;
    }
    return (psi.transpose() * psi) / static_cast<double>(n);
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size();
    return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

}  // namespace

DmlEstimate aggregate_repetitions(const std::vector<DmlEstimate>& reps) {
    if (reps.empty()) throw Error("invalid_input", "no repetitions");
    if (reps.size() == 1) return reps.front();
    std::vector<double> values;
    for (const auto& r : reps) values.push_back(r.value);
    const double med = median(values);
    std::vector<double> variances;
    for (const auto& r : reps)
        variances.push_back(r.std_error * r.std_error + (r.value - med) * (r.value - med));
    DmlEstimate out = reps.front();
    out.value = med;
    out.repetitions = static_cast<int>(reps.size());
    out.influence = Vector::Zero(reps.front().influence.size());
    for (const auto& r : reps) out.influence += r.influence;
    out.influence /= static_cast<double>(reps.size());
    out.influence.array() -= out.influence.mean();
    const auto n = static_cast<double>(out.influence.size());
    const double se = std::sqrt(median(variances));
    const double raw_se = std::sqrt(out.influence.squaredNorm()) / n;
    if (raw_se > 0.0) out.influence *= se / raw_se;
    out.std_error = se;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

LearnerSelection choose(const std::vector<LearnerPtr>& candidates, const Matrix& features,
                        const Vector& targets, const FoldPlan& plan, const char* role) {
    if (candidates.empty())
        throw Error("invalid_config", std::string("no ") + role + " learner configured");
    return select_learner_cv(candidates, features, targets, plan);
}

std::vector<double> rmse(const std::vector<double>& mse) {
    std::vector<double> out;
    for (double m : mse) out.push_back(std::sqrt(m));
    return out;
}

std::vector<std::string> learner_names(const std::vector<LearnerPtr>& learners) {
    std::vector<std::string> out;
    for (const auto& l : learners) out.push_back(l->name());
    return out;
}

struct RepetitionResult {
    DmlEstimate theta, sigma2, nu2;
    NuisanceValues values;
};

}  // namespace

Dictionary default_riesz_dictionary() {
    DictionaryConfig c;
    c.intercept = true;
    c.treatment_column = 0;
    return Dictionary(c);
}

ComponentEstimates estimate_components(const Dataset& data, const FunctionalSpec& spec,
                                       const NuisanceFit& nuis) {
    ComponentEstimates out;
    out.values = evaluate_nuisances(spec, data, nuis);
    const int L = nuis.plan.num_folds;
    out.theta = dml_solve(ScoreKind::Theta, data, out.values, L);
    out.sigma2 = dml_solve(ScoreKind::Sigma2, data, out.values, L);
    out.nu2 = dml_solve(ScoreKind::Nu2, data, out.values, L);
    out.diagnostics.fold_seeds = {nuis.plan.seed};
    out.diagnostics.riesz_method = "injected";
    return out;
}

ComponentEstimates estimate_components(const Dataset& data, const FunctionalSpec& spec,
                                       const EngineConfig& config) {
    data.validate();
    if (spec.requires_binary_treatment() && !data.treatment_is_binary())
        throw Error("functional_mismatch", to_string(spec.kind) + " requires a binary treatment");
    if (config.repetitions < 1) throw Error("invalid_config", "repetitions must be at least 1");

    const bool plm = spec.kind == FunctionalKind::PLMCoefficient;
    RieszMethod method = plm ? RieszMethod::Plm : config.riesz_method;
    if (!plm && method == RieszMethod::Plm &&
        (spec.kind != FunctionalKind::ACD || spec.weight || spec.direction))
        throw Error("invalid_config",
                    "the partialling-out representer applies to the PLM coefficient or an "
                    "unweighted ACD");
    if (method == RieszMethod::Analytic && !spec.requires_binary_treatment())
        throw Error("invalid_config", "analytic Riesz representer needs binary_ate or binary_apo");

    const Matrix rows = data.short_rows();
    const auto names = data.short_names();
    const bool needs_treatment_model = method != RieszMethod::Variational;

    ComponentEstimates out;
    EngineDiagnostics& diag = out.diagnostics;
    diag.riesz_method = to_string(method);
    diag.outcome_candidates = learner_names(config.outcome_learners);
    diag.treatment_candidates = learner_names(config.treatment_learners);

    std::vector<FoldPlan> plans;
    for (int r = 0; r < config.repetitions; ++r) {
        const std::uint64_t s = r == 0 ? config.seed : mix_seed(config.seed, static_cast<std::uint64_t>(r));
        plans.push_back(make_fold_plan(data.n(), config.folds, s, data.group_label, data.strata));
        diag.fold_seeds.push_back(s);
    }

    // Learner and penalty choices are made once, on the first plan.
    const Matrix& outcome_features = plm ? data.covariates : rows;
    const LearnerSelection outcome_sel =
        choose(config.outcome_learners, outcome_features, data.outcome, plans.front(), "outcome");
    diag.outcome_learner = outcome_sel.learner->name();
    diag.outcome_cv_rmse = rmse(outcome_sel.cv_mse);

    LearnerPtr treatment_learner;
    if (needs_treatment_model) {
        const LearnerSelection sel = choose(config.treatment_learners, data.covariates,
                                            data.treatment, plans.front(), "treatment");
        treatment_learner = sel.learner;
        diag.treatment_learner = sel.learner->name();
        diag.treatment_cv_rmse = rmse(sel.cv_mse);
    }

    double riesz_l1 = config.riesz_l1;
    if (method == RieszMethod::Variational && !config.riesz_l1_grid.empty()) {
        riesz_l1 = select_riesz_penalty_cv(data, plans.front(), spec, config.riesz_dictionary,
                                           config.riesz_l1_grid, config.riesz_l2)
                       .l1;
    }
    diag.riesz_l1 = riesz_l1;
    if (spec.kind == FunctionalKind::PolicyTransport)
        diag.transport_outside_hull =
            static_cast<Eigen::Index>(transport_outside_hull(spec, rows, names).size());

    std::vector<RepetitionResult> results(plans.size());
    for (std::size_t r = 0; r < plans.size(); ++r) {
        const FoldPlan& plan = plans[r];
        const int L = plan.num_folds;

        std::optional<RieszFit> riesz;
        switch (method) {
        case RieszMethod::Analytic:
            riesz.emplace(fit_riesz_analytic_binary(data, plan, *treatment_learner, config.trim, spec));
            break;
        case RieszMethod::Plm:
            riesz.emplace(fit_riesz_plm(data, plan, *treatment_learner));
            break;
        case RieszMethod::Variational:
            riesz.emplace(fit_riesz_variational(data, plan, spec, config.riesz_dictionary,
                                                riesz_l1, config.riesz_l2));
            break;
        }
        if (r == 0) {
            diag.trimmed_low = riesz->diagnostics().trimmed_low;
            diag.trimmed_high = riesz->diagnostics().trimmed_high;
        }

        std::vector<FitPtr> outcome_fits;
        for (int fold = 0; fold < L; ++fold) {
            const auto train = plan.train_rows(fold);
            outcome_fits.push_back(outcome_sel.learner->fit(select_rows(outcome_features, train),
                                                            select_rows(data.outcome, train)));
        }

        NuisanceFit nuis;
        nuis.plan = plan;
        const Eigen::Index p = data.p();
        if (plm) {
            // g(d, x) = l(x) + theta (d - m(x)), and d - m(x) = denominator * alpha(d, x).
            const Vector alpha_oof = riesz->out_of_fold(rows);
            Vector l_oof(data.n());
            for (int fold = 0; fold < L; ++fold) {
                const auto test = plan.test_rows(fold);
                const Vector pred = outcome_fits[static_cast<std::size_t>(fold)]->predict(
                    select_rows(data.covariates, test));
                for (std::size_t k = 0; k < test.size(); ++k)
                    l_oof[test[k]] = pred[static_cast<Eigen::Index>(k)];
            }
            const double theta_hat =
                ((data.outcome - l_oof).array() * alpha_oof.array()).mean();
            const double denom = riesz->diagnostics().residual_second_moment;
            for (int fold = 0; fold < L; ++fold) {
                FoldNuisance f;
                const FitPtr l_fit = outcome_fits[static_cast<std::size_t>(fold)];
                const EvaluableFunction alpha = riesz->fold_function(fold);
                f.g = [l_fit, alpha, theta_hat, denom, p](const Matrix& r) -> Vector {
                    return l_fit->predict(r.rightCols(p)) + theta_hat * denom * alpha(r);
                };
                f.alpha = alpha;
                f.m_g = [theta_hat](const Matrix& r) -> Vector {
                    return Vector::Constant(r.rows(), theta_hat);
                };
                f.m_alpha = *riesz->fold_m_function(fold);
                nuis.folds.push_back(std::move(f));
            }
        } else {
            for (int fold = 0; fold < L; ++fold) {
                FoldNuisance f;
                const FitPtr g_fit = outcome_fits[static_cast<std::size_t>(fold)];
                f.g = [g_fit](const Matrix& r) -> Vector { return g_fit->predict(r); };
                f.alpha = riesz->fold_function(fold);
                if (const auto* m = riesz->fold_m_function(fold)) f.m_alpha = *m;
                nuis.folds.push_back(std::move(f));
            }
        }

        RepetitionResult& res = results[r];
        res.values = evaluate_nuisances(spec, data, nuis);
        res.theta = dml_solve(ScoreKind::Theta, data, res.values, L);
        res.sigma2 = dml_solve(ScoreKind::Sigma2, data, res.values, L);
        res.nu2 = dml_solve(ScoreKind::Nu2, data, res.values, L);
    }

    std::vector<DmlEstimate> thetas, sigmas, nus;
    for (const auto& r : results) {
        thetas.push_back(r.theta);
        sigmas.push_back(r.sigma2);
        nus.push_back(r.nu2);
    }
    out.theta = aggregate_repetitions(thetas);
    out.sigma2 = aggregate_repetitions(sigmas);
    out.nu2 = aggregate_repetitions(nus);
    out.values = results.front().values;
    return out;
}

}  // namespace ovb
