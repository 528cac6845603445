#include "ovb/functionals.hpp"

#include <cmath>

namespace ovb {

std::string to_string(FunctionalKind kind) {
    switch (kind) {
    case FunctionalKind::BinaryATE: return "binary_ate";
    case FunctionalKind::BinaryAPO: return "binary_apo";
    case FunctionalKind::PLMCoefficient: return "plm_coefficient";
    case FunctionalKind::ACD: return "acd";
    case FunctionalKind::PolicyTransport: return "policy_transport";
    case FunctionalKind::DistributionShift: return "distribution_shift";
    }
    return "unknown";
}

FunctionalKind functional_kind_from_string(const std::string& name) {
    for (auto k : {FunctionalKind::BinaryATE, FunctionalKind::BinaryAPO,
                   FunctionalKind::PLMCoefficient, FunctionalKind::ACD,
                   FunctionalKind::PolicyTransport, FunctionalKind::DistributionShift})
        if (to_string(k) == name) return k;
    throw Error("invalid_config", "unknown functional kind '" + name + "'");
}

bool FunctionalSpec::requires_binary_treatment() const {
    return kind == FunctionalKind::BinaryATE || kind == FunctionalKind::BinaryAPO;
}

std::vector<std::string> default_short_names(Eigen::Index columns) {
    std::vector<std::string> names;
    names.emplace_back("d");
    for (Eigen::Index j = 1; j < columns; ++j) names.push_back("x" + std::to_string(j));
    return names;
}

namespace {

std::vector<std::string> resolve_names(const std::vector<std::string>& names, const Matrix& rows) {
    if (!names.empty()) {
        if (static_cast<Eigen::Index>(names.size()) != rows.cols())
            throw Error("invalid_input", "column name count does not match rows");
        return names;
    }
    return default_short_names(rows.cols());
}

Vector weight_values(const FunctionalSpec& spec, const Matrix& rows,
                     const std::vector<std::string>& names) {
    if (!spec.weight) return Vector::Ones(rows.rows());
    Vector w = spec.weight->evaluate(rows, names);
    if (!w.allFinite()) throw Error("invalid_weight", "weight expression is not finite");
    const bool needs_nonnegative = spec.kind == FunctionalKind::BinaryATE ||
                                   spec.kind == FunctionalKind::BinaryAPO ||
                                   spec.kind == FunctionalKind::PolicyTransport;
    if (needs_nonnegative && (w.array() < 0.0).any())
        throw Error("invalid_weight", "weight expression must be nonnegative");
    return w;
}

Matrix with_treatment(const Matrix& rows, double value) {
    Matrix out = rows;
    out.col(0).setConstant(value);
    return out;
}

Matrix transported(const FunctionalSpec& spec, const Matrix& rows,
                   const std::vector<std::string>& names) {
    Matrix out = rows;
    for (const auto& assignment : spec.transport) {
        Eigen::Index col = -1;
        for (std::size_t j = 0; j < names.size(); ++j)
            if (names[j] == assignment.column) col = static_cast<Eigen::Index>(j);
        if (col < 0)
            throw Error("functional_mismatch",
                        "transport refers to unknown column '" + assignment.column + "'");
        out.col(col) = assignment.value.evaluate(rows, names);
    }
    return out;
}

void check_finite(const Matrix& values, const char* where) {
    if (!values.allFinite())
        throw Error("non_finite", std::string("function is not finite at ") + where);
}

}  // namespace

Matrix m_score_basis(const FunctionalSpec& spec, const BasisFunction& f, const Matrix& rows,
                     const std::vector<std::string>& names_in) {
    const auto names = resolve_names(names_in, rows);
    if (rows.cols() < 1) throw Error("invalid_input", "rows must contain the treatment column");

    if (spec.requires_binary_treatment()) {
        for (Eigen::Index i = 0; i < rows.rows(); ++i)
            if (rows(i, 0) != 0.0 && rows(i, 0) != 1.0)
                throw Error("functional_mismatch",
                            to_string(spec.kind) + " requires a binary treatment");
    }

    switch (spec.kind) {
    case FunctionalKind::BinaryAPO: {
        const Matrix v = f(with_treatment(rows, spec.apo_level));
        check_finite(v, "the counterfactual treatment level");
        return v.array().colwise() * weight_values(spec, rows, names).array();
    }
    case FunctionalKind::BinaryATE: {
        const Matrix v1 = f(with_treatment(rows, 1.0));
        const Matrix v0 = f(with_treatment(rows, 0.0));
        check_finite(v1, "d = 1");
        check_finite(v0, "d = 0");
        return (v1 - v0).array().colwise() * weight_values(spec, rows, names).array();
    }
    case FunctionalKind::PolicyTransport: {
        if (spec.transport.empty())
            throw Error("functional_mismatch", "policy transport needs at least one assignment");
        const Matrix moved = f(transported(spec, rows, names));
        const Matrix here = f(rows);
        check_finite(moved, "transported rows");
        check_finite(here, "observed rows");
        return (moved - here).array().colwise() * weight_values(spec, rows, names).array();
    }
    case FunctionalKind::ACD: {
        const double h = spec.fd_step;
        if (!(h > 0.0)) throw Error("functional_mismatch", "fd_step must be positive");
        Matrix up = rows, down = rows;
        up.col(0).array() += h;
        down.col(0).array() -= h;
        const Matrix fu = f(up);
        const Matrix fd = f(down);
        check_finite(fu, "d + h");
        check_finite(fd, "d - h");
        Vector scale = weight_values(spec, rows, names);
        if (spec.direction) scale.array() *= spec.direction->evaluate(rows, names).array();
        return ((fu - fd) / (2.0 * h)).array().colwise() * scale.array();
    }
    case FunctionalKind::DistributionShift: {
        if (!spec.shift_target || !spec.shift_base)
            throw Error("functional_mismatch", "distribution shift needs both samples");
        if (spec.shift_target->cols() != rows.cols() || spec.shift_base->cols() != rows.cols())
            throw Error("functional_mismatch", "shift samples must have the columns of w^s");
        const Matrix f1 = f(*spec.shift_target);
        const Matrix f0 = f(*spec.shift_base);
        check_finite(f1, "the target sample");
        check_finite(f0, "the base sample");
        const Vector w1 = weight_values(spec, *spec.shift_target, names);
        const Vector w0 = weight_values(spec, *spec.shift_base, names);
        const Eigen::RowVectorXd diff =
            (f1.array().colwise() * w1.array()).colwise().mean() -
            (f0.array().colwise() * w0.array()).colwise().mean();
        return diff.replicate(rows.rows(), 1);
    }
    case FunctionalKind::PLMCoefficient:
        throw Error("functional_mismatch",
                    "the PLM coefficient is estimated by partialling out, not via m_score");
    }
    throw Error("functional_mismatch", "unknown functional");
}

Vector m_score(const FunctionalSpec& spec, const EvaluableFunction& f, const Matrix& rows,
               const std::vector<std::string>& names) {
    const BasisFunction wrapped = [&f](const Matrix& r) -> Matrix { return f(r); };
    return m_score_basis(spec, wrapped, rows, names).col(0);
}

double plugin_theta(const FunctionalSpec& spec, const EvaluableFunction& g, const Dataset& data) {
    return m_score(spec, g, data.short_rows(), data.short_names()).mean();
}

std::vector<Eigen::Index> transport_outside_hull(const FunctionalSpec& spec, const Matrix& rows,
                                                 const std::vector<std::string>& names_in) {
    std::vector<Eigen::Index> outside;
    if (spec.kind != FunctionalKind::PolicyTransport) return outside;
    const auto names = resolve_names(names_in, rows);
    const Matrix moved = transported(spec, rows, names);
    const Eigen::RowVectorXd lo = rows.colwise().minCoeff();
    const Eigen::RowVectorXd hi = rows.colwise().maxCoeff();
    for (Eigen::Index i = 0; i < moved.rows(); ++i) {
        const bool in = ((moved.row(i).array() >= lo.array()) && (moved.row(i).array() <= hi.array())).all();
        if (!in) outside.push_back(i);
    }
    return outside;
}

}  // namespace ovb
