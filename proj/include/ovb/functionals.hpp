#pragma once

#include "ovb/common.hpp"
#include "ovb/dataio.hpp"
#include "ovb/expr.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ovb {

// A function of short-regressor rows w^s = (d, x). Must be pure.
using EvaluableFunction = std::function<Vector(const Matrix& rows)>;
// Vector-valued variant (one output column per basis function).
using BasisFunction = std::function<Matrix(const Matrix& rows)>;

enum class FunctionalKind {
    BinaryATE,
    BinaryAPO,
    PLMCoefficient,
    ACD,
    PolicyTransport,
    DistributionShift,
};

std::string to_string(FunctionalKind kind);
FunctionalKind functional_kind_from_string(const std::string& name);

// Replaces one column of w^s by an expression evaluated on the original row.
struct TransportAssignment {
    std::string column;
    Expression value;
};

struct FunctionalSpec {
    FunctionalKind kind = FunctionalKind::BinaryATE;
    double apo_level = 1.0;               // BinaryAPO: the fixed treatment level
    std::optional<Expression> weight;     // l(w^s); absent means 1
    std::vector<TransportAssignment> transport;  // PolicyTransport
    std::optional<Expression> direction;  // ACD: t(w^s); absent means 1
    double fd_step = 0.01;                // ACD central-difference step h
    std::optional<Matrix> shift_target;   // DistributionShift: sample of F1
    std::optional<Matrix> shift_base;     // DistributionShift: sample of F0

    bool requires_binary_treatment() const;
};

// Column names d, x1, ..., xp used when callers do not supply names.
std::vector<std::string> default_short_names(Eigen::Index columns);

// Per-row m(w^s, f) for every column of a basis function at once. Throws
// Error("functional_mismatch") for PLMCoefficient (handled by the partialling
// out pipeline), for binary functionals on non-binary treatment, and
// Error("non_finite") when f is not finite at a counterfactual point.
Matrix m_score_basis(const FunctionalSpec& spec, const BasisFunction& f, const Matrix& rows,
                     const std::vector<std::string>& names = {});

Vector m_score(const FunctionalSpec& spec, const EvaluableFunction& f, const Matrix& rows,
               const std::vector<std::string>& names = {});

// Sample mean of m_score over the dataset rows.
double plugin_theta(const FunctionalSpec& spec, const EvaluableFunction& g, const Dataset& data);

// Rows of the transported sample T(w^s) that fall outside the per-column
// range of the observed rows. Support condition check, heuristic only.
std::vector<Eigen::Index> transport_outside_hull(const FunctionalSpec& spec, const Matrix& rows,
                                                 const std::vector<std::string>& names = {});

}  // namespace ovb
