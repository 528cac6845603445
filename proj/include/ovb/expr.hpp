#pragma once

#include "ovb/common.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ovb {

// Small arithmetic language used for weights, directions and transports in
// config files:
//
//   expr    := compare
//   compare := sum (('<' | '<=' | '>' | '>=' | '==' | '!=') sum)?
//   sum     := product (('+' | '-') product)*
//   product := unary (('*' | '/') unary)*
//   unary   := '-' unary | atom
//   atom    := number | identifier | '(' expr ')'
//
// Comparisons evaluate to 1 or 0. Identifiers name columns of the row matrix
// the expression is evaluated on.
class Expression {
public:
    Expression() = default;
    // Throws Error("expr_parse") on syntax errors.
    static Expression parse(const std::string& source);
    static Expression constant(double value);

    // Throws Error("expr_unknown_column") when an identifier is not in names.
    Vector evaluate(const Matrix& rows, const std::vector<std::string>& names) const;

    const std::string& source() const { return source_; }
    bool empty() const { return root_ == nullptr; }
    std::vector<std::string> identifiers() const;

    struct Node;

private:
    std::string source_;
    std::shared_ptr<const Node> root_;
};

}  // namespace ovb
