#include "ovb/expr.hpp"

#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

namespace ovb {

struct Expression::Node {
    enum class Kind { Number, Column, Negate, Binary } kind = Kind::Number;
    double value = 0.0;
    std::string name;
    std::string op;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;
using Node = Expression::Node;

class Parser {
public:
    explicit Parser(const std::string& src) : src_(src) {}

    NodePtr parse() {
        auto node = compare();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected '" + std::string(1, src_[pos_]) + "'");
        return node;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        std::ostringstream msg;
        msg << "expression '" << src_ << "': " << what << " at offset " << pos_;
        throw Error("expr_parse", msg.str());
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(const std::string& tok) {
        skip_ws();
        if (src_.compare(pos_, tok.size(), tok) == 0) {
            pos_ += tok.size();
            return true;
        }
        return false;
    }

    static NodePtr binary(std::string op, NodePtr a, NodePtr b) {
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Binary;
        n->op = std::move(op);
        n->lhs = std::move(a);
        n->rhs = std::move(b);
        return n;
    }

    NodePtr compare() {
        auto lhs = sum();
        for (const char* op : {"<=", ">=", "==", "!=", "<", ">"}) {
            if (accept(op)) return binary(op, lhs, sum());
        }
        return lhs;
    }

    NodePtr sum() {
        auto lhs = product();
        for (;;) {
            if (accept("+")) lhs = binary("+", lhs, product());
            else if (accept("-")) lhs = binary("-", lhs, product());
            else return lhs;
        }
    }

    NodePtr product() {
        auto lhs = unary();
        for (;;) {
            if (accept("*")) lhs = binary("*", lhs, unary());
            else if (accept("/")) lhs = binary("/", lhs, unary());
            else return lhs;
        }
    }

    NodePtr unary() {
        if (accept("-")) {
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Negate;
            n->lhs = unary();
            return n;
        }
        if (accept("+")) return unary();
        return atom();
    }

    NodePtr atom() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        if (accept("(")) {
            auto inner = compare();
            if (!accept(")")) fail("expected ')'");
            return inner;
        }
        const char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            double value = 0.0;
            const char* first = src_.data() + pos_;
            const auto [ptr, ec] = std::from_chars(first, src_.data() + src_.size(), value);
            if (ec != std::errc()) fail("bad number");
            pos_ += static_cast<std::size_t>(ptr - first);
            auto n = std::make_shared<Node>();
            n->value = value;
            return n;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            const std::size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_' ||
                    src_[pos_] == '.'))
                ++pos_;
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Column;
            n->name = src_.substr(start, pos_ - start);
            return n;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    const std::string& src_;
    std::size_t pos_ = 0;
};

Eigen::ArrayXd eval(const Node& node, const Matrix& rows, const std::vector<std::string>& names) {
    switch (node.kind) {
    case Node::Kind::Number:
        return Eigen::ArrayXd::Constant(rows.rows(), node.value);
    case Node::Kind::Column:
        for (std::size_t j = 0; j < names.size(); ++j)
            if (names[j] == node.name) return rows.col(static_cast<Eigen::Index>(j)).array();
        throw Error("expr_unknown_column", "expression refers to unknown column '" + node.name + "'");
    case Node::Kind::Negate:
        return -eval(*node.lhs, rows, names);
    case Node::Kind::Binary: {
        const Eigen::ArrayXd a = eval(*node.lhs, rows, names);
        const Eigen::ArrayXd b = eval(*node.rhs, rows, names);
        const std::string& op = node.op;
        if (op == "+") return a + b;
        if (op == "-") return a - b;
        if (op == "*") return a * b;
        if (op == "/") return a / b;
        if (op == "<") return (a < b).cast<double>();
        if (op == "<=") return (a <= b).cast<double>();
        if (op == ">") return (a > b).cast<double>();
        if (op == ">=") return (a >= b).cast<double>();
        if (op == "==") return (a == b).cast<double>();
        if (op == "!=") return (a != b).cast<double>();
        break;
    }
    }
    throw Error("expr_parse", "corrupt expression tree");
}

void collect(const Node& node, std::set<std::string>& out) {
    if (node.kind == Node::Kind::Column) out.insert(node.name);
    if (node.lhs) collect(*node.lhs, out);
    if (node.rhs) collect(*node.rhs, out);
}

}  // namespace

Expression Expression::parse(const std::string& source) {
    Expression e;
    e.source_ = source;
    e.root_ = Parser(source).parse();
    return e;
}

Expression Expression::constant(double value) {
    std::ostringstream s;
    s.precision(17);
    s << value;
    return parse(s.str());
}

Vector Expression::evaluate(const Matrix& rows, const std::vector<std::string>& names) const {
    if (!root_) throw Error("expr_parse", "evaluating an empty expression");
    return eval(*root_, rows, names).matrix();
}

std::vector<std::string> Expression::identifiers() const {
    std::set<std::string> out;
    if (root_) collect(*root_, out);
    return {out.begin(), out.end()};
}

}  // namespace ovb
