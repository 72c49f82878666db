#ifndef COHDYN_EXPR_HPP
#define COHDYN_EXPR_HPP

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "cohdyn/fock.hpp"

namespace cohdyn {

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double x)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
    return {buf, end};
}

/// Named hermitian operators sharing one basis dimension. Expression leaves
/// refer to operators by name so that trees stay serializable.
class OperatorTable {
public:
    OperatorTable() = default;
    explicit OperatorTable(std::size_t dimension) : dim_(dimension) {}

    OperatorTable& add(const std::string& name, Operator op)
    {
        if (!op.is_hermitian()) throw std::invalid_argument("OperatorTable: '" + name + "' is not hermitian");
        if (name.empty() || name.find_first_of("() \t\n") != std::string::npos)
            throw std::invalid_argument("OperatorTable: invalid operator name '" + name + "'");
        if (dim_ == 0) dim_ = op.dimension();
        if (op.dimension() != dim_) throw DimensionMismatch(dim_, op.dimension());
        ops_.insert_or_assign(name, std::move(op));
        return *this;
    }

    const Operator& at(const std::string& name) const
    {
        auto it = ops_.find(name);
        if (it == ops_.end()) throw std::out_of_range("OperatorTable: unknown operator '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return ops_.count(name) != 0; }
    std::size_t dimension() const { return dim_; }

private:
    std::size_t dim_ = 0;
    std::map<std::string, Operator> ops_;
};

/// Real-valued function of expectation values, held as an immutable tree.
class ObservableExpr {
public:
    enum class Kind { Constant, Expect, Sum, Product, Power, Negate };

    ObservableExpr() : ObservableExpr(constant(0.0)) {}

    static ObservableExpr constant(double c)
    {
        auto n = std::make_shared<Node>();
        n->kind = Kind::Constant;
        n->value = c;
        return ObservableExpr(std::move(n));
    }
    static ObservableExpr expect(std::string op)
    {
        auto n = std::make_shared<Node>();
        n->kind = Kind::Expect;
        n->name = std::move(op);
        return ObservableExpr(std::move(n));
    }
    static ObservableExpr sum(std::vector<ObservableExpr> terms)
    {
        if (terms.empty()) return constant(0.0);
        auto n = std::make_shared<Node>();
        n->kind = Kind::Sum;
        n->children = std::move(terms);
        return ObservableExpr(std::move(n));
    }
    static ObservableExpr product(std::vector<ObservableExpr> factors)
    {
        if (factors.empty()) return constant(1.0);
        auto n = std::make_shared<Node>();
        n->kind = Kind::Product;
        n->children = std::move(factors);
        return ObservableExpr(std::move(n));
    }
    static ObservableExpr pow(ObservableExpr base, int k)
    {
        if (k < 1) throw std::invalid_argument("ObservableExpr::pow: exponent must be >= 1");
        auto n = std::make_shared<Node>();
        n->kind = Kind::Power;
        n->exponent = k;
        n->children = {std::move(base)};
        return ObservableExpr(std::move(n));
    }
    static ObservableExpr negate(ObservableExpr e)
    {
        auto n = std::make_shared<Node>();
        n->kind = Kind::Negate;
        n->children = {std::move(e)};
        return ObservableExpr(std::move(n));
    }

    Kind kind() const { return node_->kind; }
    double value() const { return node_->value; }
    const std::string& name() const { return node_->name; }
    int exponent() const { return node_->exponent; }
    const std::vector<ObservableExpr>& children() const { return node_->children; }

    /// Distinct operator names referenced by Expect leaves.
    std::set<std::string> leaves() const
    {
        std::set<std::string> out;
        collect(out);
        return out;
    }

    /// Prefix text form, e.g. (add (expect Q2) (neg (pow (expect Q) 2))).
    std::string to_string() const
    {
        switch (kind()) {
        case Kind::Constant: return format_double(value());
        case Kind::Expect: return "(expect " + name() + ")";
        case Kind::Power: return "(pow " + children()[0].to_string() + " " + std::to_string(exponent()) + ")";
        case Kind::Negate: return "(neg " + children()[0].to_string() + ")";
        case Kind::Sum:
        case Kind::Product: {
            std::string s = kind() == Kind::Sum ? "(add" : "(mul";
            for (const auto& c : children()) s += " " + c.to_string();
            return s + ")";
        }
        }
        return {};
    }

    static ObservableExpr parse(std::string_view text);

    friend bool operator==(const ObservableExpr& a, const ObservableExpr& b)
    {
        if (a.node_ == b.node_) return true;
        if (a.kind() != b.kind()) return false;
        switch (a.kind()) {
        case Kind::Constant: return a.value() == b.value();
        case Kind::Expect: return a.name() == b.name();
        case Kind::Power:
            if (a.exponent() != b.exponent()) return false;
            break;
        default: break;
        }
        return a.children() == b.children();
    }

    friend ObservableExpr operator+(const ObservableExpr& a, const ObservableExpr& b) { return sum({a, b}); }
    friend ObservableExpr operator-(const ObservableExpr& a, const ObservableExpr& b) { return sum({a, negate(b)}); }
    friend ObservableExpr operator*(const ObservableExpr& a, const ObservableExpr& b) { return product({a, b}); }
    friend ObservableExpr operator*(double s, const ObservableExpr& a) { return product({constant(s), a}); }
    friend ObservableExpr operator+(const ObservableExpr& a, double c) { return sum({a, constant(c)}); }
    friend ObservableExpr operator-(const ObservableExpr& a, double c) { return sum({a, constant(-c)}); }
    friend ObservableExpr operator-(const ObservableExpr& a) { return negate(a); }

private:
    struct Node {
        Kind kind = Kind::Constant;
        double value = 0.0;
        std::string name;
        int exponent = 1;
        std::vector<ObservableExpr> children;
    };

    explicit ObservableExpr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    void collect(std::set<std::string>& out) const
    {
        if (kind() == Kind::Expect) out.insert(name());
        for (const auto& c : children()) c.collect(out);
    }

    std::shared_ptr<const Node> node_;
};

namespace detail {

class ExprParser {
public:
    explicit ExprParser(std::string_view s) : s_(s) {}

    ObservableExpr parse_all()
    {
        auto e = parse_expr();
        skip_ws();
        if (pos_ != s_.size()) fail("trailing characters");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const
    {
        throw std::invalid_argument("expression parse error at offset " + std::to_string(pos_) + ": " + msg);
    }

    void skip_ws()
    {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    std::string_view atom()
    {
        skip_ws();
        const auto start = pos_;
        while (pos_ < s_.size() && s_[pos_] != '(' && s_[pos_] != ')' &&
               !std::isspace(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
        if (start == pos_) fail("expected atom");
        return s_.substr(start, pos_ - start);
    }

    double number(std::string_view tok)
    {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) fail("invalid number '" + std::string(tok) + "'");
        return v;
    }

    void expect_char(char c)
    {
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    bool at_close()
    {
        skip_ws();
        return pos_ < s_.size() && s_[pos_] == ')';
    }

    ObservableExpr parse_expr()
    {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        if (s_[pos_] != '(') return ObservableExpr::constant(number(atom()));
        ++pos_;
        const std::string head(atom());
        ObservableExpr out;
        if (head == "const") {
            out = ObservableExpr::constant(number(atom()));
        } else if (head == "expect") {
            out = ObservableExpr::expect(std::string(atom()));
        } else if (head == "neg") {
            out = ObservableExpr::negate(parse_expr());
        } else if (head == "pow") {
            auto base = parse_expr();
            const double k = number(atom());
            if (k != std::floor(k) || k < 1) fail("pow exponent must be a positive integer");
            out = ObservableExpr::pow(std::move(base), static_cast<int>(k));
        } else if (head == "sub") {
            auto a = parse_expr();
            auto b = parse_expr();
            out = a - b;
        } else if (head == "add" || head == "mul") {
            std::vector<ObservableExpr> xs;
            while (!at_close()) xs.push_back(parse_expr());
            if (xs.empty()) fail(head + " needs at least one operand");
            out = head == "add" ? ObservableExpr::sum(std::move(xs)) : ObservableExpr::product(std::move(xs));
        } else {
            fail("unknown form '" + head + "'");
        }
        expect_char(')');
        return out;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline ObservableExpr ObservableExpr::parse(std::string_view text) { return detail::ExprParser(text).parse_all(); }

// ---------------------------------------------------------------------------
// Evaluation

using Gradient = std::map<std::string, double>;

namespace detail {

/// Per-call cache of A psi and <A> for every leaf operator.
class LeafCache {
public:
    LeafCache(const OperatorTable& ops, const PureState& s) : ops_(ops), s_(s)
    {
        if (ops.dimension() != s.dimension()) throw DimensionMismatch(ops.dimension(), s.dimension());
    }

    double mean(const std::string& name) { return entry(name).mean; }
    const Vector& applied(const std::string& name) { return entry(name).applied; }

private:
    struct Entry {
        Vector applied;
        double mean;
    };

    const Entry& entry(const std::string& name)
    {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        const Operator& op = ops_.at(name);
        Vector av = op.matrix() * s_.amplitudes();
        const double m = s_.amplitudes().dot(av).real();
        return cache_.emplace(name, Entry{std::move(av), m}).first->second;
    }

    const OperatorTable& ops_;
    const PureState& s_;
    std::map<std::string, Entry> cache_;
};

inline double eval_node(const ObservableExpr& e, LeafCache& cache)
{
    using K = ObservableExpr::Kind;
    switch (e.kind()) {
    case K::Constant: return e.value();
    case K::Expect: return cache.mean(e.name());
    case K::Negate: return -eval_node(e.children()[0], cache);
    case K::Power: return std::pow(eval_node(e.children()[0], cache), e.exponent());
    case K::Sum: {
        double acc = 0.0;
        for (const auto& c : e.children()) acc += eval_node(c, cache);
        return acc;
    }
    case K::Product: {
        double acc = 1.0;
        for (const auto& c : e.children()) acc *= eval_node(c, cache);
        return acc;
    }
    }
    return 0.0;
}

inline void axpy(Gradient& into, double s, const Gradient& g)
{
    for (const auto& [k, v] : g) into[k] += s * v;
}

/// Forward-mode: value and partial derivatives w.r.t. each leaf expectation.
inline std::pair<double, Gradient> eval_grad(const ObservableExpr& e, LeafCache& cache)
{
    using K = ObservableExpr::Kind;
    switch (e.kind()) {
    case K::Constant: return {e.value(), {}};
    case K::Expect: return {cache.mean(e.name()), {{e.name(), 1.0}}};
    case K::Negate: {
        auto [v, g] = eval_grad(e.children()[0], cache);
        for (auto& kv : g) kv.second = -kv.second;
        return {-v, std::move(g)};
    }
    case K::Power: {
        auto [v, g] = eval_grad(e.children()[0], cache);
        const int k = e.exponent();
        const double d = k * std::pow(v, k - 1);
        for (auto& kv : g) kv.second *= d;
        return {std::pow(v, k), std::move(g)};
    }
    case K::Sum: {
        double acc = 0.0;
        Gradient g;
        for (const auto& c : e.children()) {
            auto [v, gc] = eval_grad(c, cache);
            acc += v;
            axpy(g, 1.0, gc);
        }
        return {acc, std::move(g)};
    }
    case K::Product: {
        const auto& ch = e.children();
        std::vector<std::pair<double, Gradient>> parts;
        parts.reserve(ch.size());
        for (const auto& c : ch) parts.push_back(eval_grad(c, cache));
        double value = 1.0;
        for (const auto& p : parts) value *= p.first;
        Gradient g;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            double others = 1.0;
            for (std::size_t j = 0; j < parts.size(); ++j)
                if (j != i) others *= parts[j].first;
            axpy(g, others, parts[i].second);
        }
        return {value, std::move(g)};
    }
    }
    return {0.0, {}};
}

} // namespace detail

inline double expr_eval(const ObservableExpr& f, const OperatorTable& ops, const PureState& s)
{
    detail::LeafCache cache(ops, s);
    return detail::eval_node(f, cache);
}

/// dF/d<A_i> at the state, one entry per distinct leaf.
inline Gradient expr_gradient_coefficients(const ObservableExpr& f, const OperatorTable& ops, const PureState& s)
{
    detail::LeafCache cache(ops, s);
    auto g = detail::eval_grad(f, cache).second;
    for (const auto& name : f.leaves()) g.try_emplace(name, 0.0);
    return g;
}

/// {F, G} = sum_ij dF/da_i dG/db_j <[A_i, B_j]>/i, so that {<Q>, <P>} = 1.
/// Computed as half the difference of the two orderings, which makes the
/// result antisymmetric bit-for-bit.
inline double expr_bracket(const ObservableExpr& f, const ObservableExpr& g, const OperatorTable& ops,
                           const PureState& s)
{
    require_resolved(s, "expr_bracket");
    detail::LeafCache cache(ops, s);
    const Gradient gf = detail::eval_grad(f, cache).second;
    const Gradient gg = detail::eval_grad(g, cache).second;

    // <[A,B]>/i = 2 Im <A psi, B psi> for hermitian A, B.
    auto one_way = [&](const Gradient& x, const Gradient& y) {
        double acc = 0.0;
        for (const auto& [a, ca] : x) {
            if (ca == 0.0) continue;
            const Vector& av = cache.applied(a);
            for (const auto& [b, cb] : y) {
                if (cb == 0.0) continue;
                acc += ca * cb * 2.0 * av.dot(cache.applied(b)).imag();
            }
        }
        return acc;
    };
    return 0.5 * (one_way(gf, gg) - one_way(gg, gf));
}

/// Linear operator sum_i dF/d<A_i> A_i whose Schrodinger flow i psi' = K psi
/// is the Hamiltonian flow of F at this state.
inline Operator expr_generator(const ObservableExpr& f, const OperatorTable& ops, const PureState& s)
{
    const auto grad = expr_gradient_coefficients(f, ops, s);
    const auto n = static_cast<Eigen::Index>(ops.dimension());
    Matrix k = Matrix::Zero(n, n);
    for (const auto& [name, c] : grad)
        if (c != 0.0) k += c * ops.at(name).matrix();
    return Operator::hermitian(std::move(k));
}

} // namespace cohdyn

#endif
