#pragma once

// Scalar expressions in named variables: parsing, evaluation, printing and
// exact symbolic differentiation. Grammar and precedence are documented in
// docs/expr-grammar.md.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra::expr {

enum class Op : unsigned char { Lit, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Ln, Sqrt, Abs };

using Bindings = std::map<std::string, double, std::less<>>;

inline bool is_call(Op op) noexcept { return op >= Op::Sin; }

inline std::string_view function_name(Op op) noexcept
{
    switch (op) {
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Exp: return "exp";
        case Op::Ln: return "ln";
        case Op::Sqrt: return "sqrt";
        case Op::Abs: return "abs";
        default: return "";
    }
}

inline bool lookup_function(std::string_view name, Op& out) noexcept
{
    for (Op op : {Op::Sin, Op::Cos, Op::Exp, Op::Ln, Op::Sqrt, Op::Abs}) {
        if (function_name(op) == name) {
            out = op;
            return true;
        }
    }
    return false;
}

struct Node {
    Op op = Op::Lit;
    double value = 0.0;
    std::string name;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
};

/// Immutable handle to an expression tree. Copies share structure.
class Expr {
public:
    Expr() : node_(make_literal(0.0)) {}

    static Expr constant(double v) { return Expr(make_literal(v)); }
    static Expr variable(std::string name)
    {
        auto n = std::make_shared<Node>();
        n->op = Op::Var;
        n->name = std::move(name);
        return Expr(std::move(n));
    }
    static Expr unary(Op op, Expr operand)
    {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->lhs = std::move(operand.node_);
        return Expr(std::move(n));
    }
    static Expr binary(Op op, Expr l, Expr r)
    {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->lhs = std::move(l.node_);
        n->rhs = std::move(r.node_);
        return Expr(std::move(n));
    }

    Op op() const noexcept { return node_->op; }
    double value() const noexcept { return node_->value; }
    const std::string& name() const noexcept { return node_->name; }
    Expr lhs() const { return Expr(node_->lhs); }
    Expr rhs() const { return Expr(node_->rhs); }

    bool is_literal() const noexcept { return node_->op == Op::Lit; }
    bool is_literal(double v) const noexcept { return is_literal() && node_->value == v; }

    const Node* node() const noexcept { return node_.get(); }

private:
    explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    static std::shared_ptr<const Node> make_literal(double v)
    {
        auto n = std::make_shared<Node>();
        n->op = Op::Lit;
        n->value = v;
        return n;
    }

    std::shared_ptr<const Node> node_;
};

namespace detail {

template <class T>
T apply_unary(Op op, T x)
{
    using std::abs, std::cos, std::exp, std::log, std::sin, std::sqrt;
    switch (op) {
        case Op::Neg: return -x;
        case Op::Sin: return sin(x);
        case Op::Cos: return cos(x);
        case Op::Exp: return exp(x);
        case Op::Ln:
            if (!(x > T(0))) throw EvalError("ln of nonpositive argument");
            return log(x);
        case Op::Sqrt:
            if (x < T(0)) throw EvalError("sqrt of negative argument");
            return sqrt(x);
        case Op::Abs: return abs(x);
        default: throw EvalError("not a unary operator");
    }
}

template <class T>
T apply_binary(Op op, T a, T b)
{
    using std::floor, std::pow;
    switch (op) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div:
            if (b == T(0)) throw EvalError("division by zero");
            return a / b;
        case Op::Pow:
            if (a == T(0) && b < T(0)) throw EvalError("zero raised to a negative power");
            if (a < T(0) && b != floor(b)) throw EvalError("negative base with non-integer exponent");
            return pow(a, b);
        default: throw EvalError("not a binary operator");
    }
}

inline bool try_fold_unary(Op op, double x, double& out) noexcept
{
    try {
        out = apply_unary(op, x);
        return std::isfinite(out);
    } catch (const EvalError&) {
        return false;
    }
}

inline bool try_fold_binary(Op op, double a, double b, double& out) noexcept
{
    try {
        out = apply_binary(op, a, b);
        return std::isfinite(out);
    } catch (const EvalError&) {
        return false;
    }
}

} // namespace detail

// Constructors with constant folding and identity elimination (x+0, x*1, x*0, x^1, x^0).

inline Expr neg(const Expr& a)
{
    if (a.is_literal()) return Expr::constant(-a.value());
    if (a.op() == Op::Neg) return a.lhs();
    return Expr::unary(Op::Neg, a);
}

inline Expr call(Op fn, const Expr& a)
{
    double v = 0.0;
    if (a.is_literal() && detail::try_fold_unary(fn, a.value(), v)) return Expr::constant(v);
    return Expr::unary(fn, a);
}

inline Expr operator+(const Expr& a, const Expr& b)
{
    if (a.is_literal() && b.is_literal()) return Expr::constant(a.value() + b.value());
    if (a.is_literal(0.0)) return b;
    if (b.is_literal(0.0)) return a;
    return Expr::binary(Op::Add, a, b);
}

inline Expr operator-(const Expr& a, const Expr& b)
{
    if (a.is_literal() && b.is_literal()) return Expr::constant(a.value() - b.value());
    if (b.is_literal(0.0)) return a;
    if (a.is_literal(0.0)) return neg(b);
    return Expr::binary(Op::Sub, a, b);
}

inline Expr operator-(const Expr& a) { return neg(a); }

inline Expr operator*(const Expr& a, const Expr& b)
{
    if (a.is_literal() && b.is_literal()) return Expr::constant(a.value() * b.value());
    if (a.is_literal(0.0) || b.is_literal(0.0)) return Expr::constant(0.0);
    if (a.is_literal(1.0)) return b;
    if (b.is_literal(1.0)) return a;
    if (a.is_literal(-1.0)) return neg(b);
    if (b.is_literal(-1.0)) return neg(a);
    return Expr::binary(Op::Mul, a, b);
}

inline Expr operator/(const Expr& a, const Expr& b)
{
    double v = 0.0;
    if (a.is_literal() && b.is_literal() && detail::try_fold_binary(Op::Div, a.value(), b.value(), v))
        return Expr::constant(v);
    if (a.is_literal(0.0) && !b.is_literal(0.0)) return Expr::constant(0.0);
    if (b.is_literal(1.0)) return a;
    return Expr::binary(Op::Div, a, b);
}

inline Expr pow(const Expr& a, const Expr& b)
{
    double v = 0.0;
    if (a.is_literal() && b.is_literal() && detail::try_fold_binary(Op::Pow, a.value(), b.value(), v))
        return Expr::constant(v);
    if (b.is_literal(1.0)) return a;
    if (b.is_literal(0.0)) return Expr::constant(1.0);
    return Expr::binary(Op::Pow, a, b);
}

inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    Expr parse_all()
    {
        skip_ws();
        if (pos_ >= src_.size()) throw ParseError(pos_, "empty expression");
        Expr e = parse_sum();
        skip_ws();
        if (pos_ < src_.size())
            throw ParseError(pos_, std::string("unexpected '") + src_[pos_] + "', expected operator or end of input");
        return e;
    }

private:
    void skip_ws()
    {
        while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' || src_[pos_] == '\r'))
            ++pos_;
    }

    bool accept(char c)
    {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr parse_sum()
    {
        Expr acc = parse_product();
        for (;;) {
            if (accept('+'))
                acc = Expr::binary(Op::Add, acc, parse_product());
            else if (accept('-'))
                acc = Expr::binary(Op::Sub, acc, parse_product());
            else
                return acc;
        }
    }

    Expr parse_product()
    {
        Expr acc = parse_unary();
        for (;;) {
            if (accept('*'))
                acc = Expr::binary(Op::Mul, acc, parse_unary());
            else if (accept('/'))
                acc = Expr::binary(Op::Div, acc, parse_unary());
            else
                return acc;
        }
    }

    Expr parse_unary()
    {
        if (accept('-')) return Expr::unary(Op::Neg, parse_unary());
        if (accept('+')) return parse_unary();
        return parse_power();
    }

    // '^' is right-associative; its exponent may carry a unary sign (2^-1).
    Expr parse_power()
    {
        Expr base = parse_primary();
        if (accept('^')) return Expr::binary(Op::Pow, base, parse_unary());
        return base;
    }

    static bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
    static bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
    static bool digit(char c) { return c >= '0' && c <= '9'; }

    Expr parse_primary()
    {
        skip_ws();
        if (pos_ >= src_.size()) throw ParseError(pos_, "expected number, identifier or '('");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            Expr inner = parse_sum();
            if (!accept(')')) throw ParseError(pos_, "expected ')'");
            return inner;
        }
        if (digit(c) || c == '.') return parse_number();
        if (ident_start(c)) {
            const std::size_t start = pos_;
            while (pos_ < src_.size() && ident_char(src_[pos_])) ++pos_;
            const std::string_view id = src_.substr(start, pos_ - start);
            skip_ws();
            if (pos_ < src_.size() && src_[pos_] == '(') {
                Op fn{};
                if (!lookup_function(id, fn)) throw ParseError(start, "unknown function '" + std::string(id) + "'");
                ++pos_;
                Expr arg = parse_sum();
                if (!accept(')')) throw ParseError(pos_, "expected ')'");
                return Expr::unary(fn, arg);
            }
            if (id == "pi") return Expr::constant(3.14159265358979323846);
            if (id == "e") return Expr::constant(2.71828182845904523536);
            return Expr::variable(std::string(id));
        }
        throw ParseError(pos_, std::string("unexpected '") + c + "', expected number, identifier or '('");
    }

    Expr parse_number()
    {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && digit(src_[pos_])) ++pos_;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            while (pos_ < src_.size() && digit(src_[pos_])) ++pos_;
        }
        // exponent only when followed by digits, so "2e" stays a syntax error rather than 2*e
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t q = pos_ + 1;
            if (q < src_.size() && (src_[q] == '+' || src_[q] == '-')) ++q;
            if (q < src_.size() && digit(src_[q])) {
                pos_ = q;
                while (pos_ < src_.size() && digit(src_[pos_])) ++pos_;
            }
        }
        double v = 0.0;
        const auto* first = src_.data() + start;
        const auto* last = src_.data() + pos_;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last) throw ParseError(start, "malformed number");
        return Expr::constant(v);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parses `text` into an expression tree. Throws ParseError.
inline Expr parse(std::string_view text) { return detail::Parser(text).parse_all(); }

// ---------------------------------------------------------------------------
// Tree evaluation

template <class T = double>
T evaluate(const Expr& e, const std::map<std::string, T, std::less<>>& b)
{
    const Node* n = e.node();
    switch (n->op) {
        case Op::Lit: return T(n->value);
        case Op::Var: {
            auto it = b.find(n->name);
            if (it == b.end()) throw EvalError("unbound variable '" + n->name + "'");
            return it->second;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div:
        case Op::Pow: return detail::apply_binary<T>(n->op, evaluate<T>(e.lhs(), b), evaluate<T>(e.rhs(), b));
        default: return detail::apply_unary<T>(n->op, evaluate<T>(e.lhs(), b));
    }
}

inline double eval(const Expr& e, const Bindings& b) { return evaluate<double>(e, b); }

inline void collect_variables(const Expr& e, std::set<std::string>& out)
{
    const Node* n = e.node();
    if (n->op == Op::Var) out.insert(n->name);
    if (n->lhs) collect_variables(e.lhs(), out);
    if (n->rhs) collect_variables(e.rhs(), out);
}

inline std::set<std::string> variables(const Expr& e)
{
    std::set<std::string> out;
    collect_variables(e, out);
    return out;
}

inline bool depends_on(const Expr& e, std::string_view var)
{
    const Node* n = e.node();
    if (n->op == Op::Var) return n->name == var;
    return (n->lhs && depends_on(e.lhs(), var)) || (n->rhs && depends_on(e.rhs(), var));
}

// ---------------------------------------------------------------------------
// Differentiation

inline Expr differentiate(const Expr& e, std::string_view var)
{
    if (!depends_on(e, var)) return Expr::constant(0.0);
    const Expr one = Expr::constant(1.0);
    const Expr two = Expr::constant(2.0);
    switch (e.op()) {
        case Op::Lit: return Expr::constant(0.0);
        case Op::Var: return one;
        case Op::Neg: return neg(differentiate(e.lhs(), var));
        case Op::Add: return differentiate(e.lhs(), var) + differentiate(e.rhs(), var);
        case Op::Sub: return differentiate(e.lhs(), var) - differentiate(e.rhs(), var);
        case Op::Mul: {
            const Expr u = e.lhs(), v = e.rhs();
            return differentiate(u, var) * v + u * differentiate(v, var);
        }
        case Op::Div: {
            const Expr u = e.lhs(), v = e.rhs();
            if (!depends_on(v, var)) return differentiate(u, var) / v;
            return (differentiate(u, var) * v - u * differentiate(v, var)) / pow(v, two);
        }
        case Op::Pow: {
            const Expr u = e.lhs(), v = e.rhs();
            if (!depends_on(v, var)) return v * pow(u, v - one) * differentiate(u, var);
            if (!depends_on(u, var)) return e * call(Op::Ln, u) * differentiate(v, var);
            return e * (differentiate(v, var) * call(Op::Ln, u) + v * differentiate(u, var) / u);
        }
        case Op::Sin: return call(Op::Cos, e.lhs()) * differentiate(e.lhs(), var);
        case Op::Cos: return neg(call(Op::Sin, e.lhs())) * differentiate(e.lhs(), var);
        case Op::Exp: return e * differentiate(e.lhs(), var);
        case Op::Ln: return differentiate(e.lhs(), var) / e.lhs();
        case Op::Sqrt: return differentiate(e.lhs(), var) / (two * e);
        case Op::Abs: return e.lhs() / e * differentiate(e.lhs(), var);
    }
    return Expr::constant(0.0);
}

// ---------------------------------------------------------------------------
// Printing

namespace detail {

inline int precedence(const Node* n)
{
    switch (n->op) {
        case Op::Add:
        case Op::Sub: return 1;
        case Op::Mul:
        case Op::Div: return 2;
        case Op::Neg: return 3;
        case Op::Pow: return 4;
        case Op::Lit: return n->value < 0 || std::signbit(n->value) ? 3 : 5;
        default: return 5;
    }
}

inline void print_literal(double v, std::string& out)
{
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), ptr);
}

inline void print(const Node* n, std::string& out);

inline void print_operand(const Node* n, int min_prec, std::string& out)
{
    if (precedence(n) < min_prec) {
        out += '(';
        print(n, out);
        out += ')';
    } else {
        print(n, out);
    }
}

inline void print(const Node* n, std::string& out)
{
    switch (n->op) {
        case Op::Lit: print_literal(n->value, out); return;
        case Op::Var: out += n->name; return;
        case Op::Neg:
            out += '-';
            print_operand(n->lhs.get(), 3, out);
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
            const int p = precedence(n);
            print_operand(n->lhs.get(), p, out);
            out += n->op == Op::Add ? " + " : n->op == Op::Sub ? " - " : n->op == Op::Mul ? "*" : "/";
            print_operand(n->rhs.get(), p + 1, out);
            return;
        }
        case Op::Pow:
            print_operand(n->lhs.get(), 5, out);
            out += '^';
            print_operand(n->rhs.get(), 3, out);
            return;
        default:
            out += function_name(n->op);
            out += '(';
            print(n->lhs.get(), out);
            out += ')';
            return;
    }
}

} // namespace detail

inline std::string to_string(const Expr& e)
{
    std::string out;
    detail::print(e.node(), out);
    return out;
}

// ---------------------------------------------------------------------------
// Compiled form: postfix code with variables resolved to slots. Used on hot
// paths (quadrature, sampling) where tree walking and map lookups dominate.

class Compiled {
public:
    Compiled() = default;

    Compiled(const Expr& e, std::span<const std::string> slots)
    {
        emit(e.node(), slots);
        fold_closed();
        std::size_t depth = 0;
        for (const auto& ins : code_) {
            if (ins.op == Op::Lit || ins.op == Op::Var)
                ++depth;
            else if (!is_call(ins.op) && ins.op != Op::Neg)
                --depth;
            max_depth_ = std::max(max_depth_, depth);
        }
        constant_ = code_.size() == 1 && code_[0].op == Op::Lit;
    }

    bool is_constant() const noexcept { return constant_; }
    bool is_zero() const noexcept { return constant_ && code_[0].value == 0.0; }

    template <class T = double>
    T operator()(std::span<const T> vars) const
    {
        if (max_depth_ <= kInline) {
            std::array<T, kInline> stack;
            return run<T>(vars, stack.data());
        }
        std::vector<T> stack(max_depth_);
        return run<T>(vars, stack.data());
    }

    template <class T = double>
    T operator()(T a) const
    {
        const std::array<T, 1> v{a};
        return (*this)(std::span<const T>(v));
    }

    template <class T = double>
    T operator()(T a, T b) const
    {
        const std::array<T, 2> v{a, b};
        return (*this)(std::span<const T>(v));
    }

private:
    static constexpr std::size_t kInline = 48;

    struct Instr {
        Op op;
        std::size_t slot;
        double value;
    };

    void emit(const Node* n, std::span<const std::string> slots)
    {
        switch (n->op) {
            case Op::Lit: code_.push_back({Op::Lit, 0, n->value}); return;
            case Op::Var: {
                for (std::size_t i = 0; i < slots.size(); ++i) {
                    if (slots[i] == n->name) {
                        code_.push_back({Op::Var, i, 0.0});
                        return;
                    }
                }
                throw EvalError("unbound variable '" + n->name + "'");
            }
            default:
                emit(n->lhs.get(), slots);
                if (n->rhs) emit(n->rhs.get(), slots);
                code_.push_back({n->op, 0, 0.0});
        }
    }

    // A closed expression collapses to one literal; domain errors are kept for evaluation time.
    void fold_closed()
    {
        for (const auto& ins : code_)
            if (ins.op == Op::Var) return;
        std::vector<double> stack(code_.size());
        try {
            const double v = run<double>({}, stack.data());
            code_.assign(1, Instr{Op::Lit, 0, v});
        } catch (const EvalError&) {
        }
    }

    template <class T>
    T run(std::span<const T> vars, T* stack) const
    {
        std::size_t top = 0;
        for (const auto& ins : code_) {
            switch (ins.op) {
                case Op::Lit: stack[top++] = T(ins.value); break;
                case Op::Var: stack[top++] = vars[ins.slot]; break;
                case Op::Add:
                case Op::Sub:
                case Op::Mul:
                case Op::Div:
                case Op::Pow: {
                    const T b = stack[--top];
                    stack[top - 1] = detail::apply_binary<T>(ins.op, stack[top - 1], b);
                    break;
                }
                default: stack[top - 1] = detail::apply_unary<T>(ins.op, stack[top - 1]);
            }
        }
        return stack[0];
    }

    std::vector<Instr> code_;
    std::size_t max_depth_ = 0;
    bool constant_ = false;
};

} // namespace volterra::expr
