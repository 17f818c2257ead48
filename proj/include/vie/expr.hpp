#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "vie/errors.hpp"

namespace vie::expr {

/// Values visible to an expression: t, s, x (the current component), x0..x9 (state components).
struct Scope {
    double t = 0.0;
    double s = 0.0;
    double x = 0.0;
    std::array<double, 10> xs{};
};

using Fn = std::function<double(const Scope&)>;

/// A compiled closed-form expression. Grammar:
///   expr   := term (('+' | '-') term)*
///   term   := unary (('*' | '/') unary)*
///   unary  := '-' unary | power
///   power  := atom ('^' unary)?
///   atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
/// Names: t s x x0..x9 pi e. Functions: exp log sin cos tan sinh cosh tanh sqrt abs (one argument),
/// min max pow (two), clamp (three).
class Expr {
public:
    Expr() = default;
    explicit Expr(std::string src) : src_(std::move(src)) {
        pos_ = 0;
        fn_ = parse_expr();
        skip();
        if (pos_ != src_.size()) fail("unexpected '" + std::string(1, src_[pos_]) + "'");
    }

    double operator()(const Scope& sc) const { return fn_(sc); }
    double operator()(double t, double s, double x) const {
        Scope sc;
        sc.t = t;
        sc.s = s;
        sc.x = x;
        sc.xs[0] = x;
        return fn_(sc);
    }

    const std::string& source() const noexcept { return src_; }
    bool empty() const noexcept { return !fn_; }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw InvalidArgument("expression '" + src_ + "' at " + std::to_string(pos_) + ": " + msg);
    }

    void skip() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Fn parse_expr() {
        Fn lhs = parse_term();
        for (;;) {
            if (eat('+')) lhs = [a = lhs, b = parse_term()](const Scope& s) { return a(s) + b(s); };
            else if (eat('-')) lhs = [a = lhs, b = parse_term()](const Scope& s) { return a(s) - b(s); };
            else return lhs;
        }
    }

    Fn parse_term() {
        Fn lhs = parse_unary();
        for (;;) {
            if (eat('*')) lhs = [a = lhs, b = parse_unary()](const Scope& s) { return a(s) * b(s); };
            else if (eat('/')) lhs = [a = lhs, b = parse_unary()](const Scope& s) { return a(s) / b(s); };
            else return lhs;
        }
    }

    Fn parse_unary() {
        if (eat('-')) return [a = parse_unary()](const Scope& s) { return -a(s); };
        if (eat('+')) return parse_unary();
        return parse_power();
    }

    Fn parse_power() {
        Fn base = parse_atom();
        if (eat('^')) return [a = base, b = parse_unary()](const Scope& s) { return std::pow(a(s), b(s)); };
        return base;
    }

    Fn parse_atom() {
        skip();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        if (eat('(')) {
            Fn inner = parse_expr();
            if (!eat(')')) fail("expected ')'");
            return inner;
        }
        const char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(src_.substr(pos_), &used);
            } catch (const std::exception&) {
                fail("bad number");
            }
            pos_ += used;
            return [v](const Scope&) { return v; };
        }
        if (!std::isalpha(static_cast<unsigned char>(c))) fail("unexpected '" + std::string(1, c) + "'");
        std::size_t start = pos_;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
        const std::string name = src_.substr(start, pos_ - start);
        if (eat('(')) return parse_call(name);
        if (name == "t") return [](const Scope& s) { return s.t; };
        if (name == "s") return [](const Scope& s) { return s.s; };
        if (name == "x") return [](const Scope& s) { return s.x; };
        if (name == "pi") return [](const Scope&) { return std::numbers::pi; };
        if (name == "e") return [](const Scope&) { return std::numbers::e; };
        if (name.size() == 2 && name[0] == 'x' && std::isdigit(static_cast<unsigned char>(name[1]))) {
            const std::size_t i = static_cast<std::size_t>(name[1] - '0');
            return [i](const Scope& s) { return s.xs[i]; };
        }
        fail("unknown name '" + name + "'");
    }

    Fn parse_call(const std::string& name) {
        std::vector<Fn> args{parse_expr()};
        while (eat(',')) args.push_back(parse_expr());
        if (!eat(')')) fail("expected ')'");
        auto arity = [&](std::size_t n) {
            if (args.size() != n) fail(name + " takes " + std::to_string(n) + " argument(s)");
        };
        using U = double (*)(double);
        static const std::pair<const char*, U> unary[] = {
            {"exp", [](double v) { return std::exp(v); }},   {"log", [](double v) { return std::log(v); }},
            {"sin", [](double v) { return std::sin(v); }},   {"cos", [](double v) { return std::cos(v); }},
            {"tan", [](double v) { return std::tan(v); }},   {"tanh", [](double v) { return std::tanh(v); }},
            {"sinh", [](double v) { return std::sinh(v); }}, {"cosh", [](double v) { return std::cosh(v); }},
            {"sqrt", [](double v) { return std::sqrt(v); }}, {"abs", [](double v) { return std::abs(v); }},
        };
        for (const auto& [n, f] : unary)
            if (name == n) {
                arity(1);
                return [f, a = args[0]](const Scope& s) { return f(a(s)); };
            }
        if (name == "min") {
            arity(2);
            return [a = args[0], b = args[1]](const Scope& s) { return std::min(a(s), b(s)); };
        }
        if (name == "max") {
            arity(2);
            return [a = args[0], b = args[1]](const Scope& s) { return std::max(a(s), b(s)); };
        }
        if (name == "pow") {
            arity(2);
            return [a = args[0], b = args[1]](const Scope& s) { return std::pow(a(s), b(s)); };
        }
        if (name == "clamp") {
            arity(3);
            return [a = args[0], lo = args[1], hi = args[2]](const Scope& s) { return std::min(std::max(a(s), lo(s)), hi(s)); };
        }
        fail("unknown function '" + name + "'");
    }

    std::string src_;
    std::size_t pos_ = 0;
    Fn fn_;
};

}  // namespace vie::expr
