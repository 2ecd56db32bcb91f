#include "cmml/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "lexer.hpp"

namespace cmml {

std::string_view op_symbol(BinaryOp op) {
    switch (op) {
        case BinaryOp::add: return "+";
        case BinaryOp::sub: return "-";
        case BinaryOp::mul: return "*";
        case BinaryOp::div: return "/";
        case BinaryOp::lt: return "<";
        case BinaryOp::le: return "<=";
        case BinaryOp::eq: return "=";
        case BinaryOp::ne: return "!=";
        case BinaryOp::ge: return ">=";
        case BinaryOp::gt: return ">";
        case BinaryOp::logical_and: return "and";
        case BinaryOp::logical_or: return "or";
    }
    return "?";
}

std::string_view function_name(Function f) {
    switch (f) {
        case Function::years_between: return "years_between";
        case Function::days_between: return "days_between";
        case Function::today: return "today";
        case Function::abs: return "abs";
        case Function::if_then_else: return "if";
    }
    return "?";
}

std::string_view aggregate_name(AggregateKind k) {
    switch (k) {
        case AggregateKind::count: return "count";
        case AggregateKind::sum: return "sum";
        case AggregateKind::mean: return "mean";
        case AggregateKind::min: return "min";
        case AggregateKind::max: return "max";
    }
    return "?";
}

std::optional<AggregateKind> parse_aggregate(std::string_view s) {
    for (auto k : {AggregateKind::count, AggregateKind::sum, AggregateKind::mean, AggregateKind::min,
                   AggregateKind::max})
        if (aggregate_name(k) == s) return k;
    return std::nullopt;
}

bool Call::operator==(const Call& o) const { return fn == o.fn && args == o.args; }

Expr lit(Value v) { return Expr{Literal{std::move(v)}}; }
Expr ref(std::string name) { return Expr{AttrRef{std::move(name)}}; }
Expr binary(BinaryOp op, Expr lhs, Expr rhs) { return Expr{Binary{op, std::move(lhs), std::move(rhs)}}; }
Expr unary(UnaryOp op, Expr operand) { return Expr{Unary{op, std::move(operand)}}; }
Expr call(Function fn, std::vector<Expr> args) { return Expr{Call{fn, std::move(args)}}; }
Expr aggregate(AggregateKind kind, std::string relationship, std::optional<std::string> attribute) {
    return Expr{Aggregate{kind, std::move(relationship), std::move(attribute)}};
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {
namespace {

std::optional<Function> lookup_function(std::string_view name) {
    for (auto f : {Function::years_between, Function::days_between, Function::today, Function::abs,
                   Function::if_then_else})
        if (function_name(f) == name) return f;
    return std::nullopt;
}

bool reserved(std::string_view w) {
    return w == "and" || w == "or" || w == "not" || w == "true" || w == "false";
}

const Token& expect(TokenCursor& cur, Tok k, std::string_view what) {
    if (!cur.at(k))
        fail(cur.peek(), "expected-token",
             "expected " + std::string(what) + ", found " + std::string(tok_name(cur.peek().kind)));
    return cur.next();
}

class ExprParser {
public:
    explicit ExprParser(TokenCursor& cur) : cur_(cur) {}

    Expr parse_or() {
        Expr lhs = parse_and();
        while (cur_.at_word("or")) {
            cur_.next();
            lhs = binary(BinaryOp::logical_or, std::move(lhs), parse_and());
        }
        return lhs;
    }

private:
    Expr parse_and() {
        Expr lhs = parse_comparison();
        while (cur_.at_word("and")) {
            cur_.next();
            lhs = binary(BinaryOp::logical_and, std::move(lhs), parse_comparison());
        }
        return lhs;
    }

    std::optional<BinaryOp> comparison_op() const {
        switch (cur_.peek().kind) {
            case Tok::lt: return BinaryOp::lt;
            case Tok::le: return BinaryOp::le;
            case Tok::equals: return BinaryOp::eq;
            case Tok::ne: return BinaryOp::ne;
            case Tok::ge: return BinaryOp::ge;
            case Tok::gt: return BinaryOp::gt;
            default: return std::nullopt;
        }
    }

    Expr parse_comparison() {
        Expr lhs = parse_additive();
        while (auto op = comparison_op()) {
            cur_.next();
            lhs = binary(*op, std::move(lhs), parse_additive());
        }
        return lhs;
    }

    Expr parse_additive() {
        Expr lhs = parse_multiplicative();
        while (cur_.at(Tok::plus) || cur_.at(Tok::minus)) {
            const auto op = cur_.next().kind == Tok::plus ? BinaryOp::add : BinaryOp::sub;
            lhs = binary(op, std::move(lhs), parse_multiplicative());
        }
        return lhs;
    }

    Expr parse_multiplicative() {
        Expr lhs = parse_unary();
        while (cur_.at(Tok::star) || cur_.at(Tok::slash)) {
            const auto op = cur_.next().kind == Tok::star ? BinaryOp::mul : BinaryOp::div;
            lhs = binary(op, std::move(lhs), parse_unary());
        }
        return lhs;
    }

    Expr parse_unary() {
        if (cur_.at(Tok::minus)) {
            cur_.next();
            return unary(UnaryOp::negate, parse_unary());
        }
        if (cur_.at_word("not")) {
            cur_.next();
            return unary(UnaryOp::logical_not, parse_unary());
        }
        return parse_primary();
    }

    Expr parse_primary() {
        const Token& t = cur_.peek();
        switch (t.kind) {
            case Tok::number: {
                cur_.next();
                double d = 0;
                auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), d);
                if (ec != std::errc{} || !std::isfinite(d))
                    fail(t, "bad-number", "numeric literal out of range: " + t.text);
                return lit(Value(d));
            }
            case Tok::string:
                cur_.next();
                return lit(Value(t.text));
            case Tok::lparen: {
                cur_.next();
                Expr inner = parse_or();
                expect(cur_, Tok::rparen, "')'");
                return inner;
            }
            case Tok::ident:
                return parse_name();
            default:
                fail(t, "expected-expression", "expected expression, found " + std::string(tok_name(t.kind)));
        }
    }

    Expr parse_name() {
        const Token& t = cur_.next();
        if (t.text == "true") return lit(Value(true));
        if (t.text == "false") return lit(Value(false));
        if (reserved(t.text)) fail(t, "expected-expression", "unexpected keyword '" + t.text + "'");
        if (!cur_.at(Tok::lparen)) {
            if (cur_.at(Tok::dot))
                fail(cur_.peek(), "unexpected-token",
                     "'" + t.text + ".' is only valid inside an aggregate such as mean(" + t.text + ".attr)");
            return ref(t.text);
        }
        cur_.next();  // (
        if (t.text == "date") {
            const Token& s = expect(cur_, Tok::string, "ISO date string");
            auto d = Date::parse_iso(s.text);
            if (!d) fail(s, "bad-date", "date literal must be YYYY-MM-DD, got \"" + s.text + "\"");
            expect(cur_, Tok::rparen, "')'");
            return lit(Value(*d));
        }
        if (auto agg = parse_aggregate(t.text)) {
            const Token& rel = expect(cur_, Tok::ident, "relationship name");
            std::optional<std::string> attr;
            if (cur_.at(Tok::dot)) {
                cur_.next();
                attr = expect(cur_, Tok::ident, "attribute name").text;
            }
            expect(cur_, Tok::rparen, "')'");
            return aggregate(*agg, rel.text, std::move(attr));
        }
        auto fn = lookup_function(t.text);
        if (!fn) fail(t, "unknown-function", "unknown function '" + t.text + "'");
        std::vector<Expr> args;
        if (!cur_.at(Tok::rparen)) {
            args.push_back(parse_or());
            while (cur_.at(Tok::comma)) {
                cur_.next();
                args.push_back(parse_or());
            }
        }
        expect(cur_, Tok::rparen, "')'");
        return call(*fn, std::move(args));
    }

    TokenCursor& cur_;
};

}  // namespace

Expr parse_expression(TokenCursor& cur) { return ExprParser(cur).parse_or(); }

}  // namespace detail

Expr parse_expr(std::string_view text, std::string origin) {
    Diagnostics diags;
    const auto toks = detail::tokenize(text, origin, diags);
    if (!diags.empty()) throw SyntaxError(diags.front());
    detail::TokenCursor cur(toks);
    try {
        Expr e = detail::parse_expression(cur);
        if (!cur.at_end())
            detail::fail(cur.peek(), "trailing-input",
                         "unexpected " + std::string(detail::tok_name(cur.peek().kind)) + " after expression");
        return e;
    } catch (detail::ParseFailure& f) {
        throw SyntaxError(std::move(f.diagnostic));
    }
}

// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(BinaryOp op) {
    switch (op) {
        case BinaryOp::logical_or: return 1;
        case BinaryOp::logical_and: return 2;
        case BinaryOp::lt:
        case BinaryOp::le:
        case BinaryOp::eq:
        case BinaryOp::ne:
        case BinaryOp::ge:
        case BinaryOp::gt: return 3;
        case BinaryOp::add:
        case BinaryOp::sub: return 4;
        case BinaryOp::mul:
        case BinaryOp::div: return 5;
    }
    return 0;
}

constexpr int kUnaryPrec = 6;
constexpr int kPrimaryPrec = 7;

int precedence(const Expr& e) {
    if (auto* b = std::get_if<Binary>(&e.node)) return precedence(b->op);
    if (std::holds_alternative<Unary>(e.node)) return kUnaryPrec;
    return kPrimaryPrec;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\', out += c;
        else if (c == '\n') out += "\\n";
        else if (c == '\t') out += "\\t";
        else out += c;
    }
    return out + "\"";
}

std::string print_literal(const Value& v) {
    if (v.is_string()) return quote(v.string());
    if (v.is_date()) return "date(\"" + v.date().to_iso() + "\")";
    return v.to_text();
}

std::string wrap(const Expr& e, bool parens) {
    std::string s = print_expr(e);
    return parens ? "(" + s + ")" : s;
}

}  // namespace

std::string print_expr(const Expr& e) {
    return std::visit(
        [&](const auto& n) -> std::string {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                return print_literal(n.value);
            } else if constexpr (std::is_same_v<T, AttrRef>) {
                return n.name;
            } else if constexpr (std::is_same_v<T, Unary>) {
                std::string inner = wrap(*n.operand, precedence(*n.operand) < kUnaryPrec);
                if (n.op == UnaryOp::logical_not) return "not " + inner;
                if (!inner.empty() && inner.front() == '-') inner = "(" + inner + ")";
                return "-" + inner;
            } else if constexpr (std::is_same_v<T, Binary>) {
                const int p = precedence(n.op);
                return wrap(*n.lhs, precedence(*n.lhs) < p) + " " + std::string(op_symbol(n.op)) + " " +
                       wrap(*n.rhs, precedence(*n.rhs) <= p);
            } else if constexpr (std::is_same_v<T, Call>) {
                std::string s(function_name(n.fn));
                s += "(";
                for (std::size_t i = 0; i < n.args.size(); ++i) {
                    if (i) s += ", ";
                    s += print_expr(n.args[i]);
                }
                return s + ")";
            } else {
                std::string s(aggregate_name(n.kind));
                s += "(" + n.relationship;
                if (n.attribute) s += "." + *n.attribute;
                return s + ")";
            }
        },
        e.node);
}

namespace {

template <class F>
void walk(const Expr& e, F&& f) {
    f(e);
    if (auto* u = std::get_if<Unary>(&e.node)) walk(*u->operand, f);
    else if (auto* b = std::get_if<Binary>(&e.node)) {
        walk(*b->lhs, f);
        walk(*b->rhs, f);
    } else if (auto* c = std::get_if<Call>(&e.node)) {
        for (const auto& a : c->args) walk(a, f);
    }
}

}  // namespace

std::vector<std::string> referenced_attributes(const Expr& e) {
    std::vector<std::string> out;
    walk(e, [&](const Expr& x) {
        if (auto* r = std::get_if<AttrRef>(&x.node))
            if (std::find(out.begin(), out.end(), r->name) == out.end()) out.push_back(r->name);
    });
    return out;
}

std::vector<std::pair<std::string, std::optional<std::string>>> referenced_aggregates(const Expr& e) {
    std::vector<std::pair<std::string, std::optional<std::string>>> out;
    walk(e, [&](const Expr& x) {
        if (auto* a = std::get_if<Aggregate>(&x.node)) {
            std::pair<std::string, std::optional<std::string>> p{a->relationship, a->attribute};
            if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(std::move(p));
        }
    });
    return out;
}

bool contains_aggregate(const Expr& e) { return !referenced_aggregates(e).empty(); }

// ---------------------------------------------------------------------------
// Typing

namespace {

bool stringish(AttributeKind k) { return is_string_kind(k); }

bool compatible(AttributeKind a, AttributeKind b) { return a == b || (stringish(a) && stringish(b)); }

TypeResult type_error(const Expr& e, std::string msg) { return {std::nullopt, "in '" + print_expr(e) + "': " + msg}; }

TypeResult typed(AttributeKind k) { return {k, {}}; }

}  // namespace

TypeResult type_of(const Expr& e, const TypeScope& scope) {
    using K = AttributeKind;
    return std::visit(
        [&](const auto& n) -> TypeResult {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                const Value& v = n.value;
                if (v.is_number()) return typed(K::numeric);
                if (v.is_string()) return typed(K::nominal);
                if (v.is_date()) return typed(K::date);
                if (v.is_bool()) return typed(K::boolean);
                return type_error(e, "null literal has no type");
            } else if constexpr (std::is_same_v<T, AttrRef>) {
                if (auto k = scope.attribute_kind(n.name)) return typed(*k);
                return type_error(e, "unknown attribute '" + n.name + "'");
            } else if constexpr (std::is_same_v<T, Unary>) {
                auto inner = type_of(*n.operand, scope);
                if (!inner) return inner;
                const K want = n.op == UnaryOp::negate ? K::numeric : K::boolean;
                if (*inner.kind != want)
                    return type_error(e, "operand must be " + std::string(kind_name(want)) + ", found " +
                                             std::string(kind_name(*inner.kind)));
                return typed(want);
            } else if constexpr (std::is_same_v<T, Binary>) {
                auto l = type_of(*n.lhs, scope);
                if (!l) return l;
                auto r = type_of(*n.rhs, scope);
                if (!r) return r;
                const K lk = *l.kind, rk = *r.kind;
                switch (n.op) {
                    case BinaryOp::add:
                    case BinaryOp::sub:
                    case BinaryOp::mul:
                    case BinaryOp::div:
                        if (lk != K::numeric || rk != K::numeric)
                            return type_error(e, "arithmetic needs numeric operands, found " +
                                                     std::string(kind_name(lk)) + " and " + std::string(kind_name(rk)));
                        return typed(K::numeric);
                    case BinaryOp::logical_and:
                    case BinaryOp::logical_or:
                        if (lk != K::boolean || rk != K::boolean)
                            return type_error(e, "logical operator needs boolean operands");
                        return typed(K::boolean);
                    case BinaryOp::eq:
                    case BinaryOp::ne:
                        if (!compatible(lk, rk))
                            return type_error(e, "cannot compare " + std::string(kind_name(lk)) + " with " +
                                                     std::string(kind_name(rk)));
                        return typed(K::boolean);
                    default:
                        if (!compatible(lk, rk) || lk == K::boolean)
                            return type_error(e, "cannot order " + std::string(kind_name(lk)) + " against " +
                                                     std::string(kind_name(rk)));
                        return typed(K::boolean);
                }
            } else if constexpr (std::is_same_v<T, Call>) {
                auto arity = [&](std::size_t want) -> std::optional<TypeResult> {
                    if (n.args.size() != want)
                        return type_error(e, std::string(function_name(n.fn)) + " takes " + std::to_string(want) +
                                                 " argument(s), got " + std::to_string(n.args.size()));
                    return std::nullopt;
                };
                std::vector<K> kinds;
                for (const auto& a : n.args) {
                    auto t = type_of(a, scope);
                    if (!t) return t;
                    kinds.push_back(*t.kind);
                }
                switch (n.fn) {
                    case Function::years_between:
                    case Function::days_between:
                        if (auto err = arity(2)) return *err;
                        if (kinds[0] != K::date || kinds[1] != K::date)
                            return type_error(e, "arguments must be dates");
                        return typed(K::numeric);
                    case Function::today:
                        if (auto err = arity(0)) return *err;
                        return typed(K::date);
                    case Function::abs:
                        if (auto err = arity(1)) return *err;
                        if (kinds[0] != K::numeric) return type_error(e, "argument must be numeric");
                        return typed(K::numeric);
                    case Function::if_then_else:
                        if (auto err = arity(3)) return *err;
                        if (kinds[0] != K::boolean) return type_error(e, "condition must be boolean");
                        if (!compatible(kinds[1], kinds[2])) return type_error(e, "branches have different kinds");
                        return typed(kinds[1]);
                }
                return type_error(e, "unknown function");
            } else {
                if (!scope.has_relationship(n.relationship))
                    return type_error(e, "unknown relationship '" + n.relationship + "'");
                if (n.kind == AggregateKind::count) {
                    if (n.attribute) return type_error(e, "count takes a relationship only");
                    return typed(K::numeric);
                }
                if (!n.attribute) return type_error(e, std::string(aggregate_name(n.kind)) + " needs an attribute");
                auto k = scope.related_attribute_kind(n.relationship, *n.attribute);
                if (!k || !*k)
                    return type_error(e, "unknown attribute '" + *n.attribute + "' across '" + n.relationship + "'");
                const K ak = **k;
                if (ak == K::numeric) return typed(K::numeric);
                if (ak == K::date && n.kind != AggregateKind::sum) return typed(K::date);
                return type_error(e, std::string(aggregate_name(n.kind)) + " over " + std::string(kind_name(ak)) +
                                         " attribute '" + *n.attribute + "'");
            }
        },
        e.node);
}

// ---------------------------------------------------------------------------
// Evaluation

double years_between(Date from, Date to) {
    return std::floor(static_cast<double>(to.days - from.days) / 365.2425);
}

Value aggregate_values(AggregateKind kind, const std::vector<Value>& values) {
    if (kind == AggregateKind::count) return Value(static_cast<double>(values.size()));
    std::vector<const Value*> present;
    for (const auto& v : values)
        if (!v.is_null()) present.push_back(&v);
    if (present.empty()) return kind == AggregateKind::sum ? Value(0.0) : Value::unknown();

    if (present.front()->is_date()) {
        std::int64_t total = 0;
        Date lo = present.front()->date(), hi = lo;
        for (auto* v : present) {
            total += v->date().days;
            lo = std::min(lo, v->date());
            hi = std::max(hi, v->date());
        }
        switch (kind) {
            case AggregateKind::min: return Value(lo);
            case AggregateKind::max: return Value(hi);
            case AggregateKind::mean: {
                const auto n = static_cast<std::int64_t>(present.size());
                // floor division keeps the mean on a calendar day
                std::int64_t q = total / n;
                if (total % n != 0 && total < 0) --q;
                return Value(Date{static_cast<std::int32_t>(q)});
            }
            default: return Value::unknown();
        }
    }

    double sum = 0, lo = present.front()->number(), hi = lo;
    for (auto* v : present) {
        sum += v->number();
        lo = std::min(lo, v->number());
        hi = std::max(hi, v->number());
    }
    switch (kind) {
        case AggregateKind::sum: return Value(sum);
        case AggregateKind::mean: return Value(sum / static_cast<double>(present.size()));
        case AggregateKind::min: return Value(lo);
        case AggregateKind::max: return Value(hi);
        default: return Value::unknown();
    }
}

namespace {

class Evaluator {
public:
    Evaluator(const RowContext& row, const RelatedRowsProvider* related, Clock clock, Diagnostics* diags)
        : row_(row), related_(related), clock_(clock), diags_(diags) {}

    Value operator()(const Expr& e) const {
        return std::visit([&](const auto& n) { return eval_node(e, n); }, e.node);
    }

private:
    Value eval_node(const Expr&, const Literal& n) const { return n.value; }

    Value eval_node(const Expr&, const AttrRef& n) const { return row_.attribute(n.name); }

    Value eval_node(const Expr&, const Unary& n) const {
        Value v = (*this)(*n.operand);
        if (v.is_null()) return Value::unknown();
        if (n.op == UnaryOp::negate) return Value(-v.number());
        return Value(!v.boolean());
    }

    Value eval_node(const Expr& e, const Binary& n) const {
        const Value l = (*this)(*n.lhs);
        const Value r = (*this)(*n.rhs);
        if (l.is_null() || r.is_null()) return Value::unknown();
        switch (n.op) {
            case BinaryOp::add: return Value(l.number() + r.number());
            case BinaryOp::sub: return Value(l.number() - r.number());
            case BinaryOp::mul: return Value(l.number() * r.number());
            case BinaryOp::div:
                if (r.number() == 0.0) {
                    if (diags_)
                        diags_->push_back({Severity::warning, "division-by-zero",
                                           "division by zero in '" + print_expr(e) + "'", {}});
                    return Value::unknown();
                }
                return Value(l.number() / r.number());
            case BinaryOp::logical_and: return Value(l.boolean() && r.boolean());
            case BinaryOp::logical_or: return Value(l.boolean() || r.boolean());
            default: return Value(compare(n.op, l, r));
        }
    }

    static bool compare(BinaryOp op, const Value& l, const Value& r) {
        std::partial_ordering ord = std::partial_ordering::unordered;
        if (l.is_number() && r.is_number()) ord = l.number() <=> r.number();
        else if (l.is_date() && r.is_date()) ord = l.date() <=> r.date();
        else if (l.is_string() && r.is_string()) ord = l.string() <=> r.string();
        else if (l.is_bool() && r.is_bool()) ord = l.boolean() <=> r.boolean();
        switch (op) {
            case BinaryOp::lt: return ord < 0;
            case BinaryOp::le: return ord <= 0;
            case BinaryOp::eq: return ord == 0;
            case BinaryOp::ne: return ord != 0;
            case BinaryOp::ge: return ord >= 0;
            case BinaryOp::gt: return ord > 0;
            default: return false;
        }
    }

    Value eval_node(const Expr&, const Call& n) const {
        switch (n.fn) {
            case Function::today: return Value(clock_.today);
            case Function::if_then_else: {
                const Value c = (*this)(n.args.at(0));
                if (c.is_null()) return Value::unknown();
                return (*this)(n.args.at(c.boolean() ? 1 : 2));
            }
            default: break;
        }
        std::vector<Value> args;
        for (const auto& a : n.args) {
            args.push_back((*this)(a));
            if (args.back().is_null()) return Value::unknown();
        }
        switch (n.fn) {
            case Function::years_between: return Value(years_between(args.at(0).date(), args.at(1).date()));
            case Function::days_between:
                return Value(static_cast<double>(args.at(1).date().days - args.at(0).date().days));
            case Function::abs: return Value(std::fabs(args.at(0).number()));
            default: return Value::unknown();
        }
    }

    Value eval_node(const Expr& e, const Aggregate& n) const {
        if (!related_) {
            if (diags_)
                diags_->push_back({Severity::warning, "no-related-rows",
                                   "'" + print_expr(e) + "' evaluated without related rows", {}});
            return n.kind == AggregateKind::count ? Value(0.0) : Value::unknown();
        }
        if (n.kind == AggregateKind::count) return Value(static_cast<double>(related_->related_count(n.relationship)));
        return aggregate_values(n.kind, related_->related_values(n.relationship, *n.attribute));
    }

    const RowContext& row_;
    const RelatedRowsProvider* related_;
    Clock clock_;
    Diagnostics* diags_;
};

}  // namespace

Value eval(const Expr& e, const RowContext& row, const RelatedRowsProvider* related, Clock clock, Diagnostics* diags) {
    return Evaluator(row, related, clock, diags)(e);
}

}  // namespace cmml
