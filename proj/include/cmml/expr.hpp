#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cmml/diagnostics.hpp"
#include "cmml/value.hpp"

namespace cmml {

/// Heap-allocated value with deep copy and deep equality, for recursive ASTs.
template <class T>
class Box {
public:
    Box(T value) : p_(std::make_unique<T>(std::move(value))) {}
    Box(const Box& o) : p_(std::make_unique<T>(*o.p_)) {}
    Box(Box&&) noexcept = default;
    Box& operator=(const Box& o) {
        if (this != &o) p_ = std::make_unique<T>(*o.p_);
        return *this;
    }
    Box& operator=(Box&&) noexcept = default;

    const T& operator*() const { return *p_; }
    const T* operator->() const { return p_.get(); }

    friend bool operator==(const Box& a, const Box& b) { return *a.p_ == *b.p_; }

private:
    std::unique_ptr<T> p_;
};

struct Expr;

enum class BinaryOp { add, sub, mul, div, lt, le, eq, ne, ge, gt, logical_and, logical_or };
enum class UnaryOp { negate, logical_not };
enum class Function { years_between, days_between, today, abs, if_then_else };
enum class AggregateKind { count, sum, mean, min, max };

std::string_view op_symbol(BinaryOp op);
std::string_view function_name(Function f);
std::string_view aggregate_name(AggregateKind k);
std::optional<AggregateKind> parse_aggregate(std::string_view s);

struct Literal {
    Value value;
    bool operator==(const Literal&) const = default;
};

struct AttrRef {
    std::string name;
    bool operator==(const AttrRef&) const = default;
};

struct Unary {
    UnaryOp op;
    Box<Expr> operand;
    bool operator==(const Unary&) const = default;
};

struct Binary {
    BinaryOp op;
    Box<Expr> lhs;
    Box<Expr> rhs;
    bool operator==(const Binary&) const = default;
};

struct Call {
    Function fn;
    std::vector<Expr> args;
    bool operator==(const Call&) const;
};

/// Aggregate over the partner rows reached through `relationship`.
/// `count` has no attribute; every other kind names one.
struct Aggregate {
    AggregateKind kind;
    std::string relationship;
    std::optional<std::string> attribute;
    bool operator==(const Aggregate&) const = default;
};

struct Expr {
    std::variant<Literal, AttrRef, Unary, Binary, Call, Aggregate> node;
    bool operator==(const Expr&) const = default;
};

// Builders, mostly for tests and programmatic schemas.
Expr lit(Value v);
Expr ref(std::string name);
Expr binary(BinaryOp op, Expr lhs, Expr rhs);
Expr unary(UnaryOp op, Expr operand);
Expr call(Function fn, std::vector<Expr> args);
Expr aggregate(AggregateKind kind, std::string relationship, std::optional<std::string> attribute = {});

/// Syntax error carrying a located diagnostic.
class SyntaxError : public Error {
public:
    explicit SyntaxError(Diagnostic d) : Error(d.to_string()), diagnostic(std::move(d)) {}
    Diagnostic diagnostic;
};

/// Parses a complete expression. Precedence from loosest to tightest:
/// or, and, comparison, additive, multiplicative, unary.
Expr parse_expr(std::string_view text, std::string origin = "<inline>");

/// Canonical text with minimal parentheses; parse_expr(print_expr(e)) == e.
std::string print_expr(const Expr& e);

/// Attribute names referenced directly (not through aggregates).
std::vector<std::string> referenced_attributes(const Expr& e);
/// (relationship, attribute) pairs referenced by aggregates.
std::vector<std::pair<std::string, std::optional<std::string>>> referenced_aggregates(const Expr& e);
bool contains_aggregate(const Expr& e);

// ---------------------------------------------------------------------------
// Static typing

/// What the type checker can see from the owning entity.
class TypeScope {
public:
    virtual ~TypeScope() = default;
    virtual std::optional<AttributeKind> attribute_kind(std::string_view name) const = 0;
    /// Kind of `attribute` on the partner entity of `relationship`. The outer
    /// optional is empty when the relationship is unknown; the inner one when
    /// the relationship exists but the attribute does not.
    virtual std::optional<std::optional<AttributeKind>> related_attribute_kind(
        std::string_view relationship, std::string_view attribute) const = 0;
    virtual bool has_relationship(std::string_view relationship) const = 0;
};

struct TypeResult {
    std::optional<AttributeKind> kind;
    std::string error;  // names the offending subexpression when kind is empty

    explicit operator bool() const { return kind.has_value(); }
};

TypeResult type_of(const Expr& e, const TypeScope& scope);

// ---------------------------------------------------------------------------
// Evaluation

class RowContext {
public:
    virtual ~RowContext() = default;
    virtual Value attribute(std::string_view name) const = 0;
};

/// Partner rows of the current row through a relationship.
class RelatedRowsProvider {
public:
    virtual ~RelatedRowsProvider() = default;
    virtual std::size_t related_count(std::string_view relationship) const = 0;
    virtual std::vector<Value> related_values(std::string_view relationship, std::string_view attribute) const = 0;
};

/// Fixed evaluation date standing in for the wall clock.
struct Clock {
    Date today;
};

/// Strict null propagation: any null operand yields null(unknown). Runtime
/// failures (division by zero) become null(unknown) plus a diagnostic.
Value eval(const Expr& e, const RowContext& row, const RelatedRowsProvider* related, Clock clock,
           Diagnostics* diags = nullptr);

/// Aggregate over a multiset with null cells skipped. count counts every
/// element; sum over nothing is 0; mean/min/max over nothing is null(unknown).
Value aggregate_values(AggregateKind kind, const std::vector<Value>& values);

/// floor(day difference / 365.2425).
double years_between(Date from, Date to);

}  // namespace cmml
