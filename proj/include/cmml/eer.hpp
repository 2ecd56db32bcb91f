#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmml/diagnostics.hpp"
#include "cmml/expr.hpp"
#include "cmml/value.hpp"

namespace cmml {

struct Attribute {
    std::string name;
    AttributeKind kind = AttributeKind::text;
    bool is_key = false;
    bool optional = false;
    bool derived = false;
    std::optional<Expr> applicable_when;
    std::optional<Expr> derivation;  // present iff derived

    bool operator==(const Attribute&) const = default;
};

struct EntityType {
    std::string name;
    std::vector<Attribute> attributes;

    const Attribute* find(std::string_view attr) const;
    std::vector<const Attribute*> key_attributes() const;
    /// Attributes whose values come from the entity's table (keys included).
    std::vector<const Attribute*> stored_attributes() const;

    bool operator==(const EntityType&) const = default;
};

enum class MaxCard { one, many };

/// (min, max) participation; min is 0 or 1.
struct Cardinality {
    int min = 0;
    MaxCard max = MaxCard::many;

    std::string to_string() const;
    bool operator==(const Cardinality&) const = default;
};

/// Cardinalities are written look-across: in `A (1,1) -- (1,N) B` each B has
/// exactly one A and each A has one or more B.
struct RelationshipEnd {
    std::string entity;
    Cardinality card;

    bool operator==(const RelationshipEnd&) const = default;
};

struct Relationship {
    std::string name;
    RelationshipEnd left;
    RelationshipEnd right;
    std::vector<std::string> fk_columns;  // 1 column, or 2 for N:M (left key, right key)
    std::vector<Attribute> attributes;    // only for N:M

    bool is_many_to_many() const { return left.card.max == MaxCard::many && right.card.max == MaxCard::many; }
    bool is_one_to_one() const { return left.card.max == MaxCard::one && right.card.max == MaxCard::one; }
    bool involves(std::string_view entity) const { return left.entity == entity || right.entity == entity; }

    /// Entity whose key the foreign key references (the "one" side; left for 1:1).
    const RelationshipEnd& referenced() const;
    /// Entity whose table carries the foreign-key column.
    const RelationshipEnd& holder() const;
    /// Partner entity seen from `entity` (the other end; the same for a self-relationship).
    const std::string& partner_of(std::string_view entity) const;
    /// How many partners one instance of `entity` may have.
    const Cardinality& fanout_from(std::string_view entity) const;

    bool operator==(const Relationship&) const = default;
};

enum class GeneralizationMode { disjoint, overlap };

struct Subtype {
    std::string name;
    std::optional<Expr> predicate;  // `when (...)`; absent means `from table`
    std::vector<Attribute> attributes;

    bool from_table() const { return !predicate.has_value(); }
    bool operator==(const Subtype&) const = default;
};

struct Generalization {
    std::string name;
    std::string supertype;
    GeneralizationMode mode = GeneralizationMode::disjoint;
    std::vector<Subtype> subtypes;

    const Subtype* find(std::string_view subtype) const;
    bool operator==(const Generalization&) const = default;
};

struct ImputeStrategy {
    enum class Kind { mean_mode, constant, none };
    Kind kind = Kind::mean_mode;
    std::optional<Value> constant;  // set iff kind == constant

    std::string to_string() const;
    static std::optional<ImputeStrategy> parse(std::string_view text);
    bool operator==(const ImputeStrategy&) const = default;
};

/// Unset options fall back to planner defaults, so printing a schema does not
/// invent clauses that were never written.
struct TaskDecl {
    std::string name;
    std::string target_entity;
    std::string target_attribute;
    std::optional<std::string> split_by;
    std::optional<std::vector<AggregateKind>> agg;
    std::optional<int> top_k;
    std::optional<ImputeStrategy> impute;

    bool operator==(const TaskDecl&) const = default;
};

struct EerSchema {
    std::vector<EntityType> entities;
    std::vector<Relationship> relationships;
    std::vector<Generalization> generalizations;
    std::vector<TaskDecl> tasks;

    const EntityType* find_entity(std::string_view name) const;
    const Relationship* find_relationship(std::string_view name) const;
    const Generalization* find_generalization(std::string_view name) const;
    const TaskDecl* find_task(std::string_view name) const;
    std::vector<const Generalization*> generalizations_of(std::string_view supertype) const;

    bool operator==(const EerSchema&) const = default;
};

struct ValidationReport {
    Diagnostics diagnostics;
    bool valid() const { return !has_errors(diagnostics); }
};

ValidationReport validate_schema(const EerSchema& schema);

/// Replaces each N:M relationship R between A and B by an associative entity
/// `A_B` keyed by both foreign-key columns (plus R's attributes) and two 1:N
/// relationships `R_A` and `R_B`. Idempotent. Throws Error on a name collision.
EerSchema rewrite_many_to_many(const EerSchema& schema);

struct TreeEdge {
    std::string parent;
    std::string child;
    std::string relationship;
    bool to_many = false;  // a parent instance may have several child partners
    std::size_t depth = 1; // depth of the child; the root is depth 0

    bool operator==(const TreeEdge&) const = default;
};

struct TargetBinding {
    std::string target_entity;
    std::string target_attribute;
    std::vector<std::string> predictor_entities;  // breadth-first order, root first
    std::vector<TreeEdge> edges;                  // breadth-first order
    std::vector<std::string> skipped_relationships;
    std::vector<std::string> excluded_entities;

    const TreeEdge* edge_to(std::string_view child) const;
    std::size_t depth_of(std::string_view entity) const;
    bool contains(std::string_view entity) const;
    Diagnostics warnings() const;

    bool operator==(const TargetBinding&) const = default;
};

/// Breadth-first spanning tree from the target-bearing entity; relationships
/// are tried in declaration order and the first visit wins. Throws Error when
/// the task's target does not exist.
TargetBinding resolve_target(const EerSchema& schema, const TaskDecl& task);

/// Type scope for expressions owned by `entity`; `extra` adds attributes that
/// are visible in addition to the entity's own (subtype attributes).
class EntityScope : public TypeScope {
public:
    EntityScope(const EerSchema& schema, const EntityType& entity, std::vector<const Attribute*> extra = {});

    std::optional<AttributeKind> attribute_kind(std::string_view name) const override;
    std::optional<std::optional<AttributeKind>> related_attribute_kind(std::string_view relationship,
                                                                       std::string_view attribute) const override;
    bool has_relationship(std::string_view relationship) const override;

private:
    const EerSchema& schema_;
    const EntityType& entity_;
    std::vector<const Attribute*> extra_;
};

}  // namespace cmml
