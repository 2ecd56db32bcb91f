#include "cmml/eer.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <set>

namespace cmml {

// ---------------------------------------------------------------------------
// Lookups

const Attribute* EntityType::find(std::string_view attr) const {
    for (const auto& a : attributes)
        if (a.name == attr) return &a;
    return nullptr;
}

std::vector<const Attribute*> EntityType::key_attributes() const {
    std::vector<const Attribute*> out;
    for (const auto& a : attributes)
        if (a.is_key) out.push_back(&a);
    return out;
}

std::vector<const Attribute*> EntityType::stored_attributes() const {
    std::vector<const Attribute*> out;
    for (const auto& a : attributes)
        if (!a.derived) out.push_back(&a);
    return out;
}

std::string Cardinality::to_string() const {
    return "(" + std::to_string(min) + "," + (max == MaxCard::one ? "1" : "N") + ")";
}

const RelationshipEnd& Relationship::referenced() const {
    if (left.card.max == MaxCard::many && right.card.max == MaxCard::one) return right;
    return left;
}

const RelationshipEnd& Relationship::holder() const { return &referenced() == &left ? right : left; }

const std::string& Relationship::partner_of(std::string_view entity) const {
    return left.entity == entity ? right.entity : left.entity;
}

const Cardinality& Relationship::fanout_from(std::string_view entity) const {
    return left.entity == entity ? right.card : left.card;
}

const Subtype* Generalization::find(std::string_view subtype) const {
    for (const auto& s : subtypes)
        if (s.name == subtype) return &s;
    return nullptr;
}

std::string ImputeStrategy::to_string() const {
    switch (kind) {
        case Kind::mean_mode: return "mean_mode";
        case Kind::none: return "none";
        case Kind::constant: return "constant(" + print_expr(lit(constant.value_or(Value(0.0)))) + ")";
    }
    return "none";
}

std::optional<ImputeStrategy> ImputeStrategy::parse(std::string_view text) {
    if (text == "mean_mode") return ImputeStrategy{Kind::mean_mode, {}};
    if (text == "none") return ImputeStrategy{Kind::none, {}};
    if (text.starts_with("constant(") && text.ends_with(")")) {
        try {
            Expr e = parse_expr(text.substr(9, text.size() - 10));
            if (auto* l = std::get_if<Literal>(&e.node)) return ImputeStrategy{Kind::constant, l->value};
            if (auto* u = std::get_if<Unary>(&e.node); u && u->op == UnaryOp::negate)
                if (auto* l = std::get_if<Literal>(&u->operand->node); l && l->value.is_number())
                    return ImputeStrategy{Kind::constant, Value(-l->value.number())};
        } catch (const SyntaxError&) {
        }
    }
    return std::nullopt;
}

namespace {
template <class T>
const T* find_named(const std::vector<T>& items, std::string_view name) {
    for (const auto& x : items)
        if (x.name == name) return &x;
    return nullptr;
}
}  // namespace

const EntityType* EerSchema::find_entity(std::string_view name) const { return find_named(entities, name); }
const Relationship* EerSchema::find_relationship(std::string_view name) const {
    return find_named(relationships, name);
}
const Generalization* EerSchema::find_generalization(std::string_view name) const {
    return find_named(generalizations, name);
}
const TaskDecl* EerSchema::find_task(std::string_view name) const { return find_named(tasks, name); }

std::vector<const Generalization*> EerSchema::generalizations_of(std::string_view supertype) const {
    std::vector<const Generalization*> out;
    for (const auto& g : generalizations)
        if (g.supertype == supertype) out.push_back(&g);
    return out;
}

// ---------------------------------------------------------------------------
// Type scope

EntityScope::EntityScope(const EerSchema& schema, const EntityType& entity, std::vector<const Attribute*> extra)
    : schema_(schema), entity_(entity), extra_(std::move(extra)) {}

std::optional<AttributeKind> EntityScope::attribute_kind(std::string_view name) const {
    if (auto* a = entity_.find(name)) return a->kind;
    for (auto* a : extra_)
        if (a->name == name) return a->kind;
    return std::nullopt;
}

bool EntityScope::has_relationship(std::string_view relationship) const {
    auto* r = schema_.find_relationship(relationship);
    return r && r->involves(entity_.name) && !r->is_many_to_many();
}

std::optional<std::optional<AttributeKind>> EntityScope::related_attribute_kind(std::string_view relationship,
                                                                                 std::string_view attribute) const {
    if (!has_relationship(relationship)) return std::nullopt;
    auto* r = schema_.find_relationship(relationship);
    auto* partner = schema_.find_entity(r->partner_of(entity_.name));
    if (!partner) return std::optional<AttributeKind>{};
    if (auto* a = partner->find(attribute)) return std::optional<AttributeKind>{a->kind};
    return std::optional<AttributeKind>{};
}

// ---------------------------------------------------------------------------
// Validation

namespace {

class Validator {
public:
    explicit Validator(const EerSchema& s) : s_(s) {}

    ValidationReport run() {
        check_unique_names();
        for (const auto& e : s_.entities) check_entity(e);
        for (const auto& r : s_.relationships) check_relationship(r);
        for (const auto& g : s_.generalizations) check_generalization(g);
        for (const auto& t : s_.tasks) check_task(t);
        return {std::move(diags_)};
    }

private:
    void error(std::string code, std::string msg) {
        diags_.push_back({Severity::error, std::move(code), std::move(msg), {}});
    }
    void warning(std::string code, std::string msg) {
        diags_.push_back({Severity::warning, std::move(code), std::move(msg), {}});
    }

    void check_unique_names() {
        std::set<std::string> types;
        for (const auto& e : s_.entities)
            if (!types.insert(e.name).second) error("duplicate-entity", "entity " + e.name + " declared twice");
        for (const auto& g : s_.generalizations)
            for (const auto& st : g.subtypes)
                if (!types.insert(st.name).second)
                    error("duplicate-subtype", "subtype " + st.name + " clashes with another entity or subtype name");
        auto unique = [&](const auto& items, const char* what) {
            std::set<std::string> seen;
            for (const auto& x : items)
                if (!seen.insert(x.name).second)
                    error(std::string("duplicate-") + what, std::string(what) + " " + x.name + " declared twice");
        };
        unique(s_.relationships, "relationship");
        unique(s_.generalizations, "generalization");
        unique(s_.tasks, "task");
    }

    void check_expr(const Expr& e, const TypeScope& scope, std::optional<AttributeKind> want, const std::string& where) {
        auto t = type_of(e, scope);
        if (!t) {
            error("type-error", where + ": " + t.error);
            return;
        }
        if (!want) return;
        const bool ok = *t.kind == *want || (is_string_kind(*t.kind) && is_string_kind(*want));
        if (!ok)
            error("type-error", where + ": expression has kind " + std::string(kind_name(*t.kind)) + ", expected " +
                                    std::string(kind_name(*want)));
    }

    void check_attribute(const Attribute& a, const TypeScope& scope, const std::string& owner) {
        const std::string where = owner + "." + a.name;
        if (a.is_key && a.derived) error("key-derived", "key attribute " + where + " cannot be derived");
        if (a.is_key && a.optional) error("key-optional", "key attribute " + where + " cannot be optional");
        if (a.derived != a.derivation.has_value())
            error("derivation-mismatch", where + (a.derived ? " is derived but has no expression"
                                                            : " has an expression but is not declared derived"));
        if (a.derivation) check_expr(*a.derivation, scope, a.kind, "derivation of " + where);
        if (a.applicable_when)
            check_expr(*a.applicable_when, scope, AttributeKind::boolean, "applicable_when of " + where);
    }

    void check_derivation_cycles(const EntityType& e) {
        std::map<std::string, int> state;  // 0 unvisited, 1 on stack, 2 done
        std::function<bool(const Attribute&)> visit = [&](const Attribute& a) {
            auto& st = state[a.name];
            if (st == 1) return false;
            if (st == 2) return true;
            st = 1;
            if (a.derivation)
                for (const auto& dep : referenced_attributes(*a.derivation))
                    if (auto* d = e.find(dep); d && d->derived && !visit(*d)) return false;
            st = 2;
            return true;
        };
        for (const auto& a : e.attributes)
            if (a.derived && state[a.name] == 0 && !visit(a))
                error("derivation-cycle", "derived attribute " + e.name + "." + a.name + " depends on itself");
    }

    void check_entity(const EntityType& e) {
        if (e.key_attributes().empty()) error("missing-key", "entity " + e.name + " lacks a key");
        std::set<std::string> names;
        for (const auto& a : e.attributes)
            if (!names.insert(a.name).second)
                error("duplicate-attribute", "attribute " + a.name + " declared twice in entity " + e.name);
        EntityScope scope(s_, e);
        for (const auto& a : e.attributes) check_attribute(a, scope, e.name);
        check_derivation_cycles(e);
    }

    void check_relationship(const Relationship& r) {
        const auto* l = s_.find_entity(r.left.entity);
        const auto* rt = s_.find_entity(r.right.entity);
        if (!l) error("unknown-entity", "relationship " + r.name + " references undeclared entity " + r.left.entity);
        if (!rt && r.right.entity != r.left.entity)
            error("unknown-entity", "relationship " + r.name + " references undeclared entity " + r.right.entity);
        for (const auto* end : {&r.left, &r.right})
            if (end->card.min != 0 && end->card.min != 1)
                error("bad-cardinality", "relationship " + r.name + ": minimum must be 0 or 1");
        if (!r.attributes.empty() && !r.is_many_to_many())
            error("relationship-attributes", "relationship " + r.name + " has attributes but is not many-to-many");
        const std::size_t want_fk = r.is_many_to_many() ? 2 : 1;
        if (r.fk_columns.size() != want_fk) {
            error("fk-arity", "relationship " + r.name + " needs " + std::to_string(want_fk) + " via column(s), has " +
                                  std::to_string(r.fk_columns.size()));
            return;
        }
        if (!l || !rt) return;
        if (r.is_many_to_many()) {
            for (std::size_t i = 0; i < 2; ++i) {
                const auto* ent = i == 0 ? l : rt;
                if (ent->key_attributes().size() != 1)
                    error("composite-fk", "relationship " + r.name + ": entity " + ent->name +
                                              " needs a single-column key to be referenced");
            }
            if (r.fk_columns[0] == r.fk_columns[1])
                error("fk-columns", "relationship " + r.name + " uses the same via column twice");
            return;
        }
        const auto* parent = s_.find_entity(r.referenced().entity);
        const auto* child = s_.find_entity(r.holder().entity);
        if (parent->key_attributes().size() != 1) {
            error("composite-fk", "relationship " + r.name + ": entity " + parent->name +
                                      " needs a single-column key to be referenced");
            return;
        }
        if (auto* col = child->find(r.fk_columns[0])) {
            const auto* pk = parent->key_attributes().front();
            if (col->derived) error("fk-derived", "via column " + child->name + "." + col->name + " is derived");
            else if (!(col->kind == pk->kind || (is_string_kind(col->kind) && is_string_kind(pk->kind))))
                error("fk-kind", "via column " + child->name + "." + col->name + " has kind " +
                                     std::string(kind_name(col->kind)) + " but " + parent->name + " key is " +
                                     std::string(kind_name(pk->kind)));
        }
    }

    void check_generalization(const Generalization& g) {
        const auto* super = s_.find_entity(g.supertype);
        if (!super) {
            error("unknown-entity", "generalization " + g.name + " references undeclared entity " + g.supertype);
            return;
        }
        if (g.subtypes.size() < 2) error("few-subtypes", "generalization " + g.name + " needs at least two subtypes");
        std::set<std::string> attr_names;
        for (const auto& a : super->attributes) attr_names.insert(a.name);
        EntityScope super_scope(s_, *super);
        for (const auto& st : g.subtypes) {
            if (st.predicate)
                check_expr(*st.predicate, super_scope, AttributeKind::boolean, "membership of " + st.name);
            std::vector<const Attribute*> own;
            for (const auto& a : st.attributes) {
                if (!attr_names.insert(a.name).second)
                    error("duplicate-attribute",
                          "subtype attribute " + st.name + "." + a.name + " clashes with another attribute of " + g.supertype);
                if (a.is_key) error("subtype-key", "subtype attribute " + st.name + "." + a.name + " cannot be a key");
                own.push_back(&a);
            }
            EntityScope scope(s_, *super, own);
            for (const auto& a : st.attributes) check_attribute(a, scope, st.name);
        }
    }

    void check_task(const TaskDecl& t) {
        const auto* e = s_.find_entity(t.target_entity);
        if (!e) {
            error("unknown-entity", "task " + t.name + " targets undeclared entity " + t.target_entity);
            return;
        }
        if (!e->find(t.target_attribute))
            error("unknown-attribute",
                  "task " + t.name + " targets missing attribute " + t.target_entity + "." + t.target_attribute);
        if (t.split_by && !s_.find_generalization(*t.split_by))
            error("unknown-generalization", "task " + t.name + " splits by undeclared generalization " + *t.split_by);
        if (t.top_k && *t.top_k <= 0) error("bad-top-k", "task " + t.name + ": top_k must be positive");
    }

    const EerSchema& s_;
    Diagnostics diags_;
};

}  // namespace

ValidationReport validate_schema(const EerSchema& schema) { return Validator(schema).run(); }

// ---------------------------------------------------------------------------
// N:M rewrite

EerSchema rewrite_many_to_many(const EerSchema& schema) {
    EerSchema out = schema;
    out.relationships.clear();
    for (const auto& r : schema.relationships) {
        if (!r.is_many_to_many()) {
            out.relationships.push_back(r);
            continue;
        }
        const std::string assoc_name = r.left.entity + "_" + r.right.entity;
        if (out.find_entity(assoc_name))
            throw Error("cannot rewrite many-to-many relationship " + r.name + ": entity " + assoc_name +
                        " already exists");
        const auto* le = schema.find_entity(r.left.entity);
        const auto* re = schema.find_entity(r.right.entity);
        if (!le || !re || r.fk_columns.size() != 2 || le->key_attributes().size() != 1 ||
            re->key_attributes().size() != 1)
            throw Error("cannot rewrite many-to-many relationship " + r.name + ": schema is not valid");

        EntityType assoc{assoc_name, {}};
        assoc.attributes.push_back({r.fk_columns[0], le->key_attributes().front()->kind, true});
        assoc.attributes.push_back({r.fk_columns[1], re->key_attributes().front()->kind, true});
        for (const auto& a : r.attributes) assoc.attributes.push_back(a);
        out.entities.push_back(std::move(assoc));

        // Each associative row has exactly one partner on each side; each side
        // keeps the participation it had towards the other entity.
        out.relationships.push_back(Relationship{r.name + "_" + r.left.entity,
                                                 {r.left.entity, {1, MaxCard::one}},
                                                 {assoc_name, {r.right.card.min, MaxCard::many}},
                                                 {r.fk_columns[0]},
                                                 {}});
        out.relationships.push_back(Relationship{r.name + "_" + r.right.entity,
                                                 {r.right.entity, {1, MaxCard::one}},
                                                 {assoc_name, {r.left.card.min, MaxCard::many}},
                                                 {r.fk_columns[1]},
                                                 {}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Target resolution

const TreeEdge* TargetBinding::edge_to(std::string_view child) const {
    for (const auto& e : edges)
        if (e.child == child) return &e;
    return nullptr;
}

std::size_t TargetBinding::depth_of(std::string_view entity) const {
    if (entity == target_entity) return 0;
    auto* e = edge_to(entity);
    return e ? e->depth : 0;
}

bool TargetBinding::contains(std::string_view entity) const {
    return std::find(predictor_entities.begin(), predictor_entities.end(), entity) != predictor_entities.end();
}

Diagnostics TargetBinding::warnings() const {
    Diagnostics out;
    for (const auto& e : excluded_entities)
        out.push_back({Severity::warning, "entity-excluded",
                       "entity " + e + " is not reachable from " + target_entity + " and is excluded from the plan", {}});
    for (const auto& r : skipped_relationships)
        out.push_back({Severity::warning, "relationship-skipped",
                       "relationship " + r + " closes a cycle and is not traversed", {}});
    return out;
}

TargetBinding resolve_target(const EerSchema& schema, const TaskDecl& task) {
    const auto* root = schema.find_entity(task.target_entity);
    if (!root) throw Error("task " + task.name + ": unknown target entity " + task.target_entity);
    if (!root->find(task.target_attribute))
        throw Error("task " + task.name + ": entity " + task.target_entity + " has no attribute " +
                    task.target_attribute);

    TargetBinding b;
    b.target_entity = root->name;
    b.target_attribute = task.target_attribute;
    b.predictor_entities.push_back(root->name);

    std::set<std::string> visited{root->name};
    std::set<std::string> used_relationships;
    std::deque<std::pair<std::string, std::size_t>> queue{{root->name, 0}};
    while (!queue.empty()) {
        auto [current, depth] = queue.front();
        queue.pop_front();
        for (const auto& r : schema.relationships) {
            if (!r.involves(current) || used_relationships.count(r.name)) continue;
            const std::string& other = r.partner_of(current);
            used_relationships.insert(r.name);
            if (visited.count(other)) {
                b.skipped_relationships.push_back(r.name);
                continue;
            }
            visited.insert(other);
            b.predictor_entities.push_back(other);
            b.edges.push_back({current, other, r.name, r.fanout_from(current).max == MaxCard::many, depth + 1});
            queue.emplace_back(other, depth + 1);
        }
    }
    for (const auto& e : schema.entities)
        if (!visited.count(e.name)) b.excluded_entities.push_back(e.name);
    return b;
}

}  // namespace cmml
