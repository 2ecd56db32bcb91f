#include "cmml/binder.hpp"

#include <algorithm>
#include <set>

namespace cmml {

namespace {

struct SubtypeRef {
    const Generalization* generalization = nullptr;
    const Subtype* subtype = nullptr;
};

SubtypeRef find_subtype(const EerSchema& s, std::string_view name) {
    for (const auto& g : s.generalizations)
        for (const auto& st : g.subtypes)
            if (st.name == name) return {&g, &st};
    return {};
}

/// Subtype owning `attribute` among generalizations of `entity`.
SubtypeRef subtype_owning(const EerSchema& s, std::string_view entity, std::string_view attribute) {
    for (const auto& g : s.generalizations) {
        if (g.supertype != entity) continue;
        for (const auto& st : g.subtypes)
            for (const auto& a : st.attributes)
                if (a.name == attribute) return {&g, &st};
    }
    return {};
}

const Attribute* find_subtype_attribute(const Subtype& st, std::string_view name) {
    for (const auto& a : st.attributes)
        if (a.name == name) return &a;
    return nullptr;
}

/// Guards against unbounded recursion through cross-entity aggregate derivations.
thread_local int g_eval_depth = 0;
struct DepthGuard {
    DepthGuard() {
        if (++g_eval_depth > 64) {
            g_eval_depth = 0;
            throw Error("derived attributes reference each other through relationships without end");
        }
    }
    ~DepthGuard() { --g_eval_depth; }
};

class BoundRowContext final : public RowContext, public RelatedRowsProvider {
public:
    BoundRowContext(const BoundModel& m, std::string_view entity, std::size_t row, Diagnostics* diags)
        : m_(m), entity_(entity), row_(row), diags_(diags) {}

    Value attribute(std::string_view name) const override { return m_.attribute_value(entity_, row_, name, diags_); }

    std::size_t related_count(std::string_view relationship) const override {
        return m_.partners(relationship, entity_, row_).size();
    }

    std::vector<Value> related_values(std::string_view relationship, std::string_view attribute) const override {
        const auto* r = m_.schema.find_relationship(relationship);
        if (!r) return {};
        const std::string& partner = r->partner_of(entity_);
        std::vector<Value> out;
        for (auto p : m_.partners(relationship, entity_, row_)) out.push_back(m_.attribute_value(partner, p, attribute, diags_));
        return out;
    }

private:
    const BoundModel& m_;
    std::string entity_;
    std::size_t row_;
    Diagnostics* diags_;
};

SourceLocation row_location(const std::string& table, std::size_t row) {
    // header is line 1
    return SourceLocation{table + ".csv", row + 2, 0, 0};
}

std::string key_text(const KeyTuple& k) {
    std::string s;
    for (std::size_t i = 0; i < k.size(); ++i) s += (i ? "," : "") + k[i];
    return s;
}

}  // namespace

std::vector<Column> expected_columns(const EerSchema& schema, std::string_view table) {
    std::vector<Column> cols;
    auto add = [&](const std::string& name, AttributeKind kind) {
        for (const auto& c : cols)
            if (c.name == name) return;
        cols.push_back({name, kind});
    };
    if (const auto* e = schema.find_entity(table)) {
        for (const auto* a : e->stored_attributes()) add(a->name, a->kind);
        for (const auto* g : schema.generalizations_of(e->name))
            for (const auto& st : g->subtypes)
                if (!st.from_table())
                    for (const auto& a : st.attributes)
                        if (!a.derived) add(a.name, a.kind);
        for (const auto& r : schema.relationships) {
            if (r.is_many_to_many() || r.holder().entity != e->name) continue;
            const auto* parent = schema.find_entity(r.referenced().entity);
            if (!parent || parent->key_attributes().empty()) continue;
            add(r.fk_columns.at(0), parent->key_attributes().front()->kind);
        }
        return cols;
    }
    auto ref = find_subtype(schema, table);
    if (ref.subtype && ref.subtype->from_table()) {
        if (const auto* super = schema.find_entity(ref.generalization->supertype))
            for (const auto* k : super->key_attributes()) add(k->name, k->kind);
        for (const auto& a : ref.subtype->attributes)
            if (!a.derived) add(a.name, a.kind);
    }
    return cols;
}

std::vector<std::string> required_tables(const EerSchema& schema) {
    std::vector<std::string> out;
    for (const auto& e : schema.entities) out.push_back(e.name);
    for (const auto& g : schema.generalizations)
        for (const auto& st : g.subtypes)
            if (st.from_table()) out.push_back(st.name);
    return out;
}

BundleLoad load_bundle(const EerSchema& schema, const std::filesystem::path& dir) {
    BundleLoad res;
    for (const auto& name : required_tables(schema)) {
        const auto path = dir / (name + ".csv");
        if (!std::filesystem::is_regular_file(path)) {
            res.diagnostics.push_back({Severity::error, "missing-table", "no data file for " + name, {path.string()}});
            continue;
        }
        auto read = read_csv(path, expected_columns(schema, name));
        read.table.name = name;
        if (const auto* e = schema.find_entity(name)) {
            for (const auto* k : e->key_attributes()) read.table.key_columns.push_back(k->name);
        } else if (auto ref = find_subtype(schema, name); ref.generalization) {
            if (const auto* super = schema.find_entity(ref.generalization->supertype))
                for (const auto* k : super->key_attributes()) read.table.key_columns.push_back(k->name);
        }
        res.diagnostics.insert(res.diagnostics.end(), read.diagnostics.begin(), read.diagnostics.end());
        res.bundle.tables.emplace(name, std::move(read.table));
    }
    return res;
}

// ---------------------------------------------------------------------------
// BoundModel queries

const Table& BoundModel::table(std::string_view name) const {
    if (const auto* t = bundle.find(name)) return *t;
    throw Error("no table " + std::string(name));
}

const EntityType& BoundModel::entity(std::string_view name) const {
    if (const auto* e = schema.find_entity(name)) return *e;
    throw Error("no entity " + std::string(name));
}

std::vector<std::size_t> BoundModel::partners(std::string_view relationship, std::string_view entity,
                                              std::size_t row) const {
    const auto* r = schema.find_relationship(relationship);
    auto it = fk_index.find(std::string(relationship));
    if (!r || it == fk_index.end()) return {};
    const auto& idx = it->second;
    if (r->referenced().entity == entity) return row < idx.holder_rows.size() ? idx.holder_rows[row] : std::vector<std::size_t>{};
    if (row < idx.referenced_row.size() && idx.referenced_row[row]) return {*idx.referenced_row[row]};
    return {};
}

std::vector<std::string> BoundModel::subtypes_of(std::string_view generalization, std::size_t row) const {
    std::vector<std::string> out;
    const auto* g = schema.find_generalization(generalization);
    if (!g) return out;
    for (const auto& st : g->subtypes)
        if (is_member(st.name, row)) out.push_back(st.name);
    return out;
}

bool BoundModel::is_member(std::string_view subtype, std::size_t supertype_row) const {
    auto it = subtype_membership.find(std::string(subtype));
    return it != subtype_membership.end() && supertype_row < it->second.member.size() && it->second.member[supertype_row];
}

std::optional<NullKind> BoundModel::null_class(std::string_view table_name, std::size_t row, std::string_view column) const {
    const Value& v = table(table_name).cell(row, column);
    if (!v.is_null()) return std::nullopt;
    return v.null_kind();
}

Value BoundModel::attribute_value(std::string_view entity_name, std::size_t row, std::string_view attribute,
                                  Diagnostics* diags) const {
    const EntityType& e = entity(entity_name);
    const Table& t = table(entity_name);
    auto evaluate = [&](const Attribute& a) {
        DepthGuard guard;
        BoundRowContext ctx(*this, entity_name, row, diags);
        Value v = eval(*a.derivation, ctx, &ctx, clock, diags);
        if (v.is_null()) v = Value(Null{classify_null(entity_name, row, attribute, diags)});
        return v;
    };
    if (const auto* a = e.find(attribute)) {
        if (a->derived) return evaluate(*a);
        return t.cell(row, attribute);
    }
    if (auto ref = subtype_owning(schema, entity_name, attribute); ref.subtype) {
        if (!is_member(ref.subtype->name, row)) return Value::not_applicable();
        const auto* a = find_subtype_attribute(*ref.subtype, attribute);
        if (a->derived) return evaluate(*a);
        if (!ref.subtype->from_table()) return t.cell(row, attribute);
        const auto& m = subtype_membership.at(ref.subtype->name);
        if (!m.table_row[row]) return Value::not_applicable();
        return table(ref.subtype->name).cell(*m.table_row[row], attribute);
    }
    if (auto i = t.column_index(attribute)) return t.rows.at(row).at(*i);
    return Value::unknown();
}

NullKind BoundModel::classify_null(std::string_view entity_name, std::size_t row, std::string_view attribute,
                                   Diagnostics* diags) const {
    const EntityType& e = entity(entity_name);
    const Attribute* a = e.find(attribute);
    if (!a) {
        auto ref = subtype_owning(schema, entity_name, attribute);
        if (!ref.subtype) return NullKind::unknown;
        if (!is_member(ref.subtype->name, row)) return NullKind::not_applicable;  // rule 1
        a = find_subtype_attribute(*ref.subtype, attribute);
    }
    if (a && a->applicable_when) {
        DepthGuard guard;
        BoundRowContext ctx(*this, entity_name, row, diags);
        const Value applicable = eval(*a->applicable_when, ctx, &ctx, clock, diags);
        if (applicable.is_null()) {  // rule 3
            if (diags)
                diags->push_back({Severity::warning, "applicability-unknown",
                                  "applicable_when of " + std::string(entity_name) + "." + std::string(attribute) +
                                      " evaluated to null; treating the missing value as unknown",
                                  row_location(std::string(entity_name), row)});
            return NullKind::unknown;
        }
        if (!applicable.boolean()) return NullKind::not_applicable;  // rule 2
    }
    return NullKind::unknown;  // rule 4
}

// ---------------------------------------------------------------------------
// bind

namespace {

class Binder {
public:
    Binder(const EerSchema& schema, DataBundle bundle, Clock clock) {
        m_.schema = schema;
        m_.bundle = std::move(bundle);
        m_.clock = clock;
    }

    BindResult run() {
        for (const auto& r : m_.schema.relationships)
            if (r.is_many_to_many())
                error("unrewritten-many-to-many", "relationship " + r.name + " must be rewritten before binding", {});
        if (!check_tables()) return {std::nullopt, std::move(diags_)};
        for (const auto& g : m_.schema.generalizations)
            for (const auto& st : g.subtypes) {
                if (!st.from_table()) continue;
                Table& mt = m_.bundle.tables.at(st.name);
                if (mt.key_columns.empty())
                    for (const auto* k : m_.entity(g.supertype).key_attributes()) mt.key_columns.push_back(k->name);
            }
        for (const auto& e : m_.schema.entities) index_keys(e);
        for (const auto& r : m_.schema.relationships)
            if (!r.is_many_to_many()) index_relationship(r);
        for (const auto& g : m_.schema.generalizations) resolve_membership(g);
        classify_nulls();
        return {std::move(m_), std::move(diags_)};
    }

private:
    void error(std::string code, std::string msg, SourceLocation loc) {
        diags_.push_back({Severity::error, std::move(code), std::move(msg), std::move(loc)});
    }
    void warning(std::string code, std::string msg, SourceLocation loc) {
        diags_.push_back({Severity::warning, std::move(code), std::move(msg), std::move(loc)});
    }

    bool check_tables() {
        bool ok = true;
        for (const auto& name : required_tables(m_.schema)) {
            auto it = m_.bundle.tables.find(name);
            if (it == m_.bundle.tables.end()) {
                error("missing-table", "no table for " + name, {name + ".csv"});
                ok = false;
                continue;
            }
            for (const auto& col : expected_columns(m_.schema, name))
                if (!it->second.column_index(col.name)) {
                    error("missing-column", "table " + name + " lacks column " + col.name, {name + ".csv"});
                    ok = false;
                }
        }
        return ok;
    }

    void index_keys(const EntityType& e) {
        Table& t = m_.bundle.tables.at(e.name);
        if (t.key_columns.empty())
            for (const auto* k : e.key_attributes()) t.key_columns.push_back(k->name);
        auto& idx = m_.key_index[e.name];
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            bool null_key = false;
            for (const auto& k : t.key_columns)
                if (t.cell(i, k).is_null()) null_key = true;
            if (null_key) {
                error("null-key", "row of " + e.name + " has a null key", row_location(e.name, i));
                continue;
            }
            auto key = t.key_of(i);
            if (!idx.emplace(key, i).second)
                error("duplicate-key", "duplicate key (" + key_text(key) + ") in " + e.name, row_location(e.name, i));
        }
    }

    void index_relationship(const Relationship& r) {
        const std::string& holder = r.holder().entity;
        const std::string& referenced = r.referenced().entity;
        const Table& ht = m_.bundle.tables.at(holder);
        const Table& rt = m_.bundle.tables.at(referenced);
        const auto& rkeys = m_.key_index[referenced];
        RelationshipIndex idx;
        idx.referenced_row.resize(ht.rows.size());
        idx.holder_rows.resize(rt.rows.size());
        const std::string& fk = r.fk_columns.at(0);
        const bool holder_needs_partner = r.fanout_from(holder).min == 1;
        for (std::size_t i = 0; i < ht.rows.size(); ++i) {
            const Value& v = ht.cell(i, fk);
            if (v.is_null()) {
                if (holder_needs_partner)
                    error("mandatory-participation",
                          holder + " (" + key_text(ht.key_of(i)) + ") has no " + referenced + " through " + r.name,
                          row_location(holder, i));
                continue;
            }
            auto it = rkeys.find(KeyTuple{v.to_text()});
            if (it == rkeys.end()) {
                error("dangling-foreign-key",
                      holder + "." + fk + " = " + v.to_text() + " matches no " + referenced + " key (" + r.name + ")",
                      row_location(holder, i));
                continue;
            }
            idx.referenced_row[i] = it->second;
            idx.holder_rows[it->second].push_back(i);
        }
        const Cardinality& per_parent = r.fanout_from(referenced);
        for (std::size_t p = 0; p < rt.rows.size(); ++p) {
            const std::size_t n = idx.holder_rows[p].size();
            if (per_parent.min == 1 && n == 0)
                error("mandatory-participation",
                      referenced + " (" + key_text(rt.key_of(p)) + ") has no " + holder + " through " + r.name,
                      row_location(referenced, p));
            if (per_parent.max == MaxCard::one && n > 1)
                error("cardinality-violation",
                      referenced + " (" + key_text(rt.key_of(p)) + ") has " + std::to_string(n) + " " + holder +
                          " partners through one-to-one " + r.name,
                      row_location(referenced, p));
        }
        m_.fk_index.emplace(r.name, std::move(idx));
    }

    void resolve_membership(const Generalization& g) {
        const Table& super = m_.bundle.tables.at(g.supertype);
        const auto& keys = m_.key_index[g.supertype];
        for (const auto& st : g.subtypes) {
            SubtypeMembership mem{g.name, st.name, std::vector<bool>(super.rows.size(), false),
                                  std::vector<std::optional<std::size_t>>(super.rows.size())};
            if (st.from_table()) {
                const Table& mt = m_.bundle.tables.at(st.name);
                std::set<KeyTuple> seen;
                for (std::size_t i = 0; i < mt.rows.size(); ++i) {
                    auto key = mt.key_of(i);
                    if (!seen.insert(key).second) {
                        error("duplicate-key", "duplicate key (" + key_text(key) + ") in membership table " + st.name,
                              row_location(st.name, i));
                        continue;
                    }
                    auto it = keys.find(key);
                    if (it == keys.end()) {
                        error("dangling-foreign-key",
                              "membership row (" + key_text(key) + ") of " + st.name + " matches no " + g.supertype,
                              row_location(st.name, i));
                        continue;
                    }
                    mem.member[it->second] = true;
                    mem.table_row[it->second] = i;
                }
            } else {
                std::size_t null_count = 0;
                for (std::size_t i = 0; i < super.rows.size(); ++i) {
                    BoundRowContext ctx(m_, g.supertype, i, &diags_);
                    const Value v = eval(*st.predicate, ctx, &ctx, m_.clock, &diags_);
                    if (v.is_null()) ++null_count;
                    else mem.member[i] = v.boolean();
                }
                if (null_count)
                    warning("membership-unknown",
                            std::to_string(null_count) + " " + g.supertype + " rows have a null membership predicate for " +
                                st.name + " and are treated as non-members",
                            {g.supertype + ".csv"});
            }
            m_.subtype_membership.emplace(st.name, std::move(mem));
        }
        std::size_t unassigned = 0;
        for (std::size_t i = 0; i < super.rows.size(); ++i) {
            const auto subs = m_.subtypes_of(g.name, i);
            if (subs.empty()) ++unassigned;
            if (g.mode == GeneralizationMode::disjoint && subs.size() > 1) {
                std::string list;
                for (const auto& s : subs) list += (list.empty() ? "" : ", ") + s;
                error("disjointness-violation",
                      g.supertype + " (" + key_text(super.key_of(i)) + ") belongs to several disjoint subtypes of " +
                          g.name + ": " + list,
                      row_location(g.supertype, i));
            }
        }
        if (unassigned)
            warning("generalization-partial",
                    std::to_string(unassigned) + " " + g.supertype + " instances belong to no subtype of " + g.name,
                    {g.supertype + ".csv"});
    }

    void classify_nulls() {
        // Evaluate against a snapshot so classification order cannot matter.
        std::vector<std::tuple<std::string, std::size_t, std::size_t, NullKind>> updates;
        for (const auto& e : m_.schema.entities) {
            const Table& t = m_.bundle.tables.at(e.name);
            for (std::size_t c = 0; c < t.columns.size(); ++c)
                for (std::size_t r = 0; r < t.rows.size(); ++r)
                    if (t.rows[r][c].is_null())
                        updates.emplace_back(e.name, r, c, m_.classify_null(e.name, r, t.columns[c].name, &diags_));
        }
        for (const auto& g : m_.schema.generalizations)
            for (const auto& st : g.subtypes) {
                if (!st.from_table()) continue;
                const Table& mt = m_.bundle.tables.at(st.name);
                const auto& keys = m_.key_index[g.supertype];
                for (std::size_t r = 0; r < mt.rows.size(); ++r) {
                    auto it = keys.find(mt.key_of(r));
                    for (std::size_t c = 0; c < mt.columns.size(); ++c) {
                        if (!mt.rows[r][c].is_null()) continue;
                        const NullKind k = it == keys.end()
                                               ? NullKind::unknown
                                               : m_.classify_null(g.supertype, it->second, mt.columns[c].name, &diags_);
                        updates.emplace_back(st.name, r, c, k);
                    }
                }
            }
        for (const auto& [table, r, c, kind] : updates) m_.bundle.tables.at(table).rows[r][c] = Value(Null{kind});
        warn_required_nulls();
    }

    void warn_required_nulls() {
        for (const auto& e : m_.schema.entities) {
            const Table& t = m_.bundle.tables.at(e.name);
            for (const auto* a : e.stored_attributes()) {
                if (a->optional || a->is_key) continue;
                const auto c = t.column_index(a->name);
                if (!c) continue;
                std::size_t n = 0;
                for (const auto& row : t.rows)
                    if (row[*c].is_null() && row[*c].null_kind() == NullKind::unknown) ++n;
                if (n)
                    warning("missing-values",
                            std::to_string(n) + " unknown value(s) in non-optional attribute " + e.name + "." + a->name,
                            {e.name + ".csv"});
            }
        }
    }

    BoundModel m_;
    Diagnostics diags_;
};

}  // namespace

BindResult bind(const EerSchema& schema, DataBundle bundle, Clock clock) {
    return Binder(schema, std::move(bundle), clock).run();
}

// ---------------------------------------------------------------------------
// Cardinality report

std::vector<RelationshipReport> cardinality_report(const BoundModel& bound) {
    std::vector<RelationshipReport> out;
    for (const auto& r : bound.schema.relationships) {
        auto it = bound.fk_index.find(r.name);
        if (it == bound.fk_index.end()) continue;
        const auto& idx = it->second;
        auto measure = [&](const std::string& entity, const std::string& partner, bool parents_side) {
            ParticipationReport p;
            p.entity = entity;
            p.partner = partner;
            p.declared = r.fanout_from(entity);
            const Table& t = bound.table(entity);
            p.instances = t.rows.size();
            bool first = true;
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
                const std::size_t n = parents_side ? idx.holder_rows[i].size() : (idx.referenced_row[i] ? 1u : 0u);
                p.observed_min = first ? n : std::min(p.observed_min, n);
                p.observed_max = first ? n : std::max(p.observed_max, n);
                first = false;
                const bool too_few = p.declared.min == 1 && n == 0;
                const bool too_many = p.declared.max == MaxCard::one && n > 1;
                if (too_few || too_many) p.violations.push_back(t.key_of(i));
            }
            return p;
        };
        out.push_back({r.name, measure(r.referenced().entity, r.holder().entity, true),
                       measure(r.holder().entity, r.referenced().entity, false)});
    }
    return out;
}

nlohmann::json cardinality_report_to_json(const std::vector<RelationshipReport>& report) {
    auto out = nlohmann::json::array();
    auto side = [](const ParticipationReport& p) {
        nlohmann::json v = nlohmann::json::array();
        for (const auto& k : p.violations) v.push_back(k);
        return nlohmann::json{{"entity", p.entity},
                              {"partner", p.partner},
                              {"declared", p.declared.to_string()},
                              {"instances", p.instances},
                              {"observed_min", p.observed_min},
                              {"observed_max", p.observed_max},
                              {"conformant", p.conformant()},
                              {"violations", v}};
    };
    for (const auto& r : report)
        out.push_back({{"relationship", r.relationship},
                       {"conformant", r.conformant()},
                       {"fanout", side(r.fanout)},
                       {"fanin", side(r.fanin)}});
    return out;
}

}  // namespace cmml
