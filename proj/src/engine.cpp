#include "cmml/engine.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include <unistd.h>

namespace cmml {

using nlohmann::json;

namespace {

constexpr std::pair<TransformKind, std::string_view> kTransformNames[] = {
    {TransformKind::raw, "raw"},
    {TransformKind::derived, "derived"},
    {TransformKind::count, "count"},
    {TransformKind::sum, "sum"},
    {TransformKind::mean, "mean"},
    {TransformKind::min, "min"},
    {TransformKind::max, "max"},
    {TransformKind::category_count, "category_count"},
    {TransformKind::true_count, "true_count"},
    {TransformKind::concat, "concat"},
    {TransformKind::imputed_mean, "imputed_mean"},
    {TransformKind::imputed_mode, "imputed_mode"},
    {TransformKind::imputed_const, "imputed_const"},
};

TransformKind transform_of(AggregateKind k) {
    switch (k) {
        case AggregateKind::count: return TransformKind::count;
        case AggregateKind::sum: return TransformKind::sum;
        case AggregateKind::mean: return TransformKind::mean;
        case AggregateKind::min: return TransformKind::min;
        case AggregateKind::max: return TransformKind::max;
    }
    return TransformKind::raw;
}

std::vector<std::string> merge_origins(const std::string& first, const std::vector<std::string>& rest) {
    std::vector<std::string> out{first};
    for (const auto& r : rest)
        if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
    return out;
}

void add_guideline(std::vector<std::string>& tags, const std::string& g) {
    if (std::find(tags.begin(), tags.end(), g) == tags.end()) tags.push_back(g);
    std::sort(tags.begin(), tags.end());
}

/// A column under construction, row-aligned with its entity's table.
struct Feature {
    Column column;
    std::string base;  // what a parent summarizing this column builds its name from
    std::vector<Value> values;
    FeatureRecord record;
};

struct Frame {
    std::string entity;
    std::vector<Feature> features;
    std::set<std::string> names;
};

}  // namespace

std::string_view transform_name(TransformKind k) {
    for (const auto& [kind, name] : kTransformNames)
        if (kind == k) return name;
    return "raw";
}

std::optional<TransformKind> parse_transform(std::string_view s) {
    for (const auto& [kind, name] : kTransformNames)
        if (name == s) return kind;
    return std::nullopt;
}

std::string_view role_name(FeatureRole r) {
    switch (r) {
        case FeatureRole::key: return "key";
        case FeatureRole::target: return "target";
        case FeatureRole::predictor: return "predictor";
    }
    return "predictor";
}

std::string sanitize_category(std::string_view text) {
    if (text.empty()) return "EMPTY";
    std::string out(text);
    for (auto& c : out) {
        const auto u = static_cast<unsigned char>(c);
        if (!(std::isalnum(u) && u < 128) && c != '_') c = '_';
    }
    return out;
}

std::string feature_name(std::string_view base, const std::vector<std::string>& origins, TransformKind kind,
                         std::string_view category) {
    if (origins.empty()) throw Error("a feature needs at least one origin entity");
    const std::string b(base);
    const std::string& first = origins.front();
    switch (kind) {
        case TransformKind::raw:
        case TransformKind::derived:
        case TransformKind::imputed_mean:
        case TransformKind::imputed_mode:
        case TransformKind::imputed_const: {
            if (origins.size() == 1) return first + "_" + b;
            std::string name = b;
            for (const auto& o : origins) name += "_" + o;
            return name;
        }
        case TransformKind::count: return first + "_count";
        case TransformKind::category_count: return first + "_" + b + "_" + sanitize_category(category) + "_count";
        case TransformKind::true_count: return first + "_" + b + "_true_count";
        case TransformKind::concat: return first + "_" + b + "_concat";
        case TransformKind::sum:
        case TransformKind::mean:
        case TransformKind::min:
        case TransformKind::max: return first + "_" + b + "_" + std::string(transform_name(kind));
    }
    return first + "_" + b;
}

json FeatureRecord::to_json() const {
    return json{{"name", name},
                {"role", role_name(role)},
                {"origin_entities", origin_entities},
                {"source_attributes", source_attributes},
                {"transform", {{"kind", transform_name(transform)}, {"params", params}}},
                {"guidelines", guidelines},
                {"imputed_cells", imputed_cells}};
}

bool in_holdout(const KeyTuple& key, double fraction) {
    if (fraction <= 0) return false;
    std::string text;
    for (const auto& k : key) text += k + '\x1f';
    const std::uint64_t h = std::stoull(sha256_hex(text).substr(0, 16), nullptr, 16);
    return static_cast<double>(h) / 18446744073709551616.0 < fraction;
}

void write_files_atomically(const std::filesystem::path& dir,
                            const std::vector<std::pair<std::string, std::string>>& files) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path scratch = dir / (".cmml-partial-" + std::to_string(::getpid()));
    fs::remove_all(scratch);
    fs::create_directory(scratch);
    try {
        for (const auto& [name, bytes] : files) {
            std::ofstream out(scratch / name, std::ios::binary | std::ios::trunc);
            out << bytes;
            out.close();
            if (!out) throw Error("failed writing " + (dir / name).string());
        }
        for (const auto& [name, bytes] : files) fs::rename(scratch / name, dir / name);
        fs::remove_all(scratch);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(scratch, ec);
        throw;
    }
}

// ---------------------------------------------------------------------------
// Imputation

void impute(Table& table, std::vector<FeatureRecord>& features, const ImputeStrategy& strategy, Diagnostics& diags) {
    if (strategy.kind == ImputeStrategy::Kind::none) return;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        FeatureRecord& rec = features.at(c);
        const AttributeKind kind = table.columns[c].kind;
        if (rec.role != FeatureRole::predictor) continue;
        if (kind == AttributeKind::identifier || kind == AttributeKind::text) continue;

        std::vector<std::size_t> unknown;
        std::vector<const Value*> present;
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const Value& v = table.rows[r][c];
            if (!v.is_null()) present.push_back(&v);
            else if (v.null_kind() == NullKind::unknown) unknown.push_back(r);
        }
        if (unknown.empty()) continue;

        std::optional<Value> fill;
        TransformKind how = TransformKind::imputed_const;
        if (strategy.kind == ImputeStrategy::Kind::constant) {
            const Value& k = *strategy.constant;
            const bool fits = (kind == AttributeKind::numeric && k.is_number()) ||
                              (kind == AttributeKind::nominal && k.is_string()) ||
                              (kind == AttributeKind::boolean && k.is_bool()) ||
                              (kind == AttributeKind::date && k.is_date());
            if (!fits) {
                diags.push_back({Severity::warning, "impute-constant-kind",
                                 "constant " + k.to_text() + " does not fit " + std::string(kind_name(kind)) +
                                     " column " + rec.name + "; left unimputed",
                                 {table.name}});
                continue;
            }
            fill = k;
            rec.params["statistic"] = "constant";
        } else if (present.empty()) {
            diags.push_back({Severity::warning, "impute-all-null",
                             "column " + rec.name + " of " + table.name + " has no values to impute from", {table.name}});
            continue;
        } else if (kind == AttributeKind::numeric) {
            double sum = 0;
            for (auto* v : present) sum += v->number();
            fill = Value(sum / static_cast<double>(present.size()));
            how = TransformKind::imputed_mean;
            rec.params["statistic"] = "mean";
        } else if (kind == AttributeKind::date) {
            std::vector<Date> dates;
            for (auto* v : present) dates.push_back(v->date());
            std::sort(dates.begin(), dates.end());
            fill = Value(dates[(dates.size() - 1) / 2]);
            how = TransformKind::imputed_mean;
            rec.params["statistic"] = "median";
        } else {
            std::map<std::string, std::size_t> freq;
            for (auto* v : present) ++freq[v->to_text()];
            auto best = freq.begin();
            for (auto it = freq.begin(); it != freq.end(); ++it)
                if (it->second > best->second) best = it;
            fill = *parse_value(best->first, kind);
            how = TransformKind::imputed_mode;
            rec.params["statistic"] = "mode";
        }
        for (auto r : unknown) table.rows[r][c] = *fill;
        rec.params["base_kind"] = std::string(transform_name(rec.transform));
        rec.params["fill"] = fill->to_text();
        rec.transform = how;
        rec.imputed_cells += unknown.size();
        add_guideline(rec.guidelines, "G3");
    }
}

// ---------------------------------------------------------------------------
// Flatten

namespace {

std::vector<std::size_t> sorted_rows(const Table& t, std::vector<std::size_t> rows) {
    std::map<std::size_t, KeyTuple> keys;
    for (auto r : rows) keys.emplace(r, t.key_of(r));
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return key_less(keys[a], keys[b]); });
    return rows;
}

}  // namespace

Table flatten_naive(const BoundModel& bound, const TargetBinding& binding) {
    struct EntityColumns {
        std::vector<std::vector<Value>> values;  // per column, per row
    };
    Table flat;
    flat.name = "ds0";
    std::vector<EntityColumns> per_entity;
    std::vector<std::size_t> first_column;
    for (const auto& name : binding.predictor_entities) {
        const EntityType& e = bound.entity(name);
        const Table& t = bound.table(name);
        std::vector<std::pair<std::string, AttributeKind>> attrs;
        for (const auto& a : e.attributes) attrs.emplace_back(a.name, a.kind);
        for (const auto* g : bound.schema.generalizations_of(name))
            for (const auto& st : g->subtypes)
                for (const auto& a : st.attributes) attrs.emplace_back(a.name, a.kind);
        first_column.push_back(flat.columns.size());
        EntityColumns ec;
        for (const auto& [attr, kind] : attrs) {
            flat.columns.push_back({feature_name(attr, {name}, TransformKind::raw), kind});
            std::vector<Value> vals;
            vals.reserve(t.rows.size());
            for (std::size_t r = 0; r < t.rows.size(); ++r) vals.push_back(bound.attribute_value(name, r, attr));
            ec.values.push_back(std::move(vals));
        }
        per_entity.push_back(std::move(ec));
    }
    const EntityType& root = bound.entity(binding.target_entity);
    for (const auto* k : root.key_attributes())
        flat.key_columns.push_back(feature_name(k->name, {root.name}, TransformKind::raw));

    const auto& entities = binding.predictor_entities;
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < entities.size(); ++i) position[entities[i]] = i;

    std::vector<std::optional<std::size_t>> assigned(entities.size());
    auto emit = [&] {
        Row row;
        row.reserve(flat.columns.size());
        for (std::size_t i = 0; i < entities.size(); ++i)
            for (const auto& col : per_entity[i].values)
                row.push_back(assigned[i] ? col[*assigned[i]] : Value::not_applicable());
        flat.rows.push_back(std::move(row));
    };
    std::function<void(std::size_t)> expand = [&](std::size_t i) {
        if (i == entities.size()) {
            emit();
            return;
        }
        const TreeEdge* edge = binding.edge_to(entities[i]);
        const auto parent_row = assigned[position.at(edge->parent)];
        if (!parent_row) {
            assigned[i] = std::nullopt;
            expand(i + 1);
            return;
        }
        auto partners = sorted_rows(bound.table(entities[i]), bound.partners(edge->relationship, edge->parent, *parent_row));
        if (partners.empty()) {
            assigned[i] = std::nullopt;
            expand(i + 1);
            return;
        }
        for (auto p : partners) {
            assigned[i] = p;
            expand(i + 1);
        }
    };
    const Table& root_table = bound.table(root.name);
    std::vector<std::size_t> roots(root_table.rows.size());
    std::iota(roots.begin(), roots.end(), 0);
    for (auto r : sorted_rows(root_table, roots)) {
        assigned[0] = r;
        expand(1);
    }
    return flat;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

class Executor {
public:
    Executor(const TransformationPlan& plan, const BoundModel& bound, const ExecuteOptions& options)
        : plan_(plan), bound_(bound), schema_(bound.schema), options_(options), root_(plan.binding.target_entity) {}

    ExecuteResult run() {
        check_plan();
        for (const auto& step : plan_.steps) {
            std::visit([&](const auto& s) { apply(s); }, step.op);
        }
        warn_leakage();
        ExecuteResult res;
        res.manifest = manifest();
        res.diagnostics = unique_diagnostics();
        res.datasets = std::move(emitted_);
        if (options_.out_dir) write_outputs(res);
        return res;
    }

private:
    void check_plan() {
        if (!schema_.find_entity(root_))
            throw Error("plan targets entity " + root_ + ", which the bound schema lacks");
        for (const auto& e : plan_.binding.predictor_entities)
            if (!schema_.find_entity(e)) throw Error("plan uses entity " + e + ", which the bound schema lacks");
        for (const auto& e : plan_.binding.edges)
            if (!schema_.find_relationship(e.relationship))
                throw Error("plan uses relationship " + e.relationship + ", which the bound schema lacks");
    }

    void warn(std::string code, std::string msg, std::string origin = {}) {
        diags_.push_back({Severity::warning, std::move(code), std::move(msg), {std::move(origin)}});
    }

    Diagnostics unique_diagnostics() const {
        Diagnostics out;
        std::set<std::string> seen;
        for (const auto& src : {&options_.upstream, &diags_})
            for (const auto& d : *src)
                if (seen.insert(d.to_string()).second) out.push_back(d);
        return out;
    }

    // -- values --------------------------------------------------------------

    const std::vector<Value>& attribute_values(const std::string& entity, const std::string& attribute) {
        auto key = std::make_pair(entity, attribute);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const std::size_t n = bound_.table(entity).rows.size();
        std::vector<Value> vals;
        vals.reserve(n);
        for (std::size_t r = 0; r < n; ++r) vals.push_back(bound_.attribute_value(entity, r, attribute, &diags_));
        return cache_.emplace(key, std::move(vals)).first->second;
    }

    std::string unique_name(Frame& f, std::string name) {
        if (f.names.insert(name).second) return name;
        for (int i = 2;; ++i) {
            std::string candidate = name + "_" + std::to_string(i);
            if (f.names.insert(candidate).second) {
                warn("feature-name-collision", "feature " + name + " already exists; renamed to " + candidate);
                return candidate;
            }
        }
    }

    void add(Frame& f, Feature feature) {
        feature.column.name = unique_name(f, feature.column.name);
        feature.record.name = feature.column.name;
        f.features.push_back(std::move(feature));
    }

    Feature own_feature(const std::string& entity, const Attribute& a, FeatureRole role,
                        std::optional<std::string> subtype = {}) {
        Feature f;
        const TransformKind kind = a.derived ? TransformKind::derived : TransformKind::raw;
        f.column = {feature_name(a.name, {entity}, kind), a.kind};
        f.base = a.name;
        f.values = attribute_values(entity, a.name);
        f.record.role = role;
        f.record.origin_entities = {entity};
        f.record.source_attributes = {entity + "." + a.name};
        f.record.transform = kind;
        f.record.guidelines = a.derived ? std::vector<std::string>{"G1", "G2"} : std::vector<std::string>{"G1"};
        if (a.derived) {
            f.record.params["expression"] = print_expr(*a.derivation);
            for (const auto& r : referenced_attributes(*a.derivation))
                f.record.source_attributes.push_back(entity + "." + r);
            for (const auto& [rel, attr] : referenced_aggregates(*a.derivation)) {
                if (const auto* rr = schema_.find_relationship(rel))
                    f.record.source_attributes.push_back(rr->partner_of(entity) + "." + attr.value_or("*"));
            }
        }
        if (subtype) {
            f.record.params["subtype"] = *subtype;
            add_guideline(f.record.guidelines, "G5");
        }
        return f;
    }

    Frame& frame(const std::string& entity) {
        auto it = frames_.find(entity);
        if (it != frames_.end()) return it->second;
        Frame f;
        f.entity = entity;
        const EntityType& e = bound_.entity(entity);
        const bool is_root = entity == root_;
        const auto superseded = superseded_attributes(e);
        auto is_superseded = [&](const std::string& n) {
            return std::find(superseded.begin(), superseded.end(), n) != superseded.end();
        };
        for (const auto& a : e.attributes) {
            if (is_superseded(a.name)) continue;
            if (is_root) {
                if (a.name == plan_.binding.target_attribute) continue;
                if (a.derived && contains_aggregate(*a.derivation)) continue;  // added by its own step
            } else if (a.is_key || a.kind == AttributeKind::identifier) {
                continue;
            }
            add(f, own_feature(entity, a, a.is_key ? FeatureRole::key : FeatureRole::predictor));
        }
        return frames_.emplace(entity, std::move(f)).first->second;
    }

    // -- steps ---------------------------------------------------------------

    void apply(const DeriveAttr& d) {
        attribute_values(d.entity, d.attribute);
        if (d.entity != root_ || !d.aggregate || d.subtype || d.attribute == plan_.binding.target_attribute) return;
        Frame& f = frame(root_);
        const Attribute* a = bound_.entity(root_).find(d.attribute);
        if (!a) throw Error("plan derives unknown attribute " + d.entity + "." + d.attribute);
        add(f, own_feature(root_, *a, FeatureRole::predictor));
    }

    std::vector<std::vector<std::size_t>> groups(const SummarizeChild& s) {
        const Table& parent = bound_.table(s.parent);
        const Table& child = bound_.table(s.child);
        std::vector<KeyTuple> keys(child.rows.size());
        for (std::size_t i = 0; i < child.rows.size(); ++i) keys[i] = child.key_of(i);
        std::vector<std::vector<std::size_t>> out(parent.rows.size());
        for (std::size_t p = 0; p < parent.rows.size(); ++p) {
            out[p] = bound_.partners(s.relationship, s.parent, p);
            std::stable_sort(out[p].begin(), out[p].end(),
                             [&](std::size_t a, std::size_t b) { return key_less(keys[a], keys[b]); });
        }
        return out;
    }

    Feature summary(const SummarizeChild& s, const Feature& src, TransformKind kind, AttributeKind column_kind,
                    std::string_view category = {}) {
        Feature f;
        f.record.origin_entities = merge_origins(s.child, src.record.origin_entities);
        f.column = {feature_name(src.base, f.record.origin_entities, kind, category), column_kind};
        f.base = f.column.name;
        f.record.source_attributes = src.record.source_attributes;
        f.record.transform = kind;
        f.record.params = {{"relationship", s.relationship}, {"child_feature", src.record.name}};
        f.record.guidelines = src.record.guidelines;
        add_guideline(f.record.guidelines, "G1");
        add_guideline(f.record.guidelines, "G4");
        return f;
    }

    void apply(const SummarizeChild& s) {
        Frame& child = frame(s.child);
        Frame& parent = frame(s.parent);
        const auto grp = groups(s);
        const std::size_t n = grp.size();

        Feature count;
        count.record.origin_entities = {s.child};
        count.column = {feature_name("count", {s.child}, TransformKind::count), AttributeKind::numeric};
        count.base = count.column.name;
        count.record.transform = TransformKind::count;
        count.record.params = {{"relationship", s.relationship}};
        count.record.guidelines = {"G1", "G4"};
        for (const auto& g : grp) count.values.emplace_back(static_cast<double>(g.size()));
        add(parent, std::move(count));

        for (const Feature& src : child.features) {
            auto gather = [&](std::size_t p) {
                std::vector<Value> vals;
                vals.reserve(grp[p].size());
                for (auto c : grp[p]) vals.push_back(src.values[c]);
                return vals;
            };
            switch (src.column.kind) {
                case AttributeKind::numeric:
                    for (auto k : s.agg) {
                        if (k == AggregateKind::count) continue;
                        Feature f = summary(s, src, transform_of(k), AttributeKind::numeric);
                        for (std::size_t p = 0; p < n; ++p) f.values.push_back(aggregate_values(k, gather(p)));
                        add(parent, std::move(f));
                    }
                    break;
                case AttributeKind::date:
                    for (auto k : {AggregateKind::min, AggregateKind::max}) {
                        Feature f = summary(s, src, transform_of(k), AttributeKind::date);
                        for (std::size_t p = 0; p < n; ++p) f.values.push_back(aggregate_values(k, gather(p)));
                        add(parent, std::move(f));
                    }
                    break;
                case AttributeKind::boolean: {
                    Feature f = summary(s, src, TransformKind::true_count, AttributeKind::numeric);
                    for (std::size_t p = 0; p < n; ++p) {
                        double t = 0;
                        for (const auto& v : gather(p))
                            if (v.is_bool() && v.boolean()) ++t;
                        f.values.emplace_back(t);
                    }
                    add(parent, std::move(f));
                    break;
                }
                case AttributeKind::text: {
                    Feature f = summary(s, src, TransformKind::concat, AttributeKind::text);
                    for (std::size_t p = 0; p < n; ++p) {
                        std::string joined;
                        bool any = false;
                        for (const auto& v : gather(p)) {
                            if (v.is_null()) continue;
                            if (any) joined += '\n';
                            joined += v.to_text();
                            any = true;
                        }
                        f.values.push_back(any ? Value(joined) : Value::unknown());
                    }
                    add(parent, std::move(f));
                    break;
                }
                case AttributeKind::nominal: summarize_nominal(s, src, grp, parent); break;
                case AttributeKind::identifier: break;
            }
        }
    }

    void summarize_nominal(const SummarizeChild& s, const Feature& src, const std::vector<std::vector<std::size_t>>& grp,
                           Frame& parent) {
        std::map<std::string, std::size_t> freq;
        for (const auto& v : src.values)
            if (!v.is_null()) ++freq[v.to_text()];
        std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        const std::size_t k = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(s.top_k));
        std::vector<std::string> kept;
        for (std::size_t i = 0; i < k; ++i) kept.push_back(ranked[i].first);
        std::sort(kept.begin(), kept.end());
        const bool other = ranked.size() > k;

        for (const auto& cat : kept) {
            Feature f = summary(s, src, TransformKind::category_count, AttributeKind::numeric, cat);
            f.record.params["category"] = cat;
            for (const auto& g : grp) {
                double c = 0;
                for (auto row : g)
                    if (!src.values[row].is_null() && src.values[row].to_text() == cat) ++c;
                f.values.emplace_back(c);
            }
            add(parent, std::move(f));
        }
        if (!other) return;
        Feature f = summary(s, src, TransformKind::category_count, AttributeKind::numeric, "OTHER");
        f.record.params["category"] = nullptr;
        f.record.params["pooled_categories"] = ranked.size() - k;
        const std::set<std::string> kept_set(kept.begin(), kept.end());
        for (const auto& g : grp) {
            double c = 0;
            for (auto row : g)
                if (!src.values[row].is_null() && !kept_set.count(src.values[row].to_text())) ++c;
            f.values.emplace_back(c);
        }
        add(parent, std::move(f));
    }

    void apply(const JoinOneToOne& j) {
        Frame& right = frame(j.right);
        Frame& left = frame(j.left);
        const std::size_t n = bound_.table(j.left).rows.size();
        std::vector<std::optional<std::size_t>> partner(n);
        for (std::size_t r = 0; r < n; ++r) {
            auto p = bound_.partners(j.relationship, j.left, r);
            if (!p.empty()) partner[r] = p.front();
        }
        for (const Feature& src : right.features) {
            Feature f = src;
            f.base = src.column.name;
            f.values.clear();
            for (std::size_t r = 0; r < n; ++r)
                f.values.push_back(partner[r] ? src.values[*partner[r]] : Value::not_applicable());
            f.record.params["joined_through"] = j.relationship;
            add(left, std::move(f));
        }
    }

    TrainingDataset materialize(const std::string& name, const std::optional<std::string>& subtype) {
        Frame f = frame(root_);  // copy: subtype columns differ per dataset
        const EntityType& root = bound_.entity(root_);
        const std::size_t n = bound_.table(root_).rows.size();

        for (const auto* g : schema_.generalizations_of(root_))
            for (const auto& st : g->subtypes) {
                if (subtype && st.name != *subtype) continue;
                for (const auto& a : st.attributes) add(f, own_feature(root_, a, FeatureRole::predictor, st.name));
            }
        const Attribute& target = *root.find(plan_.binding.target_attribute);
        add(f, own_feature(root_, target, FeatureRole::target));

        TrainingDataset ds;
        ds.name = name;
        ds.subtype = subtype;
        ds.target_column = f.features.back().column.name;
        ds.table.name = name;
        for (const auto& feat : f.features) {
            ds.table.columns.push_back(feat.column);
            ds.features.push_back(feat.record);
            if (feat.record.role == FeatureRole::key) ds.table.key_columns.push_back(feat.column.name);
        }
        const std::vector<Value>& target_values = f.features.back().values;
        for (std::size_t r = 0; r < n; ++r) {
            if (subtype && !bound_.is_member(*subtype, r)) continue;
            if (target_values[r].is_null()) {
                ++ds.dropped_null_target;
                continue;
            }
            Row row;
            row.reserve(f.features.size());
            for (const auto& feat : f.features) row.push_back(feat.values[r]);
            ds.table.rows.push_back(std::move(row));
        }
        ds.table.sort_by_key();
        if (subtype && ds.table.rows.empty() && ds.dropped_null_target == 0)
            warn("empty-subtype", "subtype " + *subtype + " has no members; dataset " + name + " is empty");
        if (ds.dropped_null_target)
            warn("null-target",
                 std::to_string(ds.dropped_null_target) + " row(s) without a target value left out of " + name);
        return ds;
    }

    void apply(const SubtypeSplit& s) {
        const Generalization* g = schema_.find_generalization(s.generalization);
        if (!g || g->supertype != root_) throw Error("plan splits by unknown generalization " + s.generalization);
        for (const auto& st : s.subtypes)
            pending_.emplace(plan_.task + "_" + st, materialize(plan_.task + "_" + st, st));
    }

    TrainingDataset& dataset(const std::string& name) {
        auto it = pending_.find(name);
        if (it != pending_.end()) return it->second;
        if (name != plan_.task) throw Error("plan refers to unknown dataset " + name);
        return pending_.emplace(name, materialize(name, std::nullopt)).first->second;
    }

    void apply(const ImputeColumns& c) {
        TrainingDataset& ds = dataset(c.dataset);
        impute(ds.table, ds.features, c.strategy, diags_);
    }

    void apply(const EmitDataset& e) {
        TrainingDataset ds = std::move(dataset(e.name));
        pending_.erase(e.name);
        if (options_.holdout > 0) {
            Table kept = ds.table, held = ds.table;
            kept.rows.clear();
            held.rows.clear();
            held.name = ds.name + "_holdout";
            for (std::size_t r = 0; r < ds.table.rows.size(); ++r)
                (in_holdout(ds.table.key_of(r), options_.holdout) ? held : kept).rows.push_back(ds.table.rows[r]);
            ds.table = std::move(kept);
            ds.holdout = std::move(held);
        }
        emitted_.push_back(std::move(ds));
    }

    void warn_leakage() {
        const Attribute* target = bound_.entity(root_).find(plan_.binding.target_attribute);
        if (!target || !target->derived) return;
        std::set<std::string> sources;
        std::set<std::string> counted;
        for (const auto& r : referenced_attributes(*target->derivation)) sources.insert(root_ + "." + r);
        for (const auto& [rel, attr] : referenced_aggregates(*target->derivation)) {
            const auto* rr = schema_.find_relationship(rel);
            if (!rr) continue;
            const std::string partner = rr->partner_of(root_);
            if (attr) sources.insert(partner + "." + *attr);
            else counted.insert(partner);
        }
        std::set<std::string> leaking;
        for (const auto& ds : emitted_)
            for (const auto& f : ds.features) {
                if (f.role != FeatureRole::predictor) continue;
                bool hit = f.transform == TransformKind::count && counted.count(f.origin_entities.front());
                for (const auto& s : f.source_attributes) hit = hit || sources.count(s);
                if (hit) leaking.insert(f.name);
            }
        if (leaking.empty()) return;
        std::string list;
        for (const auto& l : leaking) list += (list.empty() ? "" : ", ") + l;
        warn("target-leakage", "target " + root_ + "." + target->name + " is derived from data that also feeds " + list);
    }

    // -- output --------------------------------------------------------------

    json manifest() const {
        json datasets = json::array();
        for (const auto& ds : emitted_) {
            json features = json::array();
            for (const auto& f : ds.features) features.push_back(f.to_json());
            json d{{"name", ds.name},
                   {"file", ds.name + ".csv"},
                   {"subtype", ds.subtype ? json(*ds.subtype) : json(nullptr)},
                   {"rows", ds.table.rows.size()},
                   {"key_columns", ds.table.key_columns},
                   {"target_column", ds.target_column},
                   {"dropped_null_target", ds.dropped_null_target},
                   {"features", features}};
            if (ds.holdout) {
                d["holdout"] = {{"file", ds.name + "_holdout.csv"},
                                {"rows", ds.holdout->rows.size()},
                                {"fraction", options_.holdout}};
            }
            datasets.push_back(std::move(d));
        }
        json tables = json::object();
        for (const auto& [name, t] : bound_.bundle.tables)
            tables[name] = t.content_sha256.empty() ? sha256_hex(to_csv(t)) : t.content_sha256;
        const json plan = plan_to_json(plan_);
        return json{
            {"task", plan_.task},
            {"target", plan.at("target")},
            {"tool", {{"name", "cmml"}, {"version", options_.tool_version}}},
            {"options", plan.at("options")},
            {"datasets", datasets},
            {"executed_steps", plan.at("steps")},
            {"provenance",
             {{"schema_sha256", options_.schema_sha256},
              {"tables", tables},
              {"tool_version", options_.tool_version},
              {"seed", options_.seed ? json(*options_.seed) : json(nullptr)},
              {"clock", bound_.clock.today.to_iso()}}},
            {"warnings", diagnostics_to_json(unique_diagnostics())},
        };
    }

    void write_outputs(const ExecuteResult& res) const {
        std::vector<std::pair<std::string, std::string>> files;
        for (const auto& ds : res.datasets) {
            files.emplace_back(ds.name + ".csv", to_csv(ds.table));
            if (ds.holdout) files.emplace_back(ds.name + "_holdout.csv", to_csv(*ds.holdout));
        }
        files.emplace_back("manifest.json", res.manifest.dump(2) + "\n");
        write_files_atomically(*options_.out_dir, files);
    }

    const TransformationPlan& plan_;
    const BoundModel& bound_;
    const EerSchema& schema_;
    const ExecuteOptions& options_;
    const std::string root_;
    Diagnostics diags_;
    std::map<std::pair<std::string, std::string>, std::vector<Value>> cache_;
    std::map<std::string, Frame> frames_;
    std::map<std::string, TrainingDataset> pending_;
    std::vector<TrainingDataset> emitted_;
};

}  // namespace

ExecuteResult execute(const TransformationPlan& plan, const BoundModel& bound, const ExecuteOptions& options) {
    return Executor(plan, bound, options).run();
}

}  // namespace cmml
