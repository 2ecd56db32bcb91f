#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "cmml/pipeline.hpp"
#include "cmml/schema_dsl.hpp"

namespace cmml::testing {

namespace fs = std::filesystem;

fs::path source_dir() { return CMML_TEST_SOURCE_DIR; }
fs::path binary_dir() { return CMML_TEST_BINARY_DIR; }

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& tag) {
    static int counter = 0;
    const fs::path p = fs::temp_directory_path() /
                       ("cmml-test-" + std::to_string(::getpid()) + "-" + tag + "-" + std::to_string(counter++));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Clock fixed_clock(const char* iso) { return Clock{*Date::parse_iso(iso)}; }

namespace {

std::string describe(const Diagnostics& d) {
    std::string s;
    for (const auto& x : d)
        if (x.severity == Severity::error) s += x.to_string() + "\n";
    return s;
}

}  // namespace

EerSchema parse_or_throw(const std::string& text) {
    auto parsed = parse_schema({text, "<test>"});
    if (!parsed.ok()) throw Error("schema does not parse:\n" + describe(parsed.diagnostics) + text);
    auto v = validate_schema(parsed.schema);
    if (!v.valid()) throw Error("schema is invalid:\n" + describe(v.diagnostics) + text);
    return rewrite_many_to_many(parsed.schema);
}

BoundModel bind_texts(const std::string& schema_text, const std::map<std::string, std::string>& csv, Clock clock) {
    EerSchema schema = parse_or_throw(schema_text);
    DataBundle bundle;
    for (const auto& name : required_tables(schema)) {
        auto it = csv.find(name);
        if (it == csv.end()) throw Error("no CSV text for " + name);
        auto read = read_csv_text(it->second, name + ".csv", expected_columns(schema, name));
        if (has_errors(read.diagnostics)) throw Error("bad CSV for " + name + ":\n" + describe(read.diagnostics));
        read.table.name = name;
        if (const auto* e = schema.find_entity(name))
            for (const auto* k : e->key_attributes()) read.table.key_columns.push_back(k->name);
        bundle.tables.emplace(name, std::move(read.table));
    }
    auto bound = bind(schema, std::move(bundle), clock);
    if (!bound.ok()) throw Error("bind failed:\n" + describe(bound.diagnostics));
    return std::move(*bound.model);
}

BoundModel load_example(Clock clock) {
    auto project = load_project(source_dir() / "examples" / "customer_order.cmml", source_dir() / "examples" / "data",
                                clock);
    if (!project.ok() || !project.bound) throw Error("example does not load:\n" + describe(project.diagnostics));
    return std::move(*project.bound);
}

// ---------------------------------------------------------------------------
// Random schemas and bundles

namespace {

enum class Link { to_many, lookup, one_to_one };

struct GenEntity {
    std::string name;
    std::string key;
    std::vector<std::pair<std::string, AttributeKind>> attrs;
};

struct GenRel {
    std::string name;
    int parent;  // tree parent at generation time
    int child;
    Link link;
    std::string fk;
};

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

int uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
bool chance(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

Value random_value(std::mt19937_64& rng, AttributeKind k) {
    switch (k) {
        case AttributeKind::numeric: return Value(uniform(rng, 0, 40) / 2.0);
        case AttributeKind::nominal: return Value(pick(rng, std::vector<std::string>{"x", "y", "z", "w w"}));
        case AttributeKind::boolean: return Value(chance(rng, 0.5));
        case AttributeKind::date: return Value(Date{Date::from_ymd(2019, 1, 1).days + uniform(rng, 0, 700)});
        case AttributeKind::text: return Value("note " + std::to_string(uniform(rng, 0, 9)));
        case AttributeKind::identifier: return Value(std::to_string(uniform(rng, 0, 99)));
    }
    return Value::unknown();
}

}  // namespace

RandomCase random_case(std::mt19937_64& rng, const RandomOptions& options) {
    const int n = uniform(rng, 1, options.max_entities);
    const std::vector<AttributeKind> kinds{AttributeKind::numeric, AttributeKind::nominal, AttributeKind::boolean,
                                           AttributeKind::date, AttributeKind::text};
    const std::map<AttributeKind, std::string> prefix{{AttributeKind::numeric, "n"}, {AttributeKind::nominal, "c"},
                                                      {AttributeKind::boolean, "b"}, {AttributeKind::date, "d"},
                                                      {AttributeKind::text, "t"}};
    std::vector<GenEntity> ents;
    for (int i = 0; i < n; ++i) {
        GenEntity e;
        e.name = "E" + std::to_string(i);
        e.key = "e" + std::to_string(i) + "_id";
        for (auto k : kinds)
            if (chance(rng, 0.45)) e.attrs.emplace_back(prefix.at(k) + "1", k);
        if (e.attrs.empty()) e.attrs.emplace_back("n1", AttributeKind::numeric);
        ents.push_back(std::move(e));
    }

    std::vector<GenRel> rels;
    for (int i = 1; i < n; ++i) {
        const int p = uniform(rng, 0, i - 1);
        const int roll = uniform(rng, 0, 9);
        const Link link = roll < 6 ? Link::to_many : roll < 8 ? Link::lookup : Link::one_to_one;
        rels.push_back({"R" + std::to_string(i), p, i, link, "fk" + std::to_string(i)});
    }
    if (options.allow_cycles && n >= 3 && chance(rng, 0.3)) {
        int a = uniform(rng, 0, n - 1), b = uniform(rng, 0, n - 1);
        if (a != b) rels.push_back({"X" + std::to_string(a) + "_" + std::to_string(b), a, b, Link::to_many, "xfk"});
    }

    RandomCase rc;
    rc.task = "PREDICT";
    const bool with_flag = chance(rng, 0.5);
    const bool with_derived = chance(rng, 0.4) &&
                              std::any_of(ents[0].attrs.begin(), ents[0].attrs.end(),
                                          [](const auto& a) { return a.first == "n1"; });
    std::string count_rel;
    for (const auto& r : rels)
        if (r.parent == 0 && r.link == Link::to_many && r.name[0] == 'R') count_rel = r.name;
    const bool with_count = !count_rel.empty() && chance(rng, 0.4);
    rc.has_split = options.allow_generalization && chance(rng, 0.6);
    rc.overlap = rc.has_split && chance(rng, 0.5);

    // -- schema text
    std::ostringstream s;
    for (int i = 0; i < n; ++i) {
        const auto& e = ents[i];
        s << "entity " << e.name << " {\n  key " << e.key << ": identifier\n";
        for (const auto& [a, k] : e.attrs) s << "  attr " << a << ": " << kind_name(k) << " optional\n";
        if (i == 0) {
            s << "  attr y: numeric optional\n";
            if (with_flag) s << "  attr flag: boolean\n  attr amt: numeric optional applicable_when (flag)\n";
            if (with_derived) s << "  derived attr dn: numeric = n1 * 2\n";
            if (with_count) s << "  derived attr kids: numeric = count(" << count_rel << ")\n";
            if (rc.has_split) s << (rc.overlap ? "  attr g: numeric\n" : "  attr seg: nominal optional\n");
        }
        s << "}\n\n";
    }
    for (const auto& r : rels) {
        const auto& P = ents[r.parent].name;
        const auto& C = ents[r.child].name;
        s << "relationship " << r.name << " {\n  ";
        switch (r.link) {
            case Link::to_many: s << P << (r.name[0] == 'X' ? " (0,1)" : " (1,1)") << " -- (0,N) " << C; break;
            case Link::lookup: s << C << " (1,1) -- (0,N) " << P; break;
            case Link::one_to_one: s << P << " (1,1) -- (0,1) " << C; break;
        }
        s << " via " << r.fk << "\n}\n\n";
    }
    if (rc.has_split) {
        s << "generalization G of E0 " << (rc.overlap ? "overlap" : "disjoint") << " {\n";
        if (rc.overlap) {
            s << "  subtype SA when (g < 6) {\n    attr sa_x: numeric optional\n  }\n";
            s << "  subtype SB when (g > 3) {\n    attr sb_c: nominal optional\n  }\n";
        } else {
            s << "  subtype SA when (seg = \"a\") {\n    attr sa_x: numeric optional\n  }\n";
            s << "  subtype SB when (seg = \"b\") {\n    attr sb_c: nominal optional\n  }\n";
        }
        s << "}\n\n";
    }
    s << "task PREDICT {\n  target E0.y\n";
    if (rc.has_split && chance(rng, 0.5)) s << "  split_by G\n";
    if (chance(rng, 0.3)) s << "  top_k 1\n";
    s << "}\n";
    rc.schema = parse_or_throw(s.str());

    // -- rows: keys and attribute values
    std::vector<std::vector<Row>> rows(n);
    std::vector<std::vector<Column>> cols(n);
    for (int i = 0; i < n; ++i) cols[i] = expected_columns(rc.schema, ents[i].name);
    auto col = [&](int e, const std::string& name) {
        for (std::size_t c = 0; c < cols[e].size(); ++c)
            if (cols[e][c].name == name) return c;
        throw Error("generator: no column " + name);
    };
    auto new_row = [&](int e) {
        Row r;
        for (const auto& c : cols[e])
            r.push_back(chance(rng, 0.15) ? Value::unknown() : random_value(rng, c.kind));
        r[col(e, ents[e].key)] = Value(std::to_string(rows[e].size() + 1));
        rows[e].push_back(std::move(r));
    };
    auto parent_rel = [&](int child) -> const GenRel* {
        for (const auto& r : rels)
            if (r.child == child && r.name[0] == 'R') return &r;
        return nullptr;
    };
    for (int i = 0; i < n; ++i) {
        const GenRel* pr = parent_rel(i);
        if (!pr) {
            const int count = uniform(rng, 1, options.max_root_rows);
            for (int k = 0; k < count; ++k) new_row(i);
        } else if (pr->link == Link::lookup) {
            const int count = uniform(rng, 1, 4);
            for (int k = 0; k < count; ++k) new_row(i);
        } else {
            for (std::size_t p = 0; p < rows[pr->parent].size(); ++p) {
                const int count = pr->link == Link::to_many ? uniform(rng, 0, 3) : uniform(rng, 0, 1);
                const Value pkey = rows[pr->parent][p][col(pr->parent, ents[pr->parent].key)];
                for (int k = 0; k < count; ++k) {
                    new_row(i);
                    rows[i].back()[col(i, pr->fk)] = pkey;
                }
            }
        }
    }
    for (const auto& r : rels) {
        // to-many from the cycle edge and lookups still need their references
        const bool child_holds = r.link != Link::lookup;
        if (r.name[0] == 'R' && child_holds) continue;
        const int holder = child_holds ? r.child : r.parent;
        const int referenced = child_holds ? r.parent : r.child;
        for (auto& row : rows[holder]) {
            Value& fk = row[col(holder, r.fk)];
            if (rows[referenced].empty() || (r.name[0] == 'X' && chance(rng, 0.2)))
                fk = Value::unknown();
            else
                fk = rows[referenced][uniform(rng, 0, int(rows[referenced].size()) - 1)]
                                     [col(referenced, ents[referenced].key)];
        }
    }

    // -- root specifics: target, applicability, membership
    auto& root = rows[0];
    for (auto& r : root) {
        r[col(0, "y")] = chance(rng, 0.12) ? Value::unknown() : Value(uniform(rng, 0, 100) / 4.0);
        if (with_flag) {
            const bool flag = chance(rng, 0.6);
            r[col(0, "flag")] = Value(flag);
            r[col(0, "amt")] = !flag ? Value::unknown() : chance(rng, 0.3) ? Value::unknown() : Value(uniform(rng, 1, 9));
        }
    }
    if (rc.has_split) {
        auto& sa = rc.membership["SA"];
        auto& sb = rc.membership["SB"];
        for (auto& r : root) {
            bool in_a = false, in_b = false;
            if (rc.overlap) {
                const double g = uniform(rng, 0, 9);
                r[col(0, "g")] = Value(g);
                in_a = g < 6;
                in_b = g > 3;
            } else {
                const int roll = uniform(rng, 0, 9);
                if (roll < 4) r[col(0, "seg")] = Value("a"), in_a = true;
                else if (roll < 8) r[col(0, "seg")] = Value("b"), in_b = true;
                else r[col(0, "seg")] = Value("c");
            }
            sa.push_back(in_a);
            sb.push_back(in_b);
            r[col(0, "sa_x")] = !in_a ? Value::unknown() : chance(rng, 0.3) ? Value::unknown() : Value(uniform(rng, 0, 20));
            r[col(0, "sb_c")] =
                !in_b ? Value::unknown() : chance(rng, 0.3) ? Value::unknown() : Value(pick(rng, std::vector<std::string>{"p", "q"}));
        }
    }

    for (int i = 0; i < n; ++i) {
        Table t;
        t.name = ents[i].name;
        t.columns = cols[i];
        t.rows = std::move(rows[i]);
        t.key_columns = {ents[i].key};
        rc.bundle.tables.emplace(t.name, std::move(t));
    }
    return rc;
}

std::size_t oracle_join_size(const EerSchema& schema, const DataBundle& bundle, const TargetBinding& binding) {
    auto text_of = [](const Value& v) { return v.is_null() ? std::string("\x01null") : v.to_text(); };
    auto column = [](const Table& t, const std::string& name) {
        for (std::size_t c = 0; c < t.columns.size(); ++c)
            if (t.columns[c].name == name) return c;
        throw Error("oracle: no column " + name);
    };
    auto key_col = [&](const std::string& entity) {
        return column(bundle.tables.at(entity), schema.find_entity(entity)->key_attributes().front()->name);
    };

    std::function<std::size_t(const std::string&, std::size_t)> size = [&](const std::string& entity,
                                                                          std::size_t row) -> std::size_t {
        const Table& et = bundle.tables.at(entity);
        std::size_t product = 1;
        for (const auto& e : binding.edges) {
            if (e.parent != entity) continue;
            const Relationship& r = *schema.find_relationship(e.relationship);
            const Table& ct = bundle.tables.at(e.child);
            const std::string& fk = r.fk_columns.front();
            std::size_t sum = 0;
            bool any = false;
            for (std::size_t c = 0; c < ct.rows.size(); ++c) {
                const bool child_holds = r.holder().entity == e.child;
                const bool linked = child_holds ? text_of(ct.rows[c][column(ct, fk)]) == text_of(et.rows[row][key_col(entity)])
                                                : text_of(et.rows[row][column(et, fk)]) == text_of(ct.rows[c][key_col(e.child)]);
                if (!linked) continue;
                any = true;
                sum += size(e.child, c);
            }
            product *= any ? sum : 1;
        }
        return product;
    };

    std::size_t total = 0;
    const Table& root = bundle.tables.at(binding.target_entity);
    for (std::size_t r = 0; r < root.rows.size(); ++r) total += size(binding.target_entity, r);
    return total;
}

double oracle_t_plus(const std::vector<double>& d) {
    std::vector<double> nz;
    for (double x : d)
        if (x != 0) nz.push_back(x);
    double t_plus = 0;
    for (std::size_t i = 0; i < nz.size(); ++i) {
        if (nz[i] < 0) continue;
        // rank of |d_i| counted directly: below + (ties incl. self + 1) / 2
        std::size_t below = 0, same = 0;
        for (double y : nz) {
            if (std::abs(y) < std::abs(nz[i])) ++below;
            if (std::abs(y) == std::abs(nz[i])) ++same;
        }
        t_plus += below + (same + 1) / 2.0;
    }
    return t_plus;
}

std::string naming_violation(const FeatureRecord& rec) {
    if (rec.origin_entities.empty()) return "no origin entity";
    const std::string& first = rec.origin_entities.front();
    TransformKind kind = rec.transform;
    if (kind == TransformKind::imputed_mean || kind == TransformKind::imputed_mode ||
        kind == TransformKind::imputed_const) {
        if (!rec.params.contains("base_kind")) return "imputed record without base_kind";
        auto base = parse_transform(rec.params.at("base_kind").get<std::string>());
        if (!base) return "unknown base_kind";
        kind = *base;
    }
    std::string expected;
    auto child_feature = [&]() -> std::string {
        if (!rec.params.contains("child_feature")) return "";
        const std::string cf = rec.params.at("child_feature").get<std::string>();
        // a plain attribute of the child contributes its own name, anything built earlier its full column name
        if (rec.origin_entities.size() == 1 && cf.rfind(first + "_", 0) == 0) return cf.substr(first.size() + 1);
        return cf;
    };
    switch (kind) {
        case TransformKind::raw:
        case TransformKind::derived: {
            if (rec.source_attributes.empty()) return "no source attribute";
            const std::string& src = rec.source_attributes.front();
            const auto dot = src.find('.');
            if (src.substr(0, dot) != first) return "source " + src + " outside origin " + first;
            expected = first + "_" + src.substr(dot + 1);
            break;
        }
        case TransformKind::count: expected = first + "_count"; break;
        case TransformKind::sum:
        case TransformKind::mean:
        case TransformKind::min:
        case TransformKind::max:
            expected = first + "_" + child_feature() + "_" + std::string(transform_name(kind));
            break;
        case TransformKind::true_count: expected = first + "_" + child_feature() + "_true_count"; break;
        case TransformKind::concat: expected = first + "_" + child_feature() + "_concat"; break;
        case TransformKind::category_count: {
            const auto& cat = rec.params.at("category");
            expected = first + "_" + child_feature() + "_" +
                       (cat.is_null() ? std::string("OTHER") : sanitize_category(cat.get<std::string>())) + "_count";
            break;
        }
        default: return "unexpected transform";
    }
    if (rec.name != expected) return "name " + rec.name + " but the algebra gives " + expected;
    return {};
}

}  // namespace cmml::testing
