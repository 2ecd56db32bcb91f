#include "cmml/schema_dsl.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "lexer.hpp"

namespace cmml {

SchemaSource SchemaSource::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read schema file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return SchemaSource{ss.str(), path.string()};
}

namespace {

using detail::fail;
using detail::ParseFailure;
using detail::Tok;
using detail::Token;
using detail::TokenCursor;

bool top_level_keyword(const Token& t) {
    return t.kind == Tok::ident &&
           (t.text == "entity" || t.text == "relationship" || t.text == "generalization" || t.text == "task");
}

class SchemaParser {
public:
    SchemaParser(const std::vector<Token>& toks, Diagnostics& diags) : toks_(toks), cur_(toks), diags_(diags) {}

    EerSchema run() {
        while (!cur_.at_end()) {
            const std::size_t start = cur_.position();
            try {
                declaration();
            } catch (ParseFailure& f) {
                diags_.push_back(std::move(f.diagnostic));
                recover(start);
            }
        }
        return std::move(schema_);
    }

private:
    void recover(std::size_t start) {
        const std::size_t failed_at = std::max(cur_.position(), start + 1);
        int depth = 0;
        std::size_t p = start;
        for (; p < toks_.size() && toks_[p].kind != Tok::end; ++p) {
            const Token& t = toks_[p];
            if (p >= failed_at && depth == 0 && top_level_keyword(t)) break;
            if (t.kind == Tok::lbrace) ++depth;
            else if (t.kind == Tok::rbrace && depth > 0) --depth;
        }
        cur_.reset(std::min(p, toks_.size() - 1));
    }

    const Token& expect(Tok k, std::string_view what) {
        if (!cur_.at(k))
            fail(cur_.peek(), "expected-token",
                 "expected " + std::string(what) + ", found " + describe(cur_.peek()));
        return cur_.next();
    }

    const Token& expect_word(std::string_view w) {
        if (!cur_.at_word(w)) fail(cur_.peek(), "expected-token", "expected '" + std::string(w) + "', found " + describe(cur_.peek()));
        return cur_.next();
    }

    static std::string describe(const Token& t) {
        if (t.kind == Tok::ident || t.kind == Tok::number) return "'" + t.text + "'";
        return std::string(detail::tok_name(t.kind));
    }

    void declare(std::set<std::string>& seen, const Token& name, const char* what) {
        if (!seen.insert(name.text).second)
            diags_.push_back({Severity::error, std::string("duplicate-") + what,
                              std::string(what) + " " + name.text + " declared twice", name.loc});
    }

    void declaration() {
        const Token& kw = cur_.peek();
        if (!top_level_keyword(kw))
            fail(kw, "expected-declaration",
                 "expected 'entity', 'relationship', 'generalization' or 'task', found " + describe(kw));
        cur_.next();
        if (kw.text == "entity") entity();
        else if (kw.text == "relationship") relationship();
        else if (kw.text == "generalization") generalization();
        else task();
    }

    void entity() {
        const Token& name = expect(Tok::ident, "entity name");
        expect(Tok::lbrace, "'{'");
        EntityType e{name.text, {}};
        std::set<std::string> attr_names;
        while (!cur_.at(Tok::rbrace)) e.attributes.push_back(attribute(attr_names, e.name));
        cur_.next();
        if (e.key_attributes().empty())
            diags_.push_back({Severity::error, "missing-key", "entity " + e.name + " lacks a key", name.loc});
        declare(type_names_, name, "entity");
        schema_.entities.push_back(std::move(e));
    }

    AttributeKind kind() {
        const Token& t = expect(Tok::ident, "attribute kind");
        auto k = parse_kind(t.text);
        if (!k)
            fail(t, "unknown-kind",
                 "unknown attribute kind '" + t.text + "' (expected identifier, numeric, nominal, boolean, date or text)");
        return *k;
    }

    Expr parenthesized_expr() {
        expect(Tok::lparen, "'('");
        Expr e = detail::parse_expression(cur_);
        expect(Tok::rparen, "')'");
        return e;
    }

    Attribute attribute(std::set<std::string>& names, const std::string& owner) {
        Attribute a;
        const Token& lead = cur_.peek();
        if (cur_.at_word("key")) {
            cur_.next();
            a.is_key = true;
        } else if (cur_.at_word("attr")) {
            cur_.next();
        } else if (cur_.at_word("derived")) {
            cur_.next();
            expect_word("attr");
            a.derived = true;
        } else {
            fail(lead, "expected-attribute", "expected 'key', 'attr', 'derived attr' or '}', found " + describe(lead));
        }
        const Token& name = expect(Tok::ident, "attribute name");
        a.name = name.text;
        expect(Tok::colon, "':'");
        a.kind = kind();
        if (cur_.at_word("optional")) {
            cur_.next();
            a.optional = true;
        }
        if (cur_.at_word("applicable_when")) {
            cur_.next();
            a.applicable_when = parenthesized_expr();
        }
        if (cur_.at(Tok::equals)) {
            const Token& eq = cur_.next();
            if (!a.derived) fail(eq, "derivation-mismatch", "attribute " + owner + "." + a.name + " has an expression but is not declared derived");
            a.derivation = detail::parse_expression(cur_);
        } else if (a.derived) {
            fail(cur_.peek(), "derivation-mismatch", "derived attribute " + owner + "." + a.name + " needs '= expression'");
        }
        if (!names.insert(a.name).second)
            diags_.push_back({Severity::error, "duplicate-attribute",
                              "attribute " + a.name + " declared twice in " + owner, name.loc});
        return a;
    }

    Cardinality cardinality() {
        expect(Tok::lparen, "'('");
        Cardinality c;
        const Token& lo = expect(Tok::number, "0 or 1");
        if (lo.text != "0" && lo.text != "1") fail(lo, "bad-cardinality", "minimum cardinality must be 0 or 1");
        c.min = lo.text == "1" ? 1 : 0;
        expect(Tok::comma, "','");
        const Token& hi = cur_.next();
        if (hi.kind == Tok::number && hi.text == "1") c.max = MaxCard::one;
        else if (hi.kind == Tok::ident && hi.text == "N") c.max = MaxCard::many;
        else fail(hi, "bad-cardinality", "maximum cardinality must be 1 or N");
        expect(Tok::rparen, "')'");
        return c;
    }

    void relationship() {
        const Token& name = expect(Tok::ident, "relationship name");
        expect(Tok::lbrace, "'{'");
        Relationship r;
        r.name = name.text;
        r.left.entity = expect(Tok::ident, "entity name").text;
        r.left.card = cardinality();
        expect(Tok::dashdash, "'--'");
        r.right.card = cardinality();
        r.right.entity = expect(Tok::ident, "entity name").text;
        expect_word("via");
        r.fk_columns.push_back(expect(Tok::ident, "foreign-key column").text);
        if (cur_.at(Tok::comma)) {
            cur_.next();
            r.fk_columns.push_back(expect(Tok::ident, "foreign-key column").text);
        }
        if (cur_.at(Tok::lbrace)) {
            cur_.next();
            std::set<std::string> names;
            while (!cur_.at(Tok::rbrace)) r.attributes.push_back(attribute(names, r.name));
            cur_.next();
        }
        expect(Tok::rbrace, "'}'");
        declare(relationship_names_, name, "relationship");
        schema_.relationships.push_back(std::move(r));
    }

    void generalization() {
        const Token& name = expect(Tok::ident, "generalization name");
        Generalization g;
        g.name = name.text;
        expect_word("of");
        g.supertype = expect(Tok::ident, "supertype entity").text;
        if (cur_.at_word("disjoint")) g.mode = GeneralizationMode::disjoint;
        else if (cur_.at_word("overlap")) g.mode = GeneralizationMode::overlap;
        else fail(cur_.peek(), "expected-token", "expected 'disjoint' or 'overlap', found " + describe(cur_.peek()));
        cur_.next();
        expect(Tok::lbrace, "'{'");
        while (!cur_.at(Tok::rbrace)) {
            expect_word("subtype");
            const Token& st_name = expect(Tok::ident, "subtype name");
            Subtype st{st_name.text, {}, {}};
            if (cur_.at_word("when")) {
                cur_.next();
                st.predicate = parenthesized_expr();
            } else if (cur_.at_word("from")) {
                cur_.next();
                expect_word("table");
            } else {
                fail(cur_.peek(), "expected-token", "expected 'when' or 'from table', found " + describe(cur_.peek()));
            }
            if (cur_.at(Tok::lbrace)) {
                cur_.next();
                std::set<std::string> names;
                while (!cur_.at(Tok::rbrace)) st.attributes.push_back(attribute(names, st.name));
                cur_.next();
            }
            declare(type_names_, st_name, "subtype");
            g.subtypes.push_back(std::move(st));
        }
        cur_.next();
        if (g.subtypes.size() < 2)
            diags_.push_back({Severity::error, "few-subtypes",
                              "generalization " + g.name + " needs at least two subtypes", name.loc});
        declare(generalization_names_, name, "generalization");
        schema_.generalizations.push_back(std::move(g));
    }

    void task() {
        const Token& name = expect(Tok::ident, "task name");
        expect(Tok::lbrace, "'{'");
        TaskDecl t;
        t.name = name.text;
        bool have_target = false;
        std::set<std::string> clauses;
        while (!cur_.at(Tok::rbrace)) {
            const Token& clause = expect(Tok::ident, "task clause");
            if (!clauses.insert(clause.text).second)
                fail(clause, "duplicate-clause", "clause '" + clause.text + "' given twice in task " + t.name);
            if (clause.text == "target") {
                t.target_entity = expect(Tok::ident, "entity name").text;
                expect(Tok::dot, "'.'");
                t.target_attribute = expect(Tok::ident, "attribute name").text;
                have_target = true;
            } else if (clause.text == "split_by") {
                t.split_by = expect(Tok::ident, "generalization name").text;
            } else if (clause.text == "agg") {
                std::vector<AggregateKind> aggs;
                do {
                    if (!aggs.empty()) cur_.next();
                    const Token& a = expect(Tok::ident, "aggregate name");
                    auto k = parse_aggregate(a.text);
                    if (!k) fail(a, "unknown-aggregate", "unknown aggregate '" + a.text + "' (expected count, mean, sum, min or max)");
                    aggs.push_back(*k);
                } while (cur_.at(Tok::comma));
                t.agg = std::move(aggs);
            } else if (clause.text == "top_k") {
                const Token& n = expect(Tok::number, "positive integer");
                int v = 0;
                try {
                    std::size_t used = 0;
                    v = std::stoi(n.text, &used);
                    if (used != n.text.size()) v = 0;
                } catch (const std::exception&) {
                    v = 0;
                }
                if (v <= 0) fail(n, "bad-top-k", "top_k must be a positive integer");
                t.top_k = v;
            } else if (clause.text == "impute") {
                const Token& m = expect(Tok::ident, "imputation mode");
                if (m.text == "mean_mode") t.impute = ImputeStrategy{ImputeStrategy::Kind::mean_mode, {}};
                else if (m.text == "none") t.impute = ImputeStrategy{ImputeStrategy::Kind::none, {}};
                else if (m.text == "constant") {
                    Expr e = parenthesized_expr();
                    std::optional<Value> v;
                    if (auto* l = std::get_if<Literal>(&e.node)) v = l->value;
                    else if (auto* u = std::get_if<Unary>(&e.node); u && u->op == UnaryOp::negate)
                        if (auto* l = std::get_if<Literal>(&u->operand->node); l && l->value.is_number())
                            v = Value(-l->value.number());
                    if (!v) fail(m, "bad-impute", "constant imputation needs a literal value");
                    t.impute = ImputeStrategy{ImputeStrategy::Kind::constant, *v};
                } else {
                    fail(m, "bad-impute", "impute must be mean_mode, none or constant(<literal>)");
                }
            } else {
                fail(clause, "unknown-clause", "unknown task clause '" + clause.text + "'");
            }
        }
        const Token& close = cur_.next();
        if (!have_target) fail(close, "missing-target", "task " + t.name + " has no target");
        declare(task_names_, name, "task");
        schema_.tasks.push_back(std::move(t));
    }

    const std::vector<Token>& toks_;
    TokenCursor cur_;
    Diagnostics& diags_;
    EerSchema schema_;
    std::set<std::string> type_names_, relationship_names_, generalization_names_, task_names_;
};

void print_attribute(std::ostringstream& os, const Attribute& a, const std::string& indent) {
    os << indent << (a.is_key ? "key " : a.derived ? "derived attr " : "attr ") << a.name << ": " << kind_name(a.kind);
    if (a.optional) os << " optional";
    if (a.applicable_when) os << " applicable_when (" << print_expr(*a.applicable_when) << ")";
    if (a.derivation) os << " = " << print_expr(*a.derivation);
    os << "\n";
}

}  // namespace

ParseResult parse_schema(const SchemaSource& source) {
    ParseResult result;
    const auto toks = detail::tokenize(source.text, source.origin, result.diagnostics);
    SchemaParser parser(toks, result.diagnostics);
    result.schema = parser.run();
    return result;
}

SchemaSource print_schema(const EerSchema& schema) {
    std::ostringstream os;
    bool first = true;
    auto sep = [&] {
        if (!first) os << "\n";
        first = false;
    };
    for (const auto& e : schema.entities) {
        sep();
        os << "entity " << e.name << " {\n";
        for (const auto& a : e.attributes) print_attribute(os, a, "  ");
        os << "}\n";
    }
    for (const auto& r : schema.relationships) {
        sep();
        os << "relationship " << r.name << " {\n  " << r.left.entity << " " << r.left.card.to_string() << " -- "
           << r.right.card.to_string() << " " << r.right.entity << " via ";
        for (std::size_t i = 0; i < r.fk_columns.size(); ++i) os << (i ? ", " : "") << r.fk_columns[i];
        if (!r.attributes.empty()) {
            os << " {\n";
            for (const auto& a : r.attributes) print_attribute(os, a, "    ");
            os << "  }";
        }
        os << "\n}\n";
    }
    for (const auto& g : schema.generalizations) {
        sep();
        os << "generalization " << g.name << " of " << g.supertype << " "
           << (g.mode == GeneralizationMode::disjoint ? "disjoint" : "overlap") << " {\n";
        for (const auto& st : g.subtypes) {
            os << "  subtype " << st.name;
            if (st.predicate) os << " when (" << print_expr(*st.predicate) << ")";
            else os << " from table";
            if (!st.attributes.empty()) {
                os << " {\n";
                for (const auto& a : st.attributes) print_attribute(os, a, "    ");
                os << "  }";
            }
            os << "\n";
        }
        os << "}\n";
    }
    for (const auto& t : schema.tasks) {
        sep();
        os << "task " << t.name << " {\n  target " << t.target_entity << "." << t.target_attribute << "\n";
        if (t.split_by) os << "  split_by " << *t.split_by << "\n";
        if (t.agg) {
            os << "  agg ";
            for (std::size_t i = 0; i < t.agg->size(); ++i) os << (i ? ", " : "") << aggregate_name((*t.agg)[i]);
            os << "\n";
        }
        if (t.top_k) os << "  top_k " << *t.top_k << "\n";
        if (t.impute) os << "  impute " << t.impute->to_string() << "\n";
        os << "}\n";
    }
    return SchemaSource{os.str(), "<printed>"};
}

}  // namespace cmml
