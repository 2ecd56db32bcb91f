#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "cmml/eer.hpp"
#include "cmml/schema_dsl.hpp"
#include "support.hpp"

using namespace cmml;
using cmml::testing::parse_or_throw;

namespace {

const char* kTwoEntities = R"(
entity CUSTOMER {
  key cust_id: identifier
  attr gender: nominal
  attr dob: date
  derived attr age: numeric = years_between(dob, today())
  attr ltv: numeric
}

entity ORDER {
  key order_id: identifier
  attr total: numeric
  attr channel: nominal
}

relationship PLACES {
  CUSTOMER (1,1) -- (1,N) ORDER via cust_id
}

task PREDICT_LTV {
  target CUSTOMER.ltv
}
)";

bool has_code(const Diagnostics& d, const std::string& code) {
    return std::any_of(d.begin(), d.end(), [&](const Diagnostic& x) { return x.code == code; });
}

Diagnostics parse_diags(const std::string& text) { return parse_schema({text, "t.cmml"}).diagnostics; }

Diagnostics validate_diags(const std::string& text) {
    auto p = parse_schema({text, "t.cmml"});
    REQUIRE_MESSAGE(p.ok(), text);
    return validate_schema(p.schema).diagnostics;
}

}  // namespace

TEST_CASE("the two-entity schema parses into entities, a relationship and a task") {
    auto p = parse_schema({kTwoEntities, "t.cmml"});
    REQUIRE(p.ok());
    const auto& s = p.schema;
    REQUIRE(s.entities.size() == 2);
    CHECK(s.entities[0].name == "CUSTOMER");
    CHECK(s.entities[0].key_attributes().size() == 1);
    const Attribute* age = s.entities[0].find("age");
    REQUIRE(age);
    CHECK(age->derived);
    CHECK(print_expr(*age->derivation) == "years_between(dob, today())");
    CHECK(s.entities[0].stored_attributes().size() == 4);

    const Relationship& r = s.relationships.at(0);
    CHECK(r.left.card == Cardinality{1, MaxCard::one});
    CHECK(r.right.card == Cardinality{1, MaxCard::many});
    CHECK(r.referenced().entity == "CUSTOMER");
    CHECK(r.holder().entity == "ORDER");
    CHECK(r.fanout_from("CUSTOMER").max == MaxCard::many);
    CHECK(r.fanout_from("ORDER").max == MaxCard::one);
    CHECK(r.partner_of("ORDER") == "CUSTOMER");
    CHECK(validate_schema(s).valid());
}

TEST_CASE("parse errors name the line and column") {
    const auto d = parse_diags("entity A {\n  key id: identifier\n  attr x: flaot\n}\n");
    REQUIRE(has_code(d, "unknown-kind"));
    const auto& e = *std::find_if(d.begin(), d.end(), [](const Diagnostic& x) { return x.code == "unknown-kind"; });
    CHECK(e.location.origin == "t.cmml");
    CHECK(e.location.line == 3);
    CHECK(e.location.column == 11);
}

TEST_CASE("the parser recovers and reports every broken declaration") {
    const auto d = parse_diags(
        "entity A {\n  key id: identifier\n  attr x: flaot\n}\n"
        "entity B {\n  attr y numeric\n}\n"
        "entity C {\n  key id: identifier\n}\n");
    CHECK(count_errors(d) >= 2);
    CHECK(has_code(d, "unknown-kind"));
}

TEST_CASE("syntax diagnostics") {
    CHECK(has_code(parse_diags("entity A {\n  attr x: numeric\n}\n"), "missing-key"));
    CHECK(has_code(parse_diags("bogus A {}\n"), "expected-declaration"));
    CHECK(has_code(parse_diags("entity A {\n  key id: identifier\n  attr x: numeric\n  attr x: text\n}\n"),
                   "duplicate-attribute"));
    CHECK(has_code(parse_diags(std::string(kTwoEntities) + "task T {\n  target CUSTOMER.ltv\n  top_k 0\n}\n"),
                   "bad-top-k"));
    CHECK(has_code(parse_diags(std::string(kTwoEntities) + "task T {\n  target CUSTOMER.ltv\n  impute median\n}\n"),
                   "bad-impute"));
    CHECK(has_code(parse_diags(std::string(kTwoEntities) + "task T {\n  agg mean\n}\n"), "missing-target"));
    CHECK(has_code(parse_diags(std::string(kTwoEntities) + "task T {\n  target CUSTOMER.ltv\n  agg median\n}\n"),
                   "unknown-aggregate"));
    CHECK(has_code(parse_diags("entity A {\n  key id: identifier\n}\nrelationship R {\n  A (2,1) -- (1,N) A via x\n}\n"),
                   "bad-cardinality"));
}

TEST_CASE("validation catches dangling references and type errors") {
    CHECK(has_code(validate_diags("entity A {\n  key id: identifier\n}\n"
                                  "relationship R {\n  A (1,1) -- (0,N) B via a_id\n}\n"),
                   "unknown-entity"));
    CHECK(has_code(validate_diags("entity A {\n  key id: identifier\n  attr d: date\n"
                                  "  derived attr z: numeric = d + 1\n}\n"),
                   "type-error"));
    CHECK(has_code(validate_diags("entity A {\n  key id: identifier\n  derived attr a: numeric = b\n"
                                  "  derived attr b: numeric = a\n}\n"),
                   "derivation-cycle"));
    CHECK(has_code(validate_diags(std::string(kTwoEntities) + "task T {\n  target CUSTOMER.nope\n}\n"),
                   "unknown-attribute"));
    CHECK(has_code(validate_diags(std::string(kTwoEntities) + "task T {\n  target CUSTOMER.ltv\n  split_by G\n}\n"),
                   "unknown-generalization"));
    CHECK(count_errors(parse_diags("entity A {\n  key id: identifier\n}\nentity A {\n  key id: identifier\n}\n")) == 1);
    CHECK(has_code(validate_diags("entity A {\n  key id: identifier\n  attr t: text\n}\n"
                                  "generalization G of A disjoint {\n  subtype S when (t) {\n  }\n"
                                  "  subtype U when (t = \"u\") {\n  }\n}\n"),
                   "type-error"));
    CHECK(has_code(parse_diags("entity A {\n  key id: identifier\n}\n"
                               "generalization G of A disjoint {\n  subtype S from table\n}\n"),
                   "few-subtypes"));
}

TEST_CASE("relationship attributes are only allowed on many-to-many relationships") {
    CHECK(has_code(validate_diags("entity A {\n  key id: identifier\n}\nentity B {\n  key bid: identifier\n}\n"
                                  "relationship R {\n  A (1,1) -- (0,N) B via id {\n    attr w: numeric\n  }\n}\n"),
                   "relationship-attributes"));
}

TEST_CASE("many-to-many relationships become an associative entity") {
    const char* text = R"(
entity ORDER {
  key order_id: identifier
  attr total: numeric
}
entity PRODUCT {
  key product_id: identifier
  attr price: numeric
}
relationship CONTAINS {
  ORDER (0,N) -- (1,N) PRODUCT via order_id, product_id {
    attr quantity: numeric
  }
}
)";
    auto p = parse_schema({text, "t"});
    REQUIRE(p.ok());
    REQUIRE(validate_schema(p.schema).valid());
    const EerSchema s = rewrite_many_to_many(p.schema);
    const EntityType* assoc = s.find_entity("ORDER_PRODUCT");
    REQUIRE(assoc);
    CHECK(assoc->key_attributes().size() == 2);
    CHECK(assoc->find("quantity"));
    REQUIRE(s.relationships.size() == 2);
    for (const auto& r : s.relationships) {
        CHECK_FALSE(r.is_many_to_many());
        CHECK(r.holder().entity == "ORDER_PRODUCT");
    }
    // every order lists at least one product; a product may be in no order
    CHECK(s.find_relationship("CONTAINS_ORDER")->fanout_from("ORDER").min == 1);
    CHECK(s.find_relationship("CONTAINS_PRODUCT")->fanout_from("PRODUCT").min == 0);
    CHECK(validate_schema(s).valid());
    CHECK(rewrite_many_to_many(s) == s);

    auto clash = p.schema;
    clash.entities.push_back({"ORDER_PRODUCT", {{"k", AttributeKind::identifier, true}}});
    CHECK_THROWS_AS(rewrite_many_to_many(clash), Error);
}

TEST_CASE("target resolution walks breadth first and skips cycle-closing relationships") {
    const EerSchema s = parse_or_throw(R"(
entity A {
  key a_id: identifier
  attr y: numeric
  attr x: numeric
}
entity B {
  key b_id: identifier
  attr v: numeric
}
entity C {
  key c_id: identifier
  attr w: numeric
}
entity D {
  key d_id: identifier
  attr u: numeric
}
entity LONELY {
  key l_id: identifier
}
relationship AB {
  A (1,1) -- (0,N) B via a_id
}
relationship BC {
  B (1,1) -- (0,N) C via b_id
}
relationship AC {
  A (1,1) -- (0,N) C via a_ref
}
relationship DA {
  D (1,1) -- (0,N) A via d_id
}
task T {
  target A.y
}
)");
    const TargetBinding b = resolve_target(s, *s.find_task("T"));
    CHECK(b.target_entity == "A");
    CHECK(b.predictor_entities == std::vector<std::string>{"A", "B", "C", "D"});
    REQUIRE(b.edges.size() == 3);
    CHECK(b.edges[0] == TreeEdge{"A", "B", "AB", true, 1});
    CHECK(b.edges[1] == TreeEdge{"A", "C", "AC", true, 1});
    CHECK(b.edges[2] == TreeEdge{"A", "D", "DA", false, 1});
    CHECK(b.skipped_relationships == std::vector<std::string>{"BC"});
    CHECK(b.excluded_entities == std::vector<std::string>{"LONELY"});
    const auto w = b.warnings();
    CHECK(has_code(w, "relationship-skipped"));
    CHECK(has_code(w, "entity-excluded"));
    CHECK(b.depth_of("C") == 1);

    TaskDecl bad{"X", "A", "nope"};
    CHECK_THROWS_AS(resolve_target(s, bad), Error);
}

TEST_CASE("the shipped example prints and parses back to the same schema") {
    const auto src = SchemaSource::from_file(cmml::testing::source_dir() / "examples" / "customer_order.cmml");
    auto p = parse_schema(src);
    REQUIRE(p.ok());
    const SchemaSource printed = print_schema(p.schema);
    auto back = parse_schema(printed);
    REQUIRE(back.ok());
    CHECK(back.schema == p.schema);
    CHECK(print_schema(back.schema).text == printed.text);
}

TEST_CASE("print then parse is the identity on random schemas") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 150; ++i) {
        const auto rc = cmml::testing::random_case(rng);
        const std::string text = print_schema(rc.schema).text;
        INFO(text);
        auto back = parse_schema({text, "<printed>"});
        REQUIRE(back.ok());
        CHECK(back.schema == rc.schema);
        CHECK(validate_schema(back.schema).valid());
    }
}

TEST_CASE("impute strategies parse and print") {
    CHECK(ImputeStrategy::parse("mean_mode")->kind == ImputeStrategy::Kind::mean_mode);
    CHECK(ImputeStrategy::parse("none")->kind == ImputeStrategy::Kind::none);
    auto c = ImputeStrategy::parse("constant(0)");
    REQUIRE(c);
    CHECK(c->kind == ImputeStrategy::Kind::constant);
    CHECK(ImputeStrategy::parse(c->to_string()) == c);
    CHECK_FALSE(ImputeStrategy::parse("median"));
}
