#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <regex>

#include "cmml/planner.hpp"
#include "cmml/schema_dsl.hpp"
#include "support.hpp"

using namespace cmml;
namespace t = cmml::testing;

namespace {

EerSchema example_schema() {
    return t::parse_or_throw(t::read_file(t::source_dir() / "examples" / "customer_order.cmml"));
}

std::vector<std::string> kinds(const TransformationPlan& p) {
    std::vector<std::string> out;
    for (const auto& s : p.steps) out.push_back(s.kind());
    return out;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST_CASE("customer task: lookups below the root first, then summaries deepest first") {
    const EerSchema s = example_schema();
    const auto plan = compile_plan(s, *s.find_task("PREDICT_LTV"));
    CHECK(kinds(plan) == std::vector<std::string>{"derive_attr", "join_one_to_one", "summarize_child", "summarize_child",
                                                  "impute_columns", "emit_dataset"});
    const auto& derive = std::get<DeriveAttr>(plan.steps[0].op);
    CHECK(derive.entity == "CUSTOMER");
    CHECK(derive.attribute == "age");
    CHECK(plan.steps[0].guidelines == std::vector<std::string>{"G1", "G2"});
    const auto& join = std::get<JoinOneToOne>(plan.steps[1].op);
    CHECK(join.left == "ORDER_PRODUCT");
    CHECK(join.right == "PRODUCT");
    const auto& inner = std::get<SummarizeChild>(plan.steps[2].op);
    CHECK(inner.parent == "ORDER");
    CHECK(inner.child == "ORDER_PRODUCT");
    const auto& outer = std::get<SummarizeChild>(plan.steps[3].op);
    CHECK(outer.parent == "CUSTOMER");
    CHECK(outer.child == "ORDER");
    CHECK(outer.agg == std::vector<AggregateKind>{AggregateKind::mean, AggregateKind::sum, AggregateKind::min,
                                                   AggregateKind::max});
    CHECK(outer.top_k == 20);
    CHECK(plan.steps[3].guidelines == std::vector<std::string>{"G1", "G4"});
    CHECK(plan.steps[4].guidelines == std::vector<std::string>{"G3"});
    CHECK(plan.outputs == std::vector<std::string>{"PREDICT_LTV"});
    CHECK(plan.naming_policy == "G1");
}

TEST_CASE("order task: root lookup after summaries, then the split into one dataset per subtype") {
    const EerSchema s = example_schema();
    const auto plan = compile_plan(s, *s.find_task("PREDICT_PRIORITY"));
    CHECK(kinds(plan) == std::vector<std::string>{"derive_attr", "join_one_to_one", "summarize_child",
                                                  "join_one_to_one", "subtype_split", "impute_columns",
                                                  "impute_columns", "emit_dataset", "emit_dataset"});
    const auto& split = std::get<SubtypeSplit>(plan.steps[4].op);
    CHECK(split.generalization == "ORDER_SIZE");
    CHECK(split.subtypes == std::vector<std::string>{"SMALL_ORDER", "LARGE_ORDER"});
    CHECK(plan.outputs ==
          std::vector<std::string>{"PREDICT_PRIORITY_SMALL_ORDER", "PREDICT_PRIORITY_LARGE_ORDER"});
    CHECK(plan.options.split_by == std::optional<std::string>("ORDER_SIZE"));
}

TEST_CASE("a sole generalization on the root is used even without split_by, with a note") {
    EerSchema s = example_schema();
    TaskDecl task = *s.find_task("PREDICT_PRIORITY");
    task.split_by.reset();
    const auto plan = compile_plan(s, task);
    CHECK(plan.options.split_by == std::optional<std::string>("ORDER_SIZE"));
    CHECK_FALSE(plan.notes.empty());
}

TEST_CASE("overrides win over task clauses") {
    const EerSchema s = example_schema();
    PlanOverrides o;
    o.agg = std::vector<AggregateKind>{AggregateKind::max};
    o.top_k = 1;
    o.impute = ImputeStrategy{ImputeStrategy::Kind::none, std::nullopt};
    const auto plan = compile_plan(s, *s.find_task("PREDICT_LTV"), o);
    CHECK(plan.options.top_k == 1);
    CHECK(std::get<SummarizeChild>(plan.steps[3].op).agg ==
          std::vector<AggregateKind>{AggregateKind::max});
    CHECK(std::none_of(plan.steps.begin(), plan.steps.end(),
                       [](const PlanStep& st) { return st.kind() == "impute_columns"; }));
}

TEST_CASE("unusable tasks are rejected") {
    EerSchema s = example_schema();
    SUBCASE("top_k below one") {
        PlanOverrides o;
        o.top_k = 0;
        CHECK_THROWS_AS(compile_plan(s, *s.find_task("PREDICT_LTV"), o), Error);
    }
    SUBCASE("split_by naming a generalization of another entity") {
        PlanOverrides o;
        o.split_by = "ORDER_SIZE";
        CHECK_THROWS_AS(compile_plan(s, *s.find_task("PREDICT_LTV"), o), Error);
    }
    SUBCASE("unknown split_by") {
        PlanOverrides o;
        o.split_by = "NOPE";
        CHECK_THROWS_AS(compile_plan(s, *s.find_task("PREDICT_PRIORITY"), o), Error);
    }
    SUBCASE("unrewritten many-to-many relationship") {
        auto p = parse_schema({R"(
entity A {
  key a: identifier
  attr y: numeric
  attr x: numeric
}
entity B {
  key b: identifier
}
relationship AB {
  A (0,N) -- (0,N) B via a, b
}
task T {
  target A.y
}
)",
                               "t"});
        REQUIRE(p.ok());
        CHECK_THROWS_AS(compile_plan(p.schema, p.schema.tasks[0]), Error);
        CHECK_NOTHROW(compile_plan(rewrite_many_to_many(p.schema), p.schema.tasks[0]));
    }
    SUBCASE("root without predictors") {
        const EerSchema lone = t::parse_or_throw("entity A {\n  key a: identifier\n  attr y: numeric\n}\n"
                                                 "task T {\n  target A.y\n}\n");
        CHECK_THROWS_AS(compile_plan(lone, lone.tasks[0]), Error);
    }
}

TEST_CASE("superseded attributes") {
    const EerSchema s = example_schema();
    CHECK(superseded_attributes(*s.find_entity("CUSTOMER")) == std::vector<std::string>{"dob"});
    CHECK(superseded_attributes(*s.find_entity("ORDER")).empty());
}

TEST_CASE("explain: one numbered paragraph per step, each dataset named only where it is emitted") {
    const EerSchema s = example_schema();
    for (const char* task : {"PREDICT_LTV", "PREDICT_PRIORITY"}) {
        const auto plan = compile_plan(s, *s.find_task(task));
        const std::string text = explain_plan(plan);
        INFO(text);
        for (std::size_t i = 1; i <= plan.steps.size(); ++i)
            CHECK(count_of(text, "\n" + std::to_string(i) + ". ") == 1);
        CHECK(count_of(text, "\n" + std::to_string(plan.steps.size() + 1) + ". ") == 0);
        for (const auto& out : plan.outputs) CHECK(count_of(text, out) == 1);
        CHECK(count_of(text, "Guideline 4 (entity summarization)") >= 1);
    }
}

TEST_CASE("plan JSON round trips and rejects unknown fields") {
    const EerSchema s = example_schema();
    for (const char* task : {"PREDICT_LTV", "PREDICT_PRIORITY"}) {
        const auto plan = compile_plan(s, *s.find_task(task));
        const auto j = plan_to_json(plan);
        CHECK(plan_from_json(j) == plan);
        CHECK(plan_from_json(nlohmann::json::parse(j.dump())) == plan);

        auto extra = j;
        extra["surprise"] = 1;
        CHECK_THROWS_AS(plan_from_json(extra), Error);
        auto step_extra = j;
        step_extra["steps"][0]["surprise"] = true;
        CHECK_THROWS_AS(plan_from_json(step_extra), Error);
        auto missing = j;
        missing.erase("steps");
        CHECK_THROWS_AS(plan_from_json(missing), Error);
        auto bad_kind = j;
        bad_kind["steps"][0]["kind"] = "teleport";
        CHECK_THROWS_AS(plan_from_json(bad_kind), Error);
    }
    CHECK_THROWS_AS(plan_from_json(nlohmann::json::array()), Error);
}

TEST_CASE("guideline titles") {
    CHECK(guideline_title("G4") == "Guideline 4 (entity summarization)");
    CHECK_FALSE(guideline_title("G1").empty());
}

TEST_CASE("random schemas: one summary per to-many edge, deepest first, and one emit per output") {
    std::mt19937_64 rng(31337);
    for (int i = 0; i < 200; ++i) {
        const auto rc = t::random_case(rng);
        const auto plan = compile_plan(rc.schema, rc.schema.tasks[0]);
        INFO(print_schema(rc.schema).text);
        std::size_t to_many = 0;
        for (const auto& e : plan.binding.edges) to_many += e.to_many;
        std::size_t summaries = 0, emits = 0, imputes = 0;
        std::size_t last_depth = 1000;
        bool seen_split = false, seen_emit = false;
        for (const auto& st : plan.steps) {
            if (auto* sc = std::get_if<SummarizeChild>(&st.op)) {
                ++summaries;
                const std::size_t d = plan.binding.depth_of(sc->child);
                CHECK(d <= last_depth);
                last_depth = d;
                CHECK(plan.binding.edge_to(sc->child)->to_many);
            }
            if (std::holds_alternative<SubtypeSplit>(st.op)) seen_split = true;
            if (std::holds_alternative<ImputeColumns>(st.op)) {
                ++imputes;
                CHECK_FALSE(seen_emit);
            }
            if (std::holds_alternative<EmitDataset>(st.op)) {
                ++emits;
                seen_emit = true;
            }
            for (const auto& g : st.guidelines) CHECK(std::regex_match(g, std::regex("G[1-5]")));
        }
        CHECK(summaries == to_many);
        CHECK(emits == plan.outputs.size());
        CHECK(imputes == plan.outputs.size());
        CHECK(seen_split == rc.has_split);
        CHECK(plan.outputs.size() == (rc.has_split ? 2u : 1u));
        CHECK(plan_from_json(plan_to_json(plan)) == plan);
    }
}
