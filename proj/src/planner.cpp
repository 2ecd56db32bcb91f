#include "cmml/planner.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace cmml {

namespace {

using nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<std::string> tags(std::initializer_list<const char*> list) { return {list.begin(), list.end()}; }

bool is_aggregate_derivation(const Attribute& a) { return a.derived && contains_aggregate(*a.derivation); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(sep) : "") + parts[i];
    return out;
}

std::string agg_list(const std::vector<AggregateKind>& agg) {
    std::vector<std::string> names;
    for (auto k : agg) names.emplace_back(aggregate_name(k));
    return join(names, ", ");
}

}  // namespace

std::string PlanStep::kind() const {
    return std::visit(overloaded{[](const DeriveAttr&) { return "derive_attr"; },
                                 [](const SummarizeChild&) { return "summarize_child"; },
                                 [](const JoinOneToOne&) { return "join_one_to_one"; },
                                 [](const SubtypeSplit&) { return "subtype_split"; },
                                 [](const ImputeColumns&) { return "impute_columns"; },
                                 [](const EmitDataset&) { return "emit_dataset"; }},
                      op);
}

std::string guideline_title(std::string_view tag) {
    if (tag == "G1") return "Guideline 1 (feature labeling)";
    if (tag == "G2") return "Guideline 2 (derived features)";
    if (tag == "G3") return "Guideline 3 (imputation of applicable but unknown values)";
    if (tag == "G4") return "Guideline 4 (entity summarization)";
    if (tag == "G5") return "Guideline 5 (one training dataset per subtype)";
    return std::string(tag);
}

std::vector<std::string> superseded_attributes(const EntityType& entity) {
    std::set<std::string> read;
    for (const auto& a : entity.attributes)
        if (a.derived && !contains_aggregate(*a.derivation))
            for (const auto& n : referenced_attributes(*a.derivation)) read.insert(n);
    std::vector<std::string> out;
    for (const auto& a : entity.attributes)
        if (!a.derived && !a.is_key && read.count(a.name)) out.push_back(a.name);
    return out;
}

// ---------------------------------------------------------------------------
// compile

TransformationPlan compile_plan(const EerSchema& schema, const TaskDecl& task, const PlanOverrides& overrides) {
    for (const auto& r : schema.relationships)
        if (r.is_many_to_many()) throw Error("relationship " + r.name + " must be rewritten before planning");

    TransformationPlan plan;
    plan.task = task.name;
    plan.binding = resolve_target(schema, task);
    const std::string& root = plan.binding.target_entity;
    const EntityType& root_entity = *schema.find_entity(root);
    const Attribute& target = *root_entity.find(task.target_attribute);

    if (target.derived && contains_aggregate(*target.derivation) && target.kind != AttributeKind::numeric)
        throw Error("task " + task.name + ": aggregate-derived target " + root + "." + target.name + " is " +
                    std::string(kind_name(target.kind)) + ", not numeric");

    PlanOptions& opt = plan.options;
    if (auto a = overrides.agg ? overrides.agg : task.agg) opt.agg = *a;
    if (auto k = overrides.top_k ? overrides.top_k : task.top_k) opt.top_k = *k;
    if (auto i = overrides.impute ? overrides.impute : task.impute) opt.impute = *i;
    if (opt.top_k < 1) throw Error("top_k must be positive");

    const auto gens = schema.generalizations_of(root);
    const Generalization* split = nullptr;
    if (auto s = overrides.split_by ? overrides.split_by : task.split_by) {
        split = schema.find_generalization(*s);
        if (!split) throw Error("task " + task.name + ": unknown generalization " + *s);
        if (split->supertype != root)
            throw Error("task " + task.name + ": generalization " + *s + " specializes " + split->supertype +
                        ", not the target-bearing entity " + root);
    } else if (gens.size() == 1) {
        split = gens.front();
        plan.notes.push_back("split by " + split->name + ", the only generalization of " + root);
    } else if (gens.size() > 1) {
        plan.notes.push_back(root + " has " + std::to_string(gens.size()) +
                             " generalizations and none was chosen; emitting a single dataset");
    }
    if (split) opt.split_by = split->name;

    if (plan.binding.predictor_entities.size() == 1) {
        bool predictor = false;
        for (const auto& a : root_entity.attributes)
            if (!a.is_key && a.name != target.name) predictor = true;
        for (const auto* g : gens)
            for (const auto& st : g->subtypes)
                if (!st.attributes.empty()) predictor = true;
        if (!predictor) throw Error("task " + task.name + ": " + root + " offers no predictor attributes");
    }

    auto derive = [&](bool aggregate_pass) {
        for (const auto& name : plan.binding.predictor_entities) {
            const bool is_root = name == root;
            if (aggregate_pass && !is_root) continue;
            const EntityType& e = *schema.find_entity(name);
            for (const auto& a : e.attributes) {
                if (!a.derived) continue;
                const bool agg = is_aggregate_derivation(a);
                const bool now = aggregate_pass ? agg : (!agg || !is_root);
                if (now) plan.steps.push_back({DeriveAttr{name, a.name, std::nullopt, agg}, tags({"G1", "G2"})});
            }
            if (!is_root) continue;
            for (const auto* g : gens)
                for (const auto& st : g->subtypes)
                    for (const auto& a : st.attributes) {
                        if (!a.derived || is_aggregate_derivation(a) != aggregate_pass) continue;
                        plan.steps.push_back(
                            {DeriveAttr{name, a.name, st.name, is_aggregate_derivation(a)}, tags({"G1", "G2"})});
                    }
        }
    };

    derive(false);

    auto edges = plan.binding.edges;
    std::stable_sort(edges.begin(), edges.end(), [](const TreeEdge& a, const TreeEdge& b) { return a.depth > b.depth; });
    for (const auto& e : edges) {
        if (e.to_many)
            plan.steps.push_back({SummarizeChild{e.parent, e.child, e.relationship, opt.agg, opt.top_k}, tags({"G1", "G4"})});
        else if (e.parent != root)
            plan.steps.push_back({JoinOneToOne{e.parent, e.child, e.relationship}, tags({"G1"})});
    }

    derive(true);

    for (const auto& e : plan.binding.edges)
        if (!e.to_many && e.parent == root)
            plan.steps.push_back({JoinOneToOne{e.parent, e.child, e.relationship}, tags({"G1"})});

    std::vector<std::pair<std::string, std::optional<std::string>>> datasets;
    if (split) {
        SubtypeSplit s{split->name, {}};
        for (const auto& st : split->subtypes) {
            s.subtypes.push_back(st.name);
            datasets.emplace_back(task.name + "_" + st.name, st.name);
        }
        plan.steps.push_back({std::move(s), tags({"G1", "G5"})});
    } else {
        datasets.emplace_back(task.name, std::nullopt);
    }

    if (opt.impute.kind != ImputeStrategy::Kind::none)
        for (const auto& d : datasets) plan.steps.push_back({ImputeColumns{d.first, opt.impute}, tags({"G3"})});
    for (const auto& d : datasets) {
        plan.steps.push_back({EmitDataset{d.first, d.second}, {}});
        plan.outputs.push_back(d.first);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// explain

std::string explain_plan(const TransformationPlan& plan) {
    std::ostringstream out;
    const std::string& root = plan.binding.target_entity;
    out << "Target " << root << "." << plan.binding.target_attribute << "; one row per " << root
        << " instance in every dataset.\n";
    out << "Predictor entities: " << join(plan.binding.predictor_entities, ", ") << ".\n";
    if (!plan.binding.skipped_relationships.empty())
        out << "Relationships closing a cycle, not followed: " << join(plan.binding.skipped_relationships, ", ") << ".\n";
    if (!plan.binding.excluded_entities.empty())
        out << "Entities unreachable from " << root << ", not used: " << join(plan.binding.excluded_entities, ", ")
            << ".\n";
    out << guideline_title("G1") << " applies to every feature: each column name carries its entity of origin.\n";
    for (const auto& n : plan.notes) out << "Note: " << n << ".\n";
    out << "\n";

    // Datasets are named only in their emit paragraph.
    std::map<std::string, std::size_t> emit_step;
    for (std::size_t i = 0; i < plan.steps.size(); ++i)
        if (const auto* e = std::get_if<EmitDataset>(&plan.steps[i].op)) emit_step[e->name] = i + 1;

    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const PlanStep& step = plan.steps[i];
        std::vector<std::string> titles;
        for (const auto& g : step.guidelines) titles.push_back(guideline_title(g));
        out << i + 1 << ". ";
        std::visit(
            overloaded{
                [&](const DeriveAttr& d) {
                    out << "Derive " << d.entity << "." << d.attribute;
                    if (d.subtype) out << " for members of " << *d.subtype;
                    out << (d.aggregate ? " from the related rows of " + d.entity : " from the row's own values")
                        << ", producing column " << d.entity << "_" << d.attribute << ".";
                },
                [&](const SummarizeChild& s) {
                    out << "Summarize " << s.child << " into " << s.parent << " through " << s.relationship
                        << " (entity summarization): one row per " << s.parent << " with " << s.child
                        << "_count, numeric attributes as " << s.child << "_<attribute>_<" << agg_list(s.agg)
                        << ">, category counts " << s.child << "_<attribute>_<category>_count for the " << s.top_k
                        << " most frequent categories plus an OTHER count when more categories exist, boolean true counts, date min "
                           "and max, and text concatenated in key order.";
                },
                [&](const JoinOneToOne& j) {
                    out << "Join the single " << j.right << " partner onto " << j.left << " through " << j.relationship
                        << "; columns keep the " << j.right << "_ prefix and a missing partner yields not-applicable "
                           "values.";
                },
                [&](const SubtypeSplit& s) {
                    out << "Split by " << s.generalization << " into one dataset per subtype (" << join(s.subtypes, ", ")
                        << "); each keeps the shared columns and only its own subtype's columns, and an instance in "
                           "several subtypes appears in each of their datasets.";
                },
                [&](const ImputeColumns& c) {
                    out << "Impute unknown values with " << c.strategy.to_string()
                        << " in the dataset emitted by step " << emit_step[c.dataset]
                        << ", with statistics taken from that dataset alone; not-applicable values stay empty.";
                },
                [&](const EmitDataset& e) {
                    out << "Emit " << e.name;
                    if (e.subtype) out << " for members of the subtype";
                    out << ", sorted by key, with the target column " << root << "_" << plan.binding.target_attribute
                        << " last.";
                },
            },
            step.op);
        if (!titles.empty()) out << " Applies " << join(titles, ", ") << ".";
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json agg_to_json(const std::vector<AggregateKind>& agg) {
    json a = json::array();
    for (auto k : agg) a.push_back(std::string(aggregate_name(k)));
    return a;
}

void expect_fields(const json& j, std::string_view what, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw Error(std::string(what) + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw Error("unknown field '" + k + "' in " + std::string(what));
}

template <class T>
T field(const json& j, const char* name, std::string_view what) {
    if (!j.contains(name)) throw Error("missing field '" + std::string(name) + "' in " + std::string(what));
    try {
        return j.at(name).get<T>();
    } catch (const json::exception& e) {
        throw Error("bad field '" + std::string(name) + "' in " + std::string(what) + ": " + e.what());
    }
}

std::optional<std::string> optional_string(const json& j, const char* name) {
    if (!j.contains(name) || j.at(name).is_null()) return std::nullopt;
    if (!j.at(name).is_string()) throw Error(std::string("field '") + name + "' must be a string or null");
    return j.at(name).get<std::string>();
}

std::vector<AggregateKind> agg_from_json(const json& j) {
    if (!j.is_array()) throw Error("agg must be an array");
    std::vector<AggregateKind> out;
    for (const auto& v : j) {
        auto k = v.is_string() ? parse_aggregate(v.get<std::string>()) : std::nullopt;
        if (!k) throw Error("unknown aggregate " + v.dump());
        out.push_back(*k);
    }
    return out;
}

ImputeStrategy impute_from_json(const json& j) {
    if (!j.is_string()) throw Error("impute must be a string");
    auto s = ImputeStrategy::parse(j.get<std::string>());
    if (!s) throw Error("unknown impute strategy " + j.dump());
    return *s;
}

json step_to_json(const PlanStep& s) {
    json j{{"kind", s.kind()}, {"guidelines", s.guidelines}};
    std::visit(overloaded{
                   [&](const DeriveAttr& d) {
                       j["entity"] = d.entity;
                       j["attribute"] = d.attribute;
                       j["subtype"] = d.subtype ? json(*d.subtype) : json(nullptr);
                       j["aggregate"] = d.aggregate;
                   },
                   [&](const SummarizeChild& c) {
                       j["parent"] = c.parent;
                       j["child"] = c.child;
                       j["relationship"] = c.relationship;
                       j["agg"] = agg_to_json(c.agg);
                       j["top_k"] = c.top_k;
                   },
                   [&](const JoinOneToOne& c) {
                       j["left"] = c.left;
                       j["right"] = c.right;
                       j["relationship"] = c.relationship;
                   },
                   [&](const SubtypeSplit& c) {
                       j["generalization"] = c.generalization;
                       j["subtypes"] = c.subtypes;
                   },
                   [&](const ImputeColumns& c) {
                       j["dataset"] = c.dataset;
                       j["strategy"] = c.strategy.to_string();
                   },
                   [&](const EmitDataset& c) {
                       j["name"] = c.name;
                       j["subtype"] = c.subtype ? json(*c.subtype) : json(nullptr);
                   },
               },
               s.op);
    return j;
}

PlanStep step_from_json(const json& j) {
    const std::string what = "plan step";
    if (!j.is_object()) throw Error("plan step must be a JSON object");
    const auto kind = field<std::string>(j, "kind", what);
    PlanStep s;
    s.guidelines = field<std::vector<std::string>>(j, "guidelines", what);
    if (kind == "derive_attr") {
        expect_fields(j, what, {"kind", "guidelines", "entity", "attribute", "subtype", "aggregate"});
        s.op = DeriveAttr{field<std::string>(j, "entity", what), field<std::string>(j, "attribute", what),
                          optional_string(j, "subtype"), field<bool>(j, "aggregate", what)};
    } else if (kind == "summarize_child") {
        expect_fields(j, what, {"kind", "guidelines", "parent", "child", "relationship", "agg", "top_k"});
        s.op = SummarizeChild{field<std::string>(j, "parent", what), field<std::string>(j, "child", what),
                              field<std::string>(j, "relationship", what), agg_from_json(j.at("agg")),
                              field<int>(j, "top_k", what)};
    } else if (kind == "join_one_to_one") {
        expect_fields(j, what, {"kind", "guidelines", "left", "right", "relationship"});
        s.op = JoinOneToOne{field<std::string>(j, "left", what), field<std::string>(j, "right", what),
                            field<std::string>(j, "relationship", what)};
    } else if (kind == "subtype_split") {
        expect_fields(j, what, {"kind", "guidelines", "generalization", "subtypes"});
        s.op = SubtypeSplit{field<std::string>(j, "generalization", what),
                            field<std::vector<std::string>>(j, "subtypes", what)};
    } else if (kind == "impute_columns") {
        expect_fields(j, what, {"kind", "guidelines", "dataset", "strategy"});
        if (!j.contains("strategy")) throw Error("missing field 'strategy' in plan step");
        s.op = ImputeColumns{field<std::string>(j, "dataset", what), impute_from_json(j.at("strategy"))};
    } else if (kind == "emit_dataset") {
        expect_fields(j, what, {"kind", "guidelines", "name", "subtype"});
        s.op = EmitDataset{field<std::string>(j, "name", what), optional_string(j, "subtype")};
    } else {
        throw Error("unknown plan step kind '" + kind + "'");
    }
    return s;
}

}  // namespace

json plan_to_json(const TransformationPlan& plan) {
    const auto& b = plan.binding;
    json edges = json::array();
    for (const auto& e : b.edges)
        edges.push_back({{"parent", e.parent},
                         {"child", e.child},
                         {"relationship", e.relationship},
                         {"to_many", e.to_many},
                         {"depth", e.depth}});
    json steps = json::array();
    for (const auto& s : plan.steps) steps.push_back(step_to_json(s));
    const auto& o = plan.options;
    return json{
        {"task", plan.task},
        {"target", b.target_entity + "." + b.target_attribute},
        {"naming_policy", plan.naming_policy},
        {"binding",
         {{"predictor_entities", b.predictor_entities},
          {"edges", edges},
          {"skipped_relationships", b.skipped_relationships},
          {"excluded_entities", b.excluded_entities}}},
        {"steps", steps},
        {"outputs", plan.outputs},
        {"options",
         {{"agg", agg_to_json(o.agg)},
          {"top_k", o.top_k},
          {"impute", o.impute.to_string()},
          {"split_by", o.split_by ? json(*o.split_by) : json(nullptr)}}},
        {"notes", plan.notes},
    };
}

TransformationPlan plan_from_json(const json& j) {
    expect_fields(j, "plan", {"task", "target", "naming_policy", "binding", "steps", "outputs", "options", "notes"});
    TransformationPlan p;
    p.task = field<std::string>(j, "task", "plan");
    const auto target = field<std::string>(j, "target", "plan");
    const auto dot = target.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == target.size())
        throw Error("plan target must look like ENTITY.attribute");
    p.binding.target_entity = target.substr(0, dot);
    p.binding.target_attribute = target.substr(dot + 1);
    p.naming_policy = field<std::string>(j, "naming_policy", "plan");

    if (!j.contains("binding")) throw Error("missing field 'binding' in plan");
    const json& b = j.at("binding");
    expect_fields(b, "binding", {"predictor_entities", "edges", "skipped_relationships", "excluded_entities"});
    p.binding.predictor_entities = field<std::vector<std::string>>(b, "predictor_entities", "binding");
    p.binding.skipped_relationships = field<std::vector<std::string>>(b, "skipped_relationships", "binding");
    p.binding.excluded_entities = field<std::vector<std::string>>(b, "excluded_entities", "binding");
    if (!b.contains("edges") || !b.at("edges").is_array()) throw Error("binding edges must be an array");
    for (const auto& e : b.at("edges")) {
        expect_fields(e, "edge", {"parent", "child", "relationship", "to_many", "depth"});
        p.binding.edges.push_back({field<std::string>(e, "parent", "edge"), field<std::string>(e, "child", "edge"),
                                   field<std::string>(e, "relationship", "edge"), field<bool>(e, "to_many", "edge"),
                                   field<std::size_t>(e, "depth", "edge")});
    }

    if (!j.contains("steps") || !j.at("steps").is_array()) throw Error("plan steps must be an array");
    for (const auto& s : j.at("steps")) p.steps.push_back(step_from_json(s));
    p.outputs = field<std::vector<std::string>>(j, "outputs", "plan");
    p.notes = field<std::vector<std::string>>(j, "notes", "plan");

    if (!j.contains("options")) throw Error("missing field 'options' in plan");
    const json& o = j.at("options");
    expect_fields(o, "options", {"agg", "top_k", "impute", "split_by"});
    if (o.contains("agg")) p.options.agg = agg_from_json(o.at("agg"));
    if (o.contains("top_k")) p.options.top_k = field<int>(o, "top_k", "options");
    if (o.contains("impute")) p.options.impute = impute_from_json(o.at("impute"));
    p.options.split_by = optional_string(o, "split_by");
    return p;
}

}  // namespace cmml
