#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cmml/eer.hpp"

namespace cmml {

/// Values given on the command line; each one overrides the task's clause.
struct PlanOverrides {
    std::optional<std::string> split_by;
    std::optional<std::vector<AggregateKind>> agg;
    std::optional<int> top_k;
    std::optional<ImputeStrategy> impute;
};

/// Options after resolving overrides, task clauses and defaults.
struct PlanOptions {
    std::vector<AggregateKind> agg{AggregateKind::mean, AggregateKind::sum, AggregateKind::min, AggregateKind::max};
    int top_k = 20;
    ImputeStrategy impute;
    std::optional<std::string> split_by;  // the generalization actually used

    bool operator==(const PlanOptions&) const = default;
};

struct DeriveAttr {
    std::string entity;
    std::string attribute;
    std::optional<std::string> subtype;  // set for a subtype's own attribute
    bool aggregate = false;
    bool operator==(const DeriveAttr&) const = default;
};

struct SummarizeChild {
    std::string parent;
    std::string child;
    std::string relationship;
    std::vector<AggregateKind> agg;
    int top_k = 20;
    bool operator==(const SummarizeChild&) const = default;
};

/// Brings the single partner's columns into `left`.
struct JoinOneToOne {
    std::string left;
    std::string right;
    std::string relationship;
    bool operator==(const JoinOneToOne&) const = default;
};

struct SubtypeSplit {
    std::string generalization;
    std::vector<std::string> subtypes;
    bool operator==(const SubtypeSplit&) const = default;
};

struct ImputeColumns {
    std::string dataset;
    ImputeStrategy strategy;
    bool operator==(const ImputeColumns&) const = default;
};

struct EmitDataset {
    std::string name;
    std::optional<std::string> subtype;
    bool operator==(const EmitDataset&) const = default;
};

struct PlanStep {
    std::variant<DeriveAttr, SummarizeChild, JoinOneToOne, SubtypeSplit, ImputeColumns, EmitDataset> op;
    std::vector<std::string> guidelines;  // "G1".."G5"

    std::string kind() const;
    bool operator==(const PlanStep&) const = default;
};

struct TransformationPlan {
    std::string task;
    TargetBinding binding;
    std::string naming_policy = "G1";
    std::vector<PlanStep> steps;
    std::vector<std::string> outputs;
    PlanOptions options;
    std::vector<std::string> notes;

    bool operator==(const TransformationPlan&) const = default;
};

/// Resolves options and orders the steps. `schema` must be free of N:M
/// relationships. Throws Error for an unusable task.
TransformationPlan compile_plan(const EerSchema& schema, const TaskDecl& task, const PlanOverrides& overrides = {});

/// One numbered paragraph per step.
std::string explain_plan(const TransformationPlan& plan);

nlohmann::json plan_to_json(const TransformationPlan& plan);
/// Throws Error on malformed input or unknown fields.
TransformationPlan plan_from_json(const nlohmann::json& j);

std::string guideline_title(std::string_view tag);

/// Stored attributes of `entity` that a non-aggregate derivation of the same
/// entity reads; the derived value replaces them as a feature.
std::vector<std::string> superseded_attributes(const EntityType& entity);

}  // namespace cmml
