#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmml/binder.hpp"
#include "cmml/planner.hpp"
#include "cmml/table.hpp"

namespace cmml {

enum class TransformKind {
    raw,
    derived,
    count,
    sum,
    mean,
    min,
    max,
    category_count,
    true_count,
    concat,
    imputed_mean,
    imputed_mode,
    imputed_const,
};

std::string_view transform_name(TransformKind k);
std::optional<TransformKind> parse_transform(std::string_view s);

/// Category text reduced to [A-Za-z0-9_]; empty text becomes "EMPTY".
std::string sanitize_category(std::string_view text);

/// Column name for a feature. `origins` lists the entities in spanning-tree
/// order; for summaries the first one is the summarized child.
std::string feature_name(std::string_view base, const std::vector<std::string>& origins, TransformKind kind,
                         std::string_view category = {});

enum class FeatureRole { key, target, predictor };
std::string_view role_name(FeatureRole r);

struct FeatureRecord {
    std::string name;
    FeatureRole role = FeatureRole::predictor;
    std::vector<std::string> origin_entities;
    std::vector<std::string> source_attributes;  // "ENTITY.attr"
    TransformKind transform = TransformKind::raw;
    nlohmann::json params = nlohmann::json::object();
    std::vector<std::string> guidelines;
    std::size_t imputed_cells = 0;

    nlohmann::json to_json() const;
};

struct TrainingDataset {
    std::string name;
    std::optional<std::string> subtype;
    Table table;  // key columns first, target column last
    std::string target_column;
    std::vector<FeatureRecord> features;  // one per column, same order
    std::size_t dropped_null_target = 0;
    std::optional<Table> holdout;
};

struct ExecuteOptions {
    std::optional<std::filesystem::path> out_dir;  // nothing is written when absent
    double holdout = 0.0;                          // fraction of keys routed to <dataset>_holdout.csv
    std::string schema_sha256;
    std::string tool_version;
    std::optional<std::uint64_t> seed;  // recorded only
    Diagnostics upstream;               // binder findings to carry into the manifest
};

struct ExecuteResult {
    std::vector<TrainingDataset> datasets;
    nlohmann::json manifest;
    Diagnostics diagnostics;
};

/// Runs the plan's steps in order. With an output directory, every file is
/// written to a scratch directory first and moved into place only after all
/// writes succeeded.
ExecuteResult execute(const TransformationPlan& plan, const BoundModel& bound, const ExecuteOptions& options);

/// Column-wise imputation of unknown cells; not-applicable cells are kept.
/// Updates the records' transform, guidelines and imputed_cells.
void impute(Table& table, std::vector<FeatureRecord>& features, const ImputeStrategy& strategy, Diagnostics& diags);

/// Left-join chain along the spanning tree at the deepest grain, without
/// summarization. Rows follow root key order, then child key order.
Table flatten_naive(const BoundModel& bound, const TargetBinding& binding);

/// True when `key` lands in the holdout share; depends on the key text only.
bool in_holdout(const KeyTuple& key, double fraction);

/// Writes to `dir` through a scratch directory; removes the scratch on failure.
void write_files_atomically(const std::filesystem::path& dir, const std::vector<std::pair<std::string, std::string>>& files);

}  // namespace cmml
