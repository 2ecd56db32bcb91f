#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmml/diagnostics.hpp"
#include "cmml/eer.hpp"
#include "cmml/expr.hpp"
#include "cmml/table.hpp"

namespace cmml {

/// Columns expected in `<NAME>.csv` for an entity or a `from table` subtype:
/// stored attributes, `when`-subtype attributes kept in the supertype table,
/// and foreign-key columns the table holds.
std::vector<Column> expected_columns(const EerSchema& schema, std::string_view table);

/// Names of every table the schema needs (entities, then membership tables).
std::vector<std::string> required_tables(const EerSchema& schema);

struct BundleLoad {
    DataBundle bundle;
    Diagnostics diagnostics;
};

/// Reads `<NAME>.csv` (case-sensitive) for every required table under `dir`.
/// A missing file is reported as a diagnostic, not thrown.
BundleLoad load_bundle(const EerSchema& schema, const std::filesystem::path& dir);

/// Row-level links for one relationship, by row index.
struct RelationshipIndex {
    std::vector<std::optional<std::size_t>> referenced_row;  // per holder row
    std::vector<std::vector<std::size_t>> holder_rows;       // per referenced row
};

/// Where a subtype's own attribute values live.
struct SubtypeMembership {
    std::string generalization;
    std::string subtype;
    std::vector<bool> member;                            // per supertype row
    std::vector<std::optional<std::size_t>> table_row;   // `from table`: row in the membership table
};

/// A schema bound to data. Nulls in the bundle carry their classification.
struct BoundModel {
    EerSchema schema;
    DataBundle bundle;
    Clock clock;
    std::map<std::string, RelationshipIndex> fk_index;
    std::map<std::string, std::map<KeyTuple, std::size_t>> key_index;  // entity → key → row
    std::map<std::string, SubtypeMembership> subtype_membership;       // by subtype name

    const Table& table(std::string_view name) const;
    const EntityType& entity(std::string_view name) const;

    /// Partner rows of `row` of `entity` through `relationship`.
    std::vector<std::size_t> partners(std::string_view relationship, std::string_view entity, std::size_t row) const;

    /// Subtypes of `generalization` that the supertype row belongs to, in declaration order.
    std::vector<std::string> subtypes_of(std::string_view generalization, std::size_t row) const;
    bool is_member(std::string_view subtype, std::size_t supertype_row) const;

    /// Classification of a null cell; nullopt when the cell holds a value.
    std::optional<NullKind> null_class(std::string_view table, std::size_t row, std::string_view column) const;

    /// Value of an entity attribute for one row, evaluating derivations on
    /// demand. Subtype attributes resolve through the membership.
    Value attribute_value(std::string_view entity, std::size_t row, std::string_view attribute,
                          Diagnostics* diags = nullptr) const;

    /// Applies the null classification rules to a null produced for `attribute`
    /// (a stored or derived attribute of `entity`, or a subtype attribute).
    NullKind classify_null(std::string_view entity, std::size_t row, std::string_view attribute,
                           Diagnostics* diags = nullptr) const;
};

struct BindResult {
    std::optional<BoundModel> model;  // absent only when tables are missing or malformed
    Diagnostics diagnostics;

    bool ok() const { return model.has_value() && !has_errors(diagnostics); }
};

/// Validates integrity (keys, foreign keys, participation, disjointness),
/// resolves subtype membership and classifies every null. The schema must be
/// free of N:M relationships.
BindResult bind(const EerSchema& schema, DataBundle bundle, Clock clock);

struct ParticipationReport {
    std::string entity;        // whose instances are counted
    std::string partner;       // entity on the other end
    Cardinality declared;      // partners allowed per instance
    std::size_t instances = 0;
    std::size_t observed_min = 0;
    std::size_t observed_max = 0;
    std::vector<KeyTuple> violations;

    bool conformant() const { return violations.empty(); }
};

struct RelationshipReport {
    std::string relationship;
    ParticipationReport fanout;   // children per referenced ("parent") instance
    ParticipationReport fanin;    // parents per holder ("child") instance

    bool conformant() const { return fanout.conformant() && fanin.conformant(); }
};

std::vector<RelationshipReport> cardinality_report(const BoundModel& bound);
nlohmann::json cardinality_report_to_json(const std::vector<RelationshipReport>& report);

}  // namespace cmml
