#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmml/diagnostics.hpp"
#include "cmml/value.hpp"

namespace cmml {

struct Column {
    std::string name;
    AttributeKind kind = AttributeKind::text;
    bool operator==(const Column&) const = default;
};

using Row = std::vector<Value>;
using KeyTuple = std::vector<std::string>;

/// Typed rows. Every row has one cell per column; cells match the column kind
/// or are null.
struct Table {
    std::string name;
    std::vector<Column> columns;
    std::vector<Row> rows;
    std::vector<std::string> key_columns;
    std::string content_sha256;  // of the bytes the table was read from; not part of equality

    std::optional<std::size_t> column_index(std::string_view column) const;
    std::size_t require_column(std::string_view column) const;  // throws Error
    const Value& cell(std::size_t row, std::string_view column) const;
    KeyTuple key_of(std::size_t row) const;
    std::size_t row_count() const { return rows.size(); }

    /// Appends a column; `values` must have one entry per row.
    void add_column(Column column, std::vector<Value> values);

    /// Stable sort by key tuple using natural_less per component.
    void sort_by_key();

    bool operator==(const Table& o) const {
        return name == o.name && columns == o.columns && rows == o.rows && key_columns == o.key_columns;
    }
};

/// Tables by entity or membership-table name.
struct DataBundle {
    std::map<std::string, Table> tables;

    const Table* find(std::string_view name) const;
};

bool key_less(const KeyTuple& a, const KeyTuple& b);

struct CsvReadResult {
    Table table;
    Diagnostics diagnostics;
};

/// Parses RFC 4180 text. The header must name exactly the declared columns
/// (any order); the table keeps the declared order. Unquoted empty fields are
/// null; a quoted empty field is the empty string for string kinds.
CsvReadResult read_csv_text(std::string_view text, std::string origin, const std::vector<Column>& declared);

/// Reads a file; throws Error when it cannot be opened. The table name is the
/// file stem and content_sha256 covers the raw bytes.
CsvReadResult read_csv(const std::filesystem::path& path, const std::vector<Column>& declared);

/// Header plus one line per row, fields quoted only when needed, "\n" line ends.
std::string to_csv(const Table& table);
void write_csv(const Table& table, const std::filesystem::path& path);

std::size_t distinct_key_count(const Table& table);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace cmml
