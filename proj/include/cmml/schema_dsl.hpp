#pragma once

#include <filesystem>
#include <string>

#include "cmml/diagnostics.hpp"
#include "cmml/eer.hpp"

namespace cmml {

struct SchemaSource {
    std::string text;
    std::string origin = "<inline>";

    static SchemaSource from_file(const std::filesystem::path& path);
};

struct ParseResult {
    EerSchema schema;
    Diagnostics diagnostics;

    bool ok() const { return !has_errors(diagnostics); }
};

/// Parses `.cmml` text. Declarations are kept in source order; after an error
/// the parser skips to the next top-level declaration and keeps going.
ParseResult parse_schema(const SchemaSource& source);

/// Canonical text: entities, relationships, generalizations, tasks, each in
/// schema order. parse_schema(print_schema(s)).schema == s for valid schemas.
SchemaSource print_schema(const EerSchema& schema);

}  // namespace cmml
