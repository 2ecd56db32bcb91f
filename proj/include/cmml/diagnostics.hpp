#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cmml {

/// Thrown for usage errors and unrecoverable I/O or data problems. Validation
/// findings are reported as Diagnostic values instead.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Severity : std::uint8_t { error, warning, note };

struct SourceLocation {
    std::string origin;      // file path, table name or "<inline>"
    std::size_t line = 0;    // 1-based; 0 = not applicable
    std::size_t column = 0;  // 1-based
    std::size_t offset = 0;  // byte offset into the source

    std::string to_string() const;
    bool operator==(const SourceLocation&) const = default;
};

struct Diagnostic {
    Severity severity = Severity::error;
    std::string code;
    std::string message;
    SourceLocation location;

    std::string to_string() const;
    bool operator==(const Diagnostic&) const = default;
};

using Diagnostics = std::vector<Diagnostic>;

std::string_view severity_name(Severity s);

bool has_errors(const Diagnostics& diags);
std::size_t count_errors(const Diagnostics& diags);

/// {severity, code, message, location} per diagnostic.
nlohmann::json diagnostics_to_json(const Diagnostics& diags);

}  // namespace cmml
