#pragma once

#include <filesystem>
#include <optional>

#include "cmml/binder.hpp"
#include "cmml/diagnostics.hpp"
#include "cmml/eer.hpp"
#include "cmml/schema_dsl.hpp"

namespace cmml {

/// A schema file, parsed, validated and rewritten, optionally bound to data.
struct Project {
    SchemaSource source;
    std::string schema_sha256;
    EerSchema schema;  // N:M relationships already rewritten
    Diagnostics diagnostics;
    std::optional<BoundModel> bound;

    bool ok() const { return !has_errors(diagnostics); }
};

/// Stops at the first stage that reports errors. Throws Error only when the
/// schema file cannot be read.
Project load_project(const std::filesystem::path& schema_path, const std::optional<std::filesystem::path>& data_dir,
                     Clock clock);

/// CMML_TODAY=YYYY-MM-DD when set, otherwise the system date. Throws Error on
/// a malformed value.
Clock clock_from_environment();

}  // namespace cmml
