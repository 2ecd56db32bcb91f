#include "cmml/pipeline.hpp"

#include <chrono>
#include <cstdlib>

#include "cmml/table.hpp"

namespace cmml {

Project load_project(const std::filesystem::path& schema_path, const std::optional<std::filesystem::path>& data_dir,
                     Clock clock) {
    Project p;
    p.source = SchemaSource::from_file(schema_path);
    p.schema_sha256 = sha256_hex(p.source.text);
    auto parsed = parse_schema(p.source);
    p.diagnostics = std::move(parsed.diagnostics);
    if (!p.ok()) return p;
    auto report = validate_schema(parsed.schema);
    p.diagnostics.insert(p.diagnostics.end(), report.diagnostics.begin(), report.diagnostics.end());
    if (!p.ok()) return p;
    try {
        p.schema = rewrite_many_to_many(parsed.schema);
    } catch (const Error& e) {
        p.diagnostics.push_back({Severity::error, "rewrite-collision", e.what(), {p.source.origin}});
        return p;
    }
    if (!data_dir) return p;
    auto load = load_bundle(p.schema, *data_dir);
    p.diagnostics.insert(p.diagnostics.end(), load.diagnostics.begin(), load.diagnostics.end());
    if (!p.ok()) return p;
    auto bound = bind(p.schema, std::move(load.bundle), clock);
    p.diagnostics.insert(p.diagnostics.end(), bound.diagnostics.begin(), bound.diagnostics.end());
    if (p.ok()) p.bound = std::move(bound.model);
    return p;
}

Clock clock_from_environment() {
    if (const char* env = std::getenv("CMML_TODAY"); env && *env) {
        auto d = Date::parse_iso(env);
        if (!d) throw Error("CMML_TODAY must look like YYYY-MM-DD, got '" + std::string(env) + "'");
        return Clock{*d};
    }
    const auto today = std::chrono::floor<std::chrono::days>(std::chrono::system_clock::now());
    return Clock{Date{static_cast<std::int32_t>(today.time_since_epoch().count())}};
}

}  // namespace cmml
