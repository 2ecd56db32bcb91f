#include "cmml/diagnostics.hpp"

#include <algorithm>

namespace cmml {

std::string SourceLocation::to_string() const {
    std::string s = origin.empty() ? "<inline>" : origin;
    if (line > 0) s += ":" + std::to_string(line) + ":" + std::to_string(column);
    return s;
}

std::string_view severity_name(Severity s) {
    switch (s) {
        case Severity::error: return "error";
        case Severity::warning: return "warning";
        case Severity::note: return "note";
    }
    return "error";
}

std::string Diagnostic::to_string() const {
    std::string s = location.to_string();
    s += ": ";
    s += severity_name(severity);
    s += " [" + code + "]: " + message;
    return s;
}

bool has_errors(const Diagnostics& diags) { return count_errors(diags) > 0; }

std::size_t count_errors(const Diagnostics& diags) {
    return static_cast<std::size_t>(std::count_if(diags.begin(), diags.end(), [](const Diagnostic& d) {
        return d.severity == Severity::error;
    }));
}

nlohmann::json diagnostics_to_json(const Diagnostics& diags) {
    auto out = nlohmann::json::array();
    for (const auto& d : diags) {
        out.push_back({{"severity", severity_name(d.severity)},
                       {"code", d.code},
                       {"message", d.message},
                       {"location", d.location.to_string()}});
    }
    return out;
}

}  // namespace cmml
