#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cmml/binder.hpp"
#include "cmml/eer.hpp"
#include "cmml/engine.hpp"
#include "cmml/planner.hpp"

namespace cmml::testing {

std::filesystem::path source_dir();
std::filesystem::path binary_dir();
std::string read_file(const std::filesystem::path& p);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& tag);

Clock fixed_clock(const char* iso = "2019-06-01");

EerSchema parse_or_throw(const std::string& text);

/// Parses, validates, rewrites and binds in-memory CSV texts keyed by table
/// name. Throws Error with the diagnostics when any stage fails.
BoundModel bind_texts(const std::string& schema_text, const std::map<std::string, std::string>& csv,
                      Clock clock = fixed_clock());

/// The shipped example: examples/customer_order.cmml bound to examples/data.
BoundModel load_example(Clock clock = fixed_clock());

struct RandomOptions {
    int max_entities = 5;
    int max_root_rows = 8;
    bool allow_generalization = true;
    bool allow_cycles = true;
};

struct RandomCase {
    EerSchema schema;
    DataBundle bundle;
    std::string task;
    // Membership decided by the generator itself, per root row.
    std::map<std::string, std::vector<bool>> membership;
    bool has_split = false;
    bool overlap = false;
};

RandomCase random_case(std::mt19937_64& rng, const RandomOptions& options = {});

/// Row count of the unsummarized left-join product along the binding's
/// spanning tree, computed straight from the raw foreign-key columns.
std::size_t oracle_join_size(const EerSchema& schema, const DataBundle& bundle, const TargetBinding& binding);

/// T+ with each rank found by counting the magnitudes below and equal to it,
/// no sorting. Zeros dropped.
double oracle_t_plus(const std::vector<double>& d);

/// Empty when `rec` satisfies the naming algebra, otherwise the reason.
std::string naming_violation(const FeatureRecord& rec);

}  // namespace cmml::testing
