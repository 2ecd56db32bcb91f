// cmml: turn an EER schema plus CSV tables into training datasets.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cmml/engine.hpp"
#include "cmml/evalkit.hpp"
#include "cmml/pipeline.hpp"
#include "cmml/planner.hpp"
#include "cmml/version.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kDataError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::string schema;
    std::string data_dir;
    std::string task;
    std::string out;
    std::string agg;
    std::optional<int> top_k;
    std::string impute;
    double holdout = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool json_output = false;
    bool quiet = false;
    std::size_t folds = 5;
    std::optional<double> range;
    std::string dataset;
    std::string spec;
};

void log(const Flags& f, const std::string& msg) {
    if (!f.quiet) std::cerr << msg << "\n";
}

void report(const Flags& f, const cmml::Diagnostics& diags) {
    for (const auto& d : diags)
        if (!f.quiet || d.severity == cmml::Severity::error) std::cerr << d.to_string() << "\n";
}

cmml::PlanOverrides overrides(const Flags& f) {
    cmml::PlanOverrides o;
    if (!f.agg.empty()) {
        std::vector<cmml::AggregateKind> agg;
        std::stringstream ss(f.agg);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto k = cmml::parse_aggregate(item);
            if (!k) throw UsageError("--agg: unknown aggregate '" + item + "' (use count, mean, sum, min, max)");
            agg.push_back(*k);
        }
        o.agg = agg;
    }
    if (f.top_k) {
        if (*f.top_k < 1) throw UsageError("--top-k must be positive");
        o.top_k = f.top_k;
    }
    if (!f.impute.empty()) {
        auto s = cmml::ImputeStrategy::parse(f.impute);
        if (!s) throw UsageError("--impute: expected mean_mode, none or constant(<literal>)");
        o.impute = *s;
    }
    return o;
}

const cmml::TaskDecl& find_task(const cmml::Project& p, const std::string& name) {
    const auto* t = p.schema.find_task(name);
    if (!t) throw UsageError("schema declares no task named '" + name + "'");
    return *t;
}

/// Loads the project and reports diagnostics; nullopt means exit 1.
std::optional<cmml::Project> load(const Flags& f, bool with_data) {
    auto project = cmml::load_project(f.schema, with_data ? std::optional<fs::path>(f.data_dir) : std::nullopt,
                                      cmml::clock_from_environment());
    report(f, project.diagnostics);
    if (!project.ok()) return std::nullopt;
    return project;
}

int run_validate(const Flags& f) {
    auto project = cmml::load_project(f.schema, f.data_dir.empty() ? std::nullopt : std::optional<fs::path>(f.data_dir),
                                      cmml::clock_from_environment());
    if (f.json_output) {
        json out{{"ok", project.ok()}, {"diagnostics", cmml::diagnostics_to_json(project.diagnostics)}};
        if (project.bound) out["cardinality"] = cmml::cardinality_report_to_json(cmml::cardinality_report(*project.bound));
        std::cout << out.dump(2) << "\n";
    } else {
        report(f, project.diagnostics);
        if (project.bound)
            for (const auto& r : cmml::cardinality_report(*project.bound))
                log(f, "relationship " + r.relationship + ": " + (r.conformant() ? "conformant" : "violations"));
        log(f, std::to_string(cmml::count_errors(project.diagnostics)) + " error(s), " +
                   std::to_string(project.diagnostics.size() - cmml::count_errors(project.diagnostics)) + " other finding(s)");
    }
    return project.ok() ? kOk : kDataError;
}

int run_plan(const Flags& f) {
    auto project = load(f, false);
    if (!project) return kDataError;
    const auto plan = cmml::compile_plan(project->schema, find_task(*project, f.task), overrides(f));
    if (f.json_output) std::cout << cmml::plan_to_json(plan).dump(2) << "\n";
    else std::cout << cmml::explain_plan(plan);
    return kOk;
}

int run_prepare(const Flags& f) {
    if (f.holdout < 0 || f.holdout >= 1) throw UsageError("--holdout must lie in [0, 1)");
    auto project = load(f, true);
    if (!project) return kDataError;
    const auto plan = cmml::compile_plan(project->schema, find_task(*project, f.task), overrides(f));
    cmml::ExecuteOptions opts;
    opts.out_dir = fs::path(f.out);
    opts.holdout = f.holdout;
    opts.schema_sha256 = project->schema_sha256;
    opts.tool_version = cmml::kVersion;
    if (f.seed_given) opts.seed = f.seed;
    opts.upstream = project->diagnostics;
    const auto res = cmml::execute(plan, *project->bound, opts);
    cmml::Diagnostics engine_only;
    for (const auto& d : res.diagnostics)
        if (std::find(project->diagnostics.begin(), project->diagnostics.end(), d) == project->diagnostics.end())
            engine_only.push_back(d);
    report(f, engine_only);
    json summary = json::array();
    for (const auto& ds : res.datasets) {
        log(f, "wrote " + (fs::path(f.out) / (ds.name + ".csv")).string() + " (" + std::to_string(ds.table.rows.size()) +
                   " rows, " + std::to_string(ds.table.columns.size()) + " columns)");
        summary.push_back({{"name", ds.name}, {"rows", ds.table.rows.size()}, {"columns", ds.table.columns.size()}});
    }
    log(f, "wrote " + (fs::path(f.out) / "manifest.json").string());
    if (f.json_output) std::cout << json{{"datasets", summary}, {"out", f.out}}.dump(2) << "\n";
    return kOk;
}

int run_flatten(const Flags& f) {
    auto project = load(f, true);
    if (!project) return kDataError;
    const auto binding = cmml::resolve_target(project->schema, find_task(*project, f.task));
    const auto flat = cmml::flatten_naive(*project->bound, binding);
    cmml::write_files_atomically(f.out, {{"ds0.csv", cmml::to_csv(flat)}});
    log(f, "wrote " + (fs::path(f.out) / "ds0.csv").string() + " (" + std::to_string(flat.rows.size()) + " rows)");
    if (f.json_output) std::cout << json{{"file", (fs::path(f.out) / "ds0.csv").string()}, {"rows", flat.rows.size()}}.dump(2) << "\n";
    return kOk;
}

int run_evaluate(const Flags& f) {
    auto project = load(f, true);
    if (!project) return kDataError;
    const auto plan = cmml::compile_plan(project->schema, find_task(*project, f.task), overrides(f));
    const auto res = cmml::execute(plan, *project->bound, {});
    const cmml::TrainingDataset* ds = nullptr;
    for (const auto& d : res.datasets)
        if (f.dataset.empty() ? true : d.name == f.dataset) {
            ds = &d;
            break;
        }
    if (!ds) throw UsageError("plan emits no dataset named '" + f.dataset + "'");
    const auto flat = cmml::flatten_naive(*project->bound, plan.binding);
    cmml::CompareOptions opts;
    opts.folds = f.folds;
    opts.seed = f.seed;
    opts.range = f.range;
    const auto rep = cmml::compare_datasets(flat, ds->table, ds->target_column, opts);
    json out = rep.to_json();
    out["dataset"] = ds->name;
    out["target"] = ds->target_column;
    out["seed"] = f.seed;
    std::cout << out.dump(2) << "\n";
    return kOk;
}

int run_generate(const Flags& f) {
    cmml::SynthSpec spec;
    if (!f.spec.empty()) {
        std::ifstream in(f.spec);
        if (!in) throw UsageError("cannot read generator spec " + f.spec);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw UsageError("generator spec is not valid JSON: " + std::string(e.what()));
        }
        spec = cmml::SynthSpec::from_json(j);
    }
    const auto bundle = cmml::synth_generate(spec, f.seed);
    cmml::write_synth_bundle(bundle, f.out);
    log(f, "wrote synthetic bundle with " + std::to_string(bundle.bundle.tables.at("CUSTOMER").rows.size()) +
               " customers and " + std::to_string(bundle.bundle.tables.at("ORDER").rows.size()) + " orders to " + f.out);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prepare machine-learning training datasets from an EER schema and relational tables."};
    app.set_version_flag("--version", std::string(cmml::kVersion));
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub, bool data, bool task) {
        sub->add_option("--schema", f.schema, "Schema file (.cmml)")->required()->check(CLI::ExistingFile);
        if (data) sub->add_option("--data-dir", f.data_dir, "Directory holding <TABLE>.csv files")->required()->check(CLI::ExistingDirectory);
        if (task) sub->add_option("--task", f.task, "Task name declared in the schema")->required();
        sub->add_flag("--json", f.json_output, "Machine-readable JSON on stdout");
        sub->add_flag("--quiet", f.quiet, "Only print errors on stderr");
    };
    auto plan_flags = [&](CLI::App* sub) {
        sub->add_option("--agg", f.agg, "Numeric aggregates, comma separated (default mean,sum,min,max)");
        sub->add_option("--top-k", f.top_k, "Categories kept per nominal attribute (default 20)");
        sub->add_option("--impute", f.impute, "mean_mode (default), none or constant(<literal>)");
    };

    auto* validate = app.add_subcommand("validate", "Check a schema and, with --data-dir, the data against it");
    validate->add_option("--schema", f.schema, "Schema file (.cmml)")->required()->check(CLI::ExistingFile);
    validate->add_option("--data-dir", f.data_dir, "Directory holding <TABLE>.csv files")->check(CLI::ExistingDirectory);
    validate->add_flag("--json", f.json_output, "Machine-readable JSON on stdout");
    validate->add_flag("--quiet", f.quiet, "Only print errors on stderr");

    auto* plan = app.add_subcommand("plan", "Print the transformation plan for a task");
    common(plan, false, true);
    plan_flags(plan);

    auto* prepare = app.add_subcommand("prepare", "Write training datasets and manifest.json");
    common(prepare, true, true);
    plan_flags(prepare);
    prepare->add_option("--out", f.out, "Output directory")->required();
    prepare->add_option("--holdout", f.holdout, "Fraction of keys written to <dataset>_holdout.csv (default 0)");
    prepare->add_option("--seed", f.seed, "Recorded in the manifest; outputs do not depend on it");

    auto* flatten = app.add_subcommand("flatten", "Write the naive joined table ds0.csv");
    common(flatten, true, true);
    flatten->add_option("--out", f.out, "Output directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Compare ds0 with a prepared dataset by k-fold least squares");
    common(evaluate, true, true);
    plan_flags(evaluate);
    evaluate->add_option("--dataset", f.dataset, "Dataset to compare when the plan emits several (default: first)");
    evaluate->add_option("--folds", f.folds, "Number of folds (default 5)");
    evaluate->add_option("--seed", f.seed, "Fold shuffling seed (default 0)");
    evaluate->add_option("--range", f.range, "Target range for nrmse (default: observed max - min)");

    auto* generate = app.add_subcommand("generate", "Write a seeded synthetic customer/order bundle");
    generate->add_option("--out", f.out, "Output directory")->required();
    generate->add_option("--spec", f.spec, "Generator spec JSON (default parameters when absent)");
    generate->add_option("--seed", f.seed, "Random seed (default 0)");
    generate->add_flag("--quiet", f.quiet, "Only print errors on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }
    for (auto* sub : {prepare, evaluate, generate})
        if (sub->parsed() && sub->count("--seed")) f.seed_given = true;

    try {
        cmml::clock_from_environment();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    }

    try {
        if (validate->parsed()) return run_validate(f);
        if (plan->parsed()) return run_plan(f);
        if (prepare->parsed()) return run_prepare(f);
        if (flatten->parsed()) return run_flatten(f);
        if (evaluate->parsed()) return run_evaluate(f);
        if (generate->parsed()) return run_generate(f);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsageError;
}
