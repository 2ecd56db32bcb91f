#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cmml/diagnostics.hpp"
#include "cmml/eer.hpp"
#include "cmml/engine.hpp"
#include "cmml/table.hpp"

namespace cmml {

struct RegressionReport {
    double rmse = 0;
    double nrmse = 0;  // rmse / range
    double r2 = 0;
    std::size_t n = 0;

    nlohmann::json to_json() const;
};

/// Throws Error on length mismatch, empty input or a non-positive range.
RegressionReport regression_metrics(const std::vector<double>& actual, const std::vector<double>& predicted, double range,
                                    Diagnostics* diags = nullptr);

struct ClassificationReport {
    double precision = 0;  // percent
    double recall = 0;     // percent
    double f1 = 0;         // percent
    std::size_t tp = 0, fp = 0, fn = 0;
};

ClassificationReport classification_metrics(std::size_t tp, std::size_t fp, std::size_t fn, Diagnostics* diags = nullptr);

/// Harmonic mean of precision and recall, 0 when both are 0.
double f1_score(double precision, double recall);

struct WilcoxonResult {
    std::size_t n_nonzero = 0;
    double t_plus = 0;
    double t_minus = 0;
    double sigma_t = 0;
    double z = 0;
    double p_two_tailed = 1;
    bool degenerate = false;

    nlohmann::json to_json() const;
};

/// Mid-ranks (1-based) of `values`, ties sharing their average rank.
std::vector<double> mid_ranks(const std::vector<double>& values);

/// Standard deviation of T+ under the null for n untied nonzero differences.
double signed_rank_sigma(std::size_t n);

/// Differences a − b; zero differences dropped; normal approximation with tie
/// correction.
WilcoxonResult wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs);

/// Linear model with intercept; coefficients[0] is the intercept.
struct LinearModel {
    Eigen::VectorXd coefficients;

    double predict(const Eigen::RowVectorXd& x) const;
    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

/// Minimizes |[1 X]b - y|^2 + lambda*|b without intercept|^2 through the
/// normal equations. Throws Error on a singular system.
LinearModel ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda = 1e-8);

/// Turns table columns into a standardized numeric design matrix: numeric
/// values as-is, dates as day counts, booleans as 0/1, nominals one-hot with
/// the lexically last category dropped. Identifier and text columns are
/// ignored. Missing values become the training mean (0 after scaling).
class FeatureEncoder {
public:
    FeatureEncoder(const Table& table, const std::vector<std::string>& exclude, const std::vector<std::size_t>& training_rows);

    Eigen::RowVectorXd encode(const Row& row) const;
    Eigen::MatrixXd encode(const Table& table, const std::vector<std::size_t>& rows) const;
    const std::vector<std::string>& names() const { return names_; }

private:
    struct Input {
        std::size_t column;
        AttributeKind kind;
        std::string level;  // one-hot level for nominals
    };
    double raw(const Input& in, const Value& v, bool& missing) const;

    std::vector<Input> inputs_;
    std::vector<std::string> names_;
    Eigen::RowVectorXd mean_;
    Eigen::RowVectorXd scale_;
};

struct FoldDetail {
    std::size_t fold = 0;
    std::size_t train_entities = 0;
    std::size_t test_entities = 0;
    double rmse_flat = 0;
    double rmse_prepared = 0;
};

struct ComparisonReport {
    std::size_t entities = 0;
    std::size_t folds = 0;
    double range = 0;
    RegressionReport flat;      // DS0, predictions averaged per entity
    RegressionReport prepared;  // the training dataset
    WilcoxonResult wilcoxon;    // pairs (|flat error|, |prepared error|) per entity
    std::vector<FoldDetail> fold_details;
    Diagnostics diagnostics;

    nlohmann::json to_json() const;
};

struct CompareOptions {
    std::size_t folds = 5;
    std::uint64_t seed = 0;
    std::optional<double> range;  // target range; observed max - min when absent
    double lambda = 1e-8;
};

/// k-fold comparison split by entity key. Both tables must carry the target
/// column and the key columns of `prepared`.
ComparisonReport compare_datasets(const Table& flat, const Table& prepared, const std::string& target_column,
                                  const CompareOptions& options);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
    std::size_t customers = 200;
    int min_orders = 1;
    int max_orders = 8;
    double total_min = 20;
    double total_max = 30;
    double sigma = 2.0;
    double intercept = 0;
    double coef_mean_total = 3;
    double coef_count = 2;
    double priority_rate = 0.3;
    std::vector<std::string> channels{"Online", "Phone", "Store"};
    std::string first_date = "2016-01-01";
    std::string last_date = "2019-12-31";

    static SynthSpec from_json(const nlohmann::json& j);  // throws Error on unknown fields or bad values
    nlohmann::json to_json() const;
    void check() const;
};

struct SynthBundle {
    std::string schema_text;
    EerSchema schema;
    DataBundle bundle;
    nlohmann::json generative;  // spec, seed and the coefficients used
};

SynthBundle synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// schema.cmml, one CSV per table and generative.json under `dir`.
void write_synth_bundle(const SynthBundle& b, const std::filesystem::path& dir);

}  // namespace cmml
