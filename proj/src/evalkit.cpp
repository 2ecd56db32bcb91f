#include "cmml/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "cmml/schema_dsl.hpp"

namespace cmml {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics

json RegressionReport::to_json() const { return {{"rmse", rmse}, {"nrmse", nrmse}, {"r2", r2}, {"n", n}}; }

RegressionReport regression_metrics(const std::vector<double>& actual, const std::vector<double>& predicted, double range,
                                    Diagnostics* diags) {
    if (actual.size() != predicted.size())
        throw Error("regression_metrics: " + std::to_string(actual.size()) + " actual values but " +
                    std::to_string(predicted.size()) + " predictions");
    if (actual.empty()) throw Error("regression_metrics: no values");
    if (!(range > 0)) throw Error("regression_metrics: range must be positive");
    const double n = static_cast<double>(actual.size());
    const double mean = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
        ss_tot += (actual[i] - mean) * (actual[i] - mean);
    }
    RegressionReport r;
    r.n = actual.size();
    r.rmse = std::sqrt(ss_res / n);
    r.nrmse = r.rmse / range;
    if (ss_tot > 0) {
        r.r2 = 1 - ss_res / ss_tot;
    } else {
        r.r2 = ss_res == 0 ? 1 : 0;
        if (ss_res != 0 && diags)
            diags->push_back({Severity::warning, "constant-actuals", "actual values are constant; r2 reported as 0", {}});
    }
    return r;
}

double f1_score(double precision, double recall) {
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

ClassificationReport classification_metrics(std::size_t tp, std::size_t fp, std::size_t fn, Diagnostics* diags) {
    ClassificationReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    auto ratio = [&](std::size_t num, std::size_t den, const char* what) {
        if (den == 0) {
            if (diags)
                diags->push_back({Severity::warning, "undefined-metric", std::string(what) + " has a zero denominator; reported as 0", {}});
            return 0.0;
        }
        return 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    r.precision = ratio(tp, tp + fp, "precision");
    r.recall = ratio(tp, tp + fn, "recall");
    r.f1 = f1_score(r.precision, r.recall);
    return r;
}

// ---------------------------------------------------------------------------
// Wilcoxon

json WilcoxonResult::to_json() const {
    return {{"n_nonzero", n_nonzero}, {"T_plus", t_plus},   {"T_minus", t_minus},       {"sigma_T", sigma_t},
            {"z", z},                 {"p_two_tailed", p_two_tailed}, {"degenerate", degenerate}};
}

std::vector<double> mid_ranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double signed_rank_sigma(std::size_t n) {
    const double m = static_cast<double>(n);
    return std::sqrt(m * (m + 1) * (2 * m + 1) / 24);
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw Error("wilcoxon_signed_rank: no pairs");
    std::vector<double> diffs;
    for (const auto& [a, b] : pairs)
        if (a - b != 0) diffs.push_back(a - b);
    WilcoxonResult w;
    w.n_nonzero = diffs.size();
    if (diffs.empty()) {
        w.degenerate = true;
        return w;
    }
    std::vector<double> magnitudes;
    for (double d : diffs) magnitudes.push_back(std::fabs(d));
    const auto ranks = mid_ranks(magnitudes);
    for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? w.t_plus : w.t_minus) += ranks[i];

    std::map<double, std::size_t> ties;
    for (double m : magnitudes) ++ties[m];
    double correction = 0;
    for (const auto& [m, t] : ties) {
        const double tt = static_cast<double>(t);
        correction += (tt * tt * tt - tt) / 48;
    }
    const double n = static_cast<double>(w.n_nonzero);
    const double variance = n * (n + 1) * (2 * n + 1) / 24 - correction;
    w.sigma_t = std::sqrt(std::max(variance, 0.0));
    if (w.sigma_t == 0) {
        w.degenerate = true;
        return w;
    }
    w.z = (w.t_plus - n * (n + 1) / 4) / w.sigma_t;
    w.p_two_tailed = std::min(1.0, std::erfc(std::fabs(w.z) / std::sqrt(2.0)));
    return w;
}

// ---------------------------------------------------------------------------
// Least squares

double LinearModel::predict(const Eigen::RowVectorXd& x) const {
    return coefficients(0) + x.dot(coefficients.tail(coefficients.size() - 1));
}

Eigen::VectorXd LinearModel::predict(const Eigen::MatrixXd& X) const {
    return (X * coefficients.tail(coefficients.size() - 1)).array() + coefficients(0);
}

LinearModel ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
    if (X.rows() != y.size()) throw Error("ols_fit: feature rows and targets differ in number");
    if (X.rows() == 0) throw Error("ols_fit: no rows");
    if (lambda < 0) throw Error("ols_fit: lambda must be non-negative");
    Eigen::MatrixXd A(X.rows(), X.cols() + 1);
    A.col(0).setOnes();
    A.rightCols(X.cols()) = X;
    Eigen::MatrixXd normal = A.transpose() * A;
    normal.diagonal().tail(X.cols()).array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14)
        throw Error(lambda == 0 ? "ols_fit: the normal equations are singular; use a positive lambda"
                                : "ols_fit: the normal equations are singular even with lambda; raise lambda");
    return LinearModel{ldlt.solve(A.transpose() * y)};
}

// ---------------------------------------------------------------------------
// Encoding

FeatureEncoder::FeatureEncoder(const Table& table, const std::vector<std::string>& exclude,
                               const std::vector<std::size_t>& training_rows) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        const Column& col = table.columns[c];
        if (std::find(exclude.begin(), exclude.end(), col.name) != exclude.end()) continue;
        switch (col.kind) {
            case AttributeKind::numeric:
            case AttributeKind::date:
            case AttributeKind::boolean:
                inputs_.push_back({c, col.kind, {}});
                names_.push_back(col.name);
                break;
            case AttributeKind::nominal: {
                std::set<std::string> levels;
                for (auto r : training_rows)
                    if (!table.rows[r][c].is_null()) levels.insert(table.rows[r][c].to_text());
                if (levels.size() < 2) break;
                levels.erase(std::prev(levels.end()));
                for (const auto& l : levels) {
                    inputs_.push_back({c, col.kind, l});
                    names_.push_back(col.name + "=" + l);
                }
                break;
            }
            case AttributeKind::identifier:
            case AttributeKind::text: break;
        }
    }
    const auto k = static_cast<Eigen::Index>(inputs_.size());
    mean_ = Eigen::RowVectorXd::Zero(k);
    scale_ = Eigen::RowVectorXd::Ones(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        double sum = 0, sq = 0, n = 0;
        for (auto r : training_rows) {
            bool missing = false;
            const double v = raw(inputs_[i], table.rows[r][inputs_[i].column], missing);
            if (missing) continue;
            sum += v;
            sq += v * v;
            ++n;
        }
        if (n == 0) continue;
        mean_(i) = sum / n;
        const double var = sq / n - mean_(i) * mean_(i);
        if (var > 1e-12) scale_(i) = std::sqrt(var);
    }
}

double FeatureEncoder::raw(const Input& in, const Value& v, bool& missing) const {
    missing = v.is_null();
    if (missing) return 0;
    switch (in.kind) {
        case AttributeKind::numeric: return v.number();
        case AttributeKind::date: return v.date().days;
        case AttributeKind::boolean: return v.boolean() ? 1 : 0;
        case AttributeKind::nominal: return v.to_text() == in.level ? 1 : 0;
        default: return 0;
    }
}

Eigen::RowVectorXd FeatureEncoder::encode(const Row& row) const {
    Eigen::RowVectorXd x(static_cast<Eigen::Index>(inputs_.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        bool missing = false;
        const double v = raw(inputs_[i], row[inputs_[i].column], missing);
        x(i) = missing ? 0 : (v - mean_(i)) / scale_(i);
    }
    return x;
}

Eigen::MatrixXd FeatureEncoder::encode(const Table& table, const std::vector<std::size_t>& rows) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(inputs_.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = encode(table.rows[rows[i]]);
    return X;
}

// ---------------------------------------------------------------------------
// Comparison

json ComparisonReport::to_json() const {
    json folds_json = json::array();
    for (const auto& f : fold_details)
        folds_json.push_back({{"fold", f.fold},
                              {"train_entities", f.train_entities},
                              {"test_entities", f.test_entities},
                              {"rmse_flat", f.rmse_flat},
                              {"rmse_prepared", f.rmse_prepared}});
    return {{"entities", entities},
            {"folds", folds},
            {"range", range},
            {"flat", flat.to_json()},
            {"prepared", prepared.to_json()},
            {"r2_gain", prepared.r2 - flat.r2},
            {"wilcoxon", wilcoxon.to_json()},
            {"fold_details", folds_json},
            {"warnings", diagnostics_to_json(diagnostics)}};
}

namespace {

KeyTuple key_from(const Table& t, std::size_t row, const std::vector<std::size_t>& cols) {
    KeyTuple k;
    for (auto c : cols) k.push_back(t.rows[row][c].to_text());
    return k;
}

std::vector<std::size_t> column_indices(const Table& t, const std::vector<std::string>& names) {
    std::vector<std::size_t> out;
    for (const auto& n : names) out.push_back(t.require_column(n));
    return out;
}

}  // namespace

ComparisonReport compare_datasets(const Table& flat, const Table& prepared, const std::string& target_column,
                                  const CompareOptions& options) {
    if (prepared.key_columns.empty()) throw Error("compare_datasets: the prepared table has no key columns");
    const auto pkeys = column_indices(prepared, prepared.key_columns);
    const auto fkeys = column_indices(flat, prepared.key_columns);
    const std::size_t pt = prepared.require_column(target_column);
    const std::size_t ft = flat.require_column(target_column);

    std::map<KeyTuple, std::vector<std::size_t>, decltype(&key_less)> flat_rows(&key_less);
    for (std::size_t r = 0; r < flat.rows.size(); ++r)
        if (!flat.rows[r][ft].is_null()) flat_rows[key_from(flat, r, fkeys)].push_back(r);

    struct Entity {
        KeyTuple key;
        std::size_t row;
        double actual;
    };
    std::vector<Entity> entities;
    for (std::size_t r = 0; r < prepared.rows.size(); ++r) {
        if (prepared.rows[r][pt].is_null()) continue;
        auto key = key_from(prepared, r, pkeys);
        if (!flat_rows.count(key)) continue;
        entities.push_back({key, r, prepared.rows[r][pt].number()});
    }
    std::sort(entities.begin(), entities.end(), [](const Entity& a, const Entity& b) { return key_less(a.key, b.key); });
    const std::size_t k = options.folds;
    if (k < 2) throw Error("compare_datasets: at least 2 folds are needed");
    if (k > entities.size())
        throw Error("compare_datasets: " + std::to_string(k) + " folds but only " + std::to_string(entities.size()) +
                    " entities");

    std::vector<std::size_t> order(entities.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> fold_of(entities.size());
    for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = i % k;

    ComparisonReport rep;
    rep.entities = entities.size();
    rep.folds = k;
    std::vector<double> actual(entities.size());
    for (std::size_t i = 0; i < entities.size(); ++i) actual[i] = entities[i].actual;
    if (options.range) {
        rep.range = *options.range;
    } else {
        const auto [lo, hi] = std::minmax_element(actual.begin(), actual.end());
        rep.range = *hi - *lo;
    }

    std::vector<std::string> exclude = prepared.key_columns;
    exclude.push_back(target_column);
    std::vector<double> pred_flat(entities.size()), pred_prepared(entities.size());
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> p_train, f_train, test;
        for (std::size_t i = 0; i < entities.size(); ++i) {
            if (fold_of[i] == f) {
                test.push_back(i);
                continue;
            }
            p_train.push_back(entities[i].row);
            const auto& rows = flat_rows.at(entities[i].key);
            f_train.insert(f_train.end(), rows.begin(), rows.end());
        }
        FeatureEncoder penc(prepared, exclude, p_train);
        Eigen::VectorXd py(static_cast<Eigen::Index>(p_train.size()));
        for (std::size_t i = 0; i < p_train.size(); ++i) py(static_cast<Eigen::Index>(i)) = prepared.rows[p_train[i]][pt].number();
        const LinearModel pm = ols_fit(penc.encode(prepared, p_train), py, options.lambda);

        FeatureEncoder fenc(flat, exclude, f_train);
        Eigen::VectorXd fy(static_cast<Eigen::Index>(f_train.size()));
        for (std::size_t i = 0; i < f_train.size(); ++i) fy(static_cast<Eigen::Index>(i)) = flat.rows[f_train[i]][ft].number();
        const LinearModel fm = ols_fit(fenc.encode(flat, f_train), fy, options.lambda);

        double se_flat = 0, se_prepared = 0;
        for (auto i : test) {
            pred_prepared[i] = pm.predict(penc.encode(prepared.rows[entities[i].row]));
            const auto& rows = flat_rows.at(entities[i].key);
            double sum = 0;
            for (auto r : rows) sum += fm.predict(fenc.encode(flat.rows[r]));
            pred_flat[i] = sum / static_cast<double>(rows.size());
            se_flat += (pred_flat[i] - actual[i]) * (pred_flat[i] - actual[i]);
            se_prepared += (pred_prepared[i] - actual[i]) * (pred_prepared[i] - actual[i]);
        }
        const double nt = static_cast<double>(test.size());
        rep.fold_details.push_back({f, entities.size() - test.size(), test.size(), std::sqrt(se_flat / nt),
                                    std::sqrt(se_prepared / nt)});
    }

    const double range = rep.range > 0 ? rep.range : 1.0;
    if (!(rep.range > 0))
        rep.diagnostics.push_back({Severity::warning, "zero-range", "target range is zero; nrmse uses 1", {}});
    rep.flat = regression_metrics(actual, pred_flat, range, &rep.diagnostics);
    rep.prepared = regression_metrics(actual, pred_prepared, range, &rep.diagnostics);
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < entities.size(); ++i)
        pairs.emplace_back(std::fabs(pred_flat[i] - actual[i]), std::fabs(pred_prepared[i] - actual[i]));
    rep.wilcoxon = wilcoxon_signed_rank(pairs);
    return rep;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

const char* kSynthSchema = R"(entity CUSTOMER {
  key cust_id: identifier
  attr gender: nominal
  attr dob: date
  attr ltv: numeric
}

entity ORDER {
  key order_id: identifier
  attr total: numeric
  attr order_date: date
  attr channel: nominal
  attr priority_ship: boolean
}

relationship PLACES {
  CUSTOMER (1,1) -- (1,N) ORDER via cust_id
}

task PREDICT_LTV {
  target CUSTOMER.ltv
}
)";

}  // namespace

SynthSpec SynthSpec::from_json(const json& j) {
    if (!j.is_object()) throw Error("generator spec must be a JSON object");
    SynthSpec s;
    for (const auto& [k, v] : j.items()) {
        try {
            if (k == "customers") s.customers = v.get<std::size_t>();
            else if (k == "min_orders") s.min_orders = v.get<int>();
            else if (k == "max_orders") s.max_orders = v.get<int>();
            else if (k == "total_min") s.total_min = v.get<double>();
            else if (k == "total_max") s.total_max = v.get<double>();
            else if (k == "sigma") s.sigma = v.get<double>();
            else if (k == "intercept") s.intercept = v.get<double>();
            else if (k == "coef_mean_total") s.coef_mean_total = v.get<double>();
            else if (k == "coef_count") s.coef_count = v.get<double>();
            else if (k == "priority_rate") s.priority_rate = v.get<double>();
            else if (k == "channels") s.channels = v.get<std::vector<std::string>>();
            else if (k == "first_date") s.first_date = v.get<std::string>();
            else if (k == "last_date") s.last_date = v.get<std::string>();
            else throw Error("unknown generator spec field '" + k + "'");
        } catch (const json::exception& e) {
            throw Error("bad generator spec field '" + k + "': " + e.what());
        }
    }
    s.check();
    return s;
}

json SynthSpec::to_json() const {
    return {{"customers", customers},   {"min_orders", min_orders},
            {"max_orders", max_orders}, {"total_min", total_min},
            {"total_max", total_max},   {"sigma", sigma},
            {"intercept", intercept},   {"coef_mean_total", coef_mean_total},
            {"coef_count", coef_count}, {"priority_rate", priority_rate},
            {"channels", channels},     {"first_date", first_date},
            {"last_date", last_date}};
}

void SynthSpec::check() const {
    if (customers == 0) throw Error("generator spec: customers must be positive");
    if (min_orders < 1 || max_orders < min_orders) throw Error("generator spec: need 1 <= min_orders <= max_orders");
    if (!(total_min <= total_max)) throw Error("generator spec: total_min exceeds total_max");
    if (!(sigma >= 0)) throw Error("generator spec: sigma must be non-negative");
    if (!(priority_rate >= 0 && priority_rate <= 1)) throw Error("generator spec: priority_rate must lie in [0, 1]");
    if (channels.empty()) throw Error("generator spec: channels must not be empty");
    const auto a = Date::parse_iso(first_date), b = Date::parse_iso(last_date);
    if (!a || !b || *b < *a) throw Error("generator spec: first_date and last_date must be ISO dates in order");
}

SynthBundle synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    spec.check();
    SynthBundle out;
    out.schema_text = kSynthSchema;
    auto parsed = parse_schema({out.schema_text, "synthetic.cmml"});
    if (!parsed.ok()) throw Error("internal: synthetic schema does not parse");
    out.schema = std::move(parsed.schema);

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> n_orders(spec.min_orders, spec.max_orders);
    std::uniform_real_distribution<double> total(spec.total_min, spec.total_max);
    std::uniform_int_distribution<std::size_t> channel(0, spec.channels.size() - 1);
    std::bernoulli_distribution priority(spec.priority_rate);
    std::bernoulli_distribution female(0.5);
    const Date first = *Date::parse_iso(spec.first_date), last = *Date::parse_iso(spec.last_date);
    std::uniform_int_distribution<std::int32_t> order_day(first.days, last.days);
    std::uniform_int_distribution<std::int32_t> birth_day(Date::from_ymd(1940, 1, 1).days, Date::from_ymd(2000, 12, 31).days);
    std::normal_distribution<double> noise(0.0, 1.0);

    Table customers{"CUSTOMER",
                    {{"cust_id", AttributeKind::identifier},
                     {"gender", AttributeKind::nominal},
                     {"dob", AttributeKind::date},
                     {"ltv", AttributeKind::numeric}},
                    {},
                    {"cust_id"},
                    {}};
    Table orders{"ORDER",
                 {{"order_id", AttributeKind::identifier},
                  {"total", AttributeKind::numeric},
                  {"order_date", AttributeKind::date},
                  {"channel", AttributeKind::nominal},
                  {"priority_ship", AttributeKind::boolean},
                  {"cust_id", AttributeKind::identifier}},
                 {},
                 {"order_id"},
                 {}};
    std::size_t next_order = 1;
    for (std::size_t c = 1; c <= spec.customers; ++c) {
        const std::string id = std::to_string(c);
        const std::string gender = female(rng) ? "F" : "M";
        const Date dob{birth_day(rng)};
        const int n = n_orders(rng);
        double sum = 0;
        for (int i = 0; i < n; ++i) {
            // two decimals, as money
            const double t = std::round(total(rng) * 100) / 100;
            sum += t;
            const Date when{order_day(rng)};
            const std::string ch = spec.channels[channel(rng)];
            const bool prio = priority(rng);
            orders.rows.push_back({Value(std::to_string(next_order++)), Value(t), Value(when), Value(ch), Value(prio), Value(id)});
        }
        const double ltv = spec.intercept + spec.coef_mean_total * (sum / n) + spec.coef_count * n + spec.sigma * noise(rng);
        customers.rows.push_back({Value(id), Value(gender), Value(dob), Value(ltv)});
    }
    out.bundle.tables.emplace("CUSTOMER", std::move(customers));
    out.bundle.tables.emplace("ORDER", std::move(orders));
    out.generative = {{"seed", seed},
                      {"spec", spec.to_json()},
                      {"formula", "ltv = intercept + coef_mean_total * mean(ORDER.total) + coef_count * count(PLACES) + Normal(0, sigma)"},
                      {"coefficients",
                       {{"intercept", spec.intercept}, {"mean_total", spec.coef_mean_total}, {"count", spec.coef_count}}}};
    return out;
}

void write_synth_bundle(const SynthBundle& b, const std::filesystem::path& dir) {
    std::vector<std::pair<std::string, std::string>> files;
    files.emplace_back("schema.cmml", b.schema_text);
    for (const auto& [name, t] : b.bundle.tables) files.emplace_back(name + ".csv", to_csv(t));
    files.emplace_back("generative.json", b.generative.dump(2) + "\n");
    write_files_atomically(dir, files);
}

}  // namespace cmml
