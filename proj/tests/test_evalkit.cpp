#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cmml/evalkit.hpp"
#include "support.hpp"

using namespace cmml;
namespace t = cmml::testing;

TEST_CASE("regression metrics by hand") {
    const auto r = regression_metrics({1, 2, 3, 4}, {1, 2, 3, 6}, 10);
    CHECK(r.rmse == doctest::Approx(1.0));  // sqrt(4 / 4)
    CHECK(r.nrmse == doctest::Approx(0.1));
    CHECK(r.r2 == doctest::Approx(1 - 4 / 5.0));
    CHECK(r.n == 4);
    CHECK(regression_metrics({3, 3}, {3, 3}, 1).r2 == 1);
    Diagnostics d;
    CHECK(regression_metrics({3, 3}, {2, 4}, 1, &d).r2 == 0);
    CHECK(d.size() == 1);
    CHECK_THROWS_AS(regression_metrics({1}, {1, 2}, 1), Error);
    CHECK_THROWS_AS(regression_metrics({}, {}, 1), Error);
    CHECK_THROWS_AS(regression_metrics({1}, {1}, 0), Error);
}

TEST_CASE("precision, recall and F1") {
    const auto c = classification_metrics(6, 2, 4);
    CHECK(c.precision == doctest::Approx(75));
    CHECK(c.recall == doctest::Approx(60));
    CHECK(c.f1 == doctest::Approx(2 * 75 * 60 / 135.0));
    CHECK(f1_score(0, 0) == 0);
    CHECK(f1_score(40.56, 59.28) == doctest::Approx(48.17).epsilon(0.0002));
    Diagnostics d;
    const auto none = classification_metrics(0, 0, 0, &d);
    CHECK(none.f1 == 0);
    CHECK(d.size() == 2);
}

TEST_CASE("mid-ranks share ties") {
    CHECK(mid_ranks({10, 30, 20, 20}) == std::vector<double>{1, 4, 2.5, 2.5});
    CHECK(mid_ranks({5, 5, 5}) == std::vector<double>{2, 2, 2});
    CHECK(mid_ranks({}).empty());
}

TEST_CASE("Wilcoxon on six positive differences") {
    std::vector<std::pair<double, double>> pairs;
    for (int i = 1; i <= 6; ++i) pairs.emplace_back(i * 2.0, i * 1.0);
    const auto w = wilcoxon_signed_rank(pairs);
    CHECK(w.n_nonzero == 6);
    CHECK(w.t_plus == 21);
    CHECK(w.t_minus == 0);
    CHECK(w.sigma_t == doctest::Approx(std::sqrt(6 * 7 * 13 / 24.0)));
    CHECK(w.sigma_t == doctest::Approx(signed_rank_sigma(6)));
    CHECK(w.z == doctest::Approx(2.2014).epsilon(1e-4));
    CHECK(w.p_two_tailed == doctest::Approx(0.0277).epsilon(0.01));
    CHECK_FALSE(w.degenerate);

    std::vector<std::pair<double, double>> flipped;
    for (auto [a, b] : pairs) flipped.emplace_back(b, a);
    const auto v = wilcoxon_signed_rank(flipped);
    CHECK(v.z == doctest::Approx(-w.z));
    CHECK(v.p_two_tailed == doctest::Approx(w.p_two_tailed));
}

TEST_CASE("Wilcoxon degenerate and tied inputs") {
    const auto zero = wilcoxon_signed_rank({{1, 1}, {2, 2}});
    CHECK(zero.degenerate);
    CHECK(zero.p_two_tailed == 1);
    CHECK(zero.n_nonzero == 0);
    CHECK_THROWS_AS(wilcoxon_signed_rank({}), Error);

    // |d| = 1, 1, 2 with one zero dropped: ranks 1.5, 1.5, 3
    const auto w = wilcoxon_signed_rank({{2, 1}, {0, 1}, {5, 3}, {4, 4}});
    CHECK(w.n_nonzero == 3);
    CHECK(w.t_plus == 4.5);
    CHECK(w.t_minus == 1.5);
    const double tie_var = 3 * 4 * 7 / 24.0 - (8 - 2) / 48.0;
    CHECK(w.sigma_t == doctest::Approx(std::sqrt(tie_var)));
}

TEST_CASE("T+ agrees with the counting oracle on random instances") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> len(1, 10), val(-4, 4);
    for (int i = 0; i < 300; ++i) {
        std::vector<std::pair<double, double>> pairs;
        std::vector<double> d;
        const int n = len(rng);
        for (int j = 0; j < n; ++j) {
            const double a = val(rng), b = val(rng);
            pairs.emplace_back(a, b);
            d.push_back(a - b);
        }
        const auto w = wilcoxon_signed_rank(pairs);
        CHECK(w.t_plus == t::oracle_t_plus(d));
        const double m = static_cast<double>(w.n_nonzero);
        CHECK(w.t_plus + w.t_minus == doctest::Approx(m * (m + 1) / 2));
    }
}

TEST_CASE("least squares fixtures") {
    SUBCASE("an exact line") {
        Eigen::MatrixXd X(5, 1);
        Eigen::VectorXd y(5);
        for (int i = 0; i < 5; ++i) {
            X(i, 0) = i;
            y(i) = 2 * i + 1;
        }
        const auto m = ols_fit(X, y, 0);
        CHECK(m.coefficients(0) == doctest::Approx(1));
        CHECK(m.coefficients(1) == doctest::Approx(2));
        CHECK(m.predict(Eigen::RowVectorXd(Eigen::RowVectorXd::Constant(1, 10.0))) == doctest::Approx(21));

        // duplicating every row leaves the fit alone
        Eigen::MatrixXd X2(10, 1);
        Eigen::VectorXd y2(10);
        X2 << X, X;
        y2 << y, y;
        CHECK(ols_fit(X2, y2, 0).coefficients.isApprox(m.coefficients, 1e-10));
    }
    SUBCASE("orthogonal centered columns decouple") {
        Eigen::MatrixXd X(4, 2);
        X << 1, 1, -1, 1, 1, -1, -1, -1;
        Eigen::VectorXd y(4);
        y << 3, 0, 2, 5;
        const auto m = ols_fit(X, y, 0);
        CHECK(m.coefficients(0) == doctest::Approx(2.5));
        CHECK(m.coefficients(1) == doctest::Approx(X.col(0).dot(y) / 4));
        CHECK(m.coefficients(2) == doctest::Approx(X.col(1).dot(y) / 4));
    }
    SUBCASE("collinear columns") {
        Eigen::MatrixXd X(4, 2);
        X << 1, 1, 2, 2, 3, 3, 4, 4;
        Eigen::VectorXd y(4);
        y << 1, 2, 3, 4;
        CHECK_THROWS_AS(ols_fit(X, y, 0), Error);
        CHECK_NOTHROW(ols_fit(X, y, 1e-3));
    }
    CHECK_THROWS_AS(ols_fit(Eigen::MatrixXd(2, 1), Eigen::VectorXd(3)), Error);
}

TEST_CASE("the encoder standardizes, one-hot encodes and ignores identifiers") {
    Table tb{"t",
             {{"id", AttributeKind::identifier},
              {"x", AttributeKind::numeric},
              {"c", AttributeKind::nominal},
              {"b", AttributeKind::boolean},
              {"y", AttributeKind::numeric}},
             {},
             {"id"}};
    tb.rows = {{Value("1"), Value(1.0), Value("a"), Value(true), Value(0.0)},
               {Value("2"), Value(3.0), Value("b"), Value(false), Value(0.0)},
               {Value("3"), Value::unknown(), Value("c"), Value(true), Value(0.0)},
               {Value("4"), Value(5.0), Value("a"), Value(true), Value(0.0)}};
    FeatureEncoder enc(tb, {"id", "y"}, {0, 1, 2});
    CHECK(enc.names() == std::vector<std::string>{"x", "c=a", "c=b", "b"});
    const auto X = enc.encode(tb, {0, 1, 2, 3});
    CHECK(X(0, 0) == doctest::Approx(-1));  // mean 2, sd 1 over training rows
    CHECK(X(2, 0) == 0);                    // missing becomes the mean
    CHECK(X(3, 0) == doctest::Approx(3));
    CHECK(X(2, 1) < 0);
    CHECK(X(2, 2) < 0);
    CHECK(X.col(1).head(3).sum() == doctest::Approx(0));
}

TEST_CASE("fold counts outside 2..entities are rejected") {
    const auto m = t::load_example();
    const auto plan = compile_plan(m.schema, *m.schema.find_task("PREDICT_LTV"));
    const auto res = execute(plan, m, {});
    const Table flat = flatten_naive(m, plan.binding);
    CompareOptions o;
    o.folds = 1;
    CHECK_THROWS_AS(compare_datasets(flat, res.datasets[0].table, "CUSTOMER_ltv", o), Error);
    o.folds = 5;
    CHECK_THROWS_AS(compare_datasets(flat, res.datasets[0].table, "CUSTOMER_ltv", o), Error);
}

TEST_CASE("the generator is seeded, binds cleanly and follows its formula") {
    SynthSpec spec;
    spec.customers = 30;
    const auto a = synth_generate(spec, 7);
    const auto b = synth_generate(spec, 7);
    const auto c = synth_generate(spec, 8);
    CHECK(to_csv(a.bundle.tables.at("ORDER")) == to_csv(b.bundle.tables.at("ORDER")));
    CHECK(to_csv(a.bundle.tables.at("CUSTOMER")) == to_csv(b.bundle.tables.at("CUSTOMER")));
    CHECK(to_csv(a.bundle.tables.at("ORDER")) != to_csv(c.bundle.tables.at("ORDER")));
    CHECK(a.generative.at("seed") == 7);
    CHECK(a.bundle.tables.at("CUSTOMER").rows.size() == 30);

    auto bound = bind(a.schema, a.bundle, t::fixed_clock());
    CHECK(bound.ok());

    spec.sigma = 0;
    const auto exact = synth_generate(spec, 3);
    const Table& orders = exact.bundle.tables.at("ORDER");
    for (const auto& row : exact.bundle.tables.at("CUSTOMER").rows) {
        double sum = 0;
        int n = 0;
        for (const auto& o : orders.rows)
            if (o[5].to_text() == row[0].to_text()) {
                sum += o[1].number();
                ++n;
            }
        REQUIRE(n >= 1);
        CHECK(row[3].number() == doctest::Approx(3 * sum / n + 2 * n).epsilon(1e-12));
    }
}

TEST_CASE("generator specs reject unknown fields and bad values") {
    CHECK_THROWS_AS(SynthSpec::from_json({{"sigmaa", 1}}), Error);
    CHECK_THROWS_AS(SynthSpec::from_json({{"sigma", -1}}), Error);
    CHECK_THROWS_AS(SynthSpec::from_json({{"min_orders", 3}, {"max_orders", 2}}), Error);
    CHECK_THROWS_AS(SynthSpec::from_json({{"customers", "many"}}), Error);
    const auto shipped = nlohmann::json::parse(t::read_file(t::source_dir() / "examples" / "generator.json"));
    const auto s = SynthSpec::from_json(shipped);
    CHECK(SynthSpec::from_json(s.to_json()).to_json() == s.to_json());
}

TEST_CASE("without noise the prepared dataset recovers the generating model") {
    SynthSpec spec;
    spec.sigma = 0;
    spec.customers = 120;
    const auto g = synth_generate(spec, 11);
    auto bound = bind(g.schema, g.bundle, t::fixed_clock());
    REQUIRE(bound.ok());
    const auto plan = compile_plan(bound.model->schema, bound.model->schema.tasks[0]);
    const auto res = execute(plan, *bound.model, {});
    const auto rep = compare_datasets(flatten_naive(*bound.model, plan.binding), res.datasets[0].table, "CUSTOMER_ltv", {});
    CHECK(rep.entities == 120);
    CHECK(rep.prepared.r2 == doctest::Approx(1).epsilon(1e-6));
    CHECK(rep.prepared.rmse < 1e-3);
    CHECK(rep.flat.r2 < rep.prepared.r2);
    CHECK(rep.fold_details.size() == 5);
}
