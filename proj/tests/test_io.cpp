#include <gtest/gtest.h>

#include <cstring>

#include "pcglm/io/json_io.hpp"
#include "pcglm/io/report.hpp"
#include "pcglm/io/table.hpp"
#include "pcglm/random.hpp"

using namespace pcglm;

namespace {

io::TableOptions numeric_options(std::vector<std::string> cols, std::vector<std::string> levels = {}) {
    io::TableOptions o;
    o.response = "y";
    o.response_levels = std::move(levels);
    for (auto& c : cols) o.covariates.push_back({c, io::ColumnKind::Numeric, {}});
    return o;
}

bool bit_equal(const Vector& a, const Vector& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

PCGLMSpec rich_spec() {
    auto d = CategoricalDataset::with_numeric_columns(6, 0);
    d.category_names = {"none", "mild", "mod", "severe", "very, \"bad\"", "max"};
    d.column_names = {"age", "sex=m", "dose"};
    d.variables = {{"age", {0}}, {"sex", {1}}, {"dose", {2}}};
    auto spec = PCGLMSpec::for_data(d, PartitionTree::parse("[1,[2,3,4],[5,6]]"));
    pcglm::Random rng(3);
    const auto rnd = [&](int n) {
        Vector v(n);
        for (int k = 0; k < n; ++k) v[k] = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(9)) - 4.0);
        return v;
    };
    spec.models[0] = NodeModel::glm(RatioKind::Cumulative, CdfKind::student(3), DesignKind::Proportional, {"age", "sex"});
    spec.models[0].beta = rnd(4);
    const int a = spec.tree.find({1, 2, 3});
    spec.models[a] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::BlockSplit, {"dose"});
    spec.models[a].splits = {1};
    spec.models[a].beta = rnd(3);
    spec.models[a].share_group = 0;
    const int b = spec.tree.find({4, 5});
    spec.models[b] = NodeModel::minimal_response();
    spec.models[b].probs = Vector(2);
    *spec.models[b].probs << 1.0 / 3.0, 2.0 / 3.0;
    return spec;
}

} // namespace

TEST(Csv, QuotingAndLineEndings) {
    const std::string text = "# comment\r\na,b,c\r\n1,\"x,y\",\"he said \"\"hi\"\"\"\r\n2,\"multi\nline\",z\n\n3,,w";
    const auto recs = io::parse_csv(text);
    ASSERT_EQ(recs.size(), 4u);
    EXPECT_EQ(recs[0].fields, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(recs[1].fields[1], "x,y");
    EXPECT_EQ(recs[1].fields[2], "he said \"hi\"");
    EXPECT_EQ(recs[2].fields[1], "multi\nline");
    EXPECT_EQ(recs[3].fields[1], "");
    EXPECT_EQ(recs[3].line, 7);
    EXPECT_THROW(io::parse_csv("a,\"b\n"), ParseError);
    EXPECT_THROW(io::parse_csv("a,b\"c\n"), ParseError);
    EXPECT_EQ(io::csv_quote("a\"b"), "\"a\"\"b\"");
    EXPECT_EQ(io::parse_csv("a;b\n1;2\n", ';')[1].fields, (std::vector<std::string>{"1", "2"}));
}

TEST(LoadTable, ThreeRowsOneCovariate) {
    const auto d = io::load_table_text("x,y\n0.5,a\n-1,b\n2,a\n", numeric_options({"x"}));
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.categories, 2);
    EXPECT_EQ(d.category_names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(d.rows[1].x.values[0], -1.0);
    EXPECT_EQ(d.rows[1].response, 1);
    EXPECT_EQ(d.rows[2].weight, 1.0);
}

TEST(LoadTable, Errors) {
    try {
        io::load_table_text("x,y\n1,a\n2,c\n", numeric_options({"x"}, {"a", "b"}));
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("'c'"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    try {
        io::load_table_text("x,y\n1,a\n,b\n", numeric_options({"x"}));
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3, column 'x': missing value"), std::string::npos);
    }
    EXPECT_THROW(io::load_table_text("x;y\n1;a\n2;b\n", numeric_options({"x"})), ParseError);
    EXPECT_THROW(io::load_table_text("x,y\nfoo,a\n2,b\n", numeric_options({"x"})), ParseError);
    EXPECT_THROW(io::load_table_text("x,y\n1,a,3\n2,b\n", numeric_options({"x"})), ParseError);
}

TEST(LoadTable, CategoricalOrdinalWeightsAndLevels) {
    io::TableOptions o;
    o.response = "y";
    o.covariates = {{"g", io::ColumnKind::Categorical, {}}, {"s", io::ColumnKind::Ordinal, {"lo", "mid", "hi"}}};
    o.weight = "w";
    const auto d = io::load_table_text("g,s,y,w\nb,hi,10,2\na,lo,9,1\nc,mid,10,0.5\n", o);
    EXPECT_EQ(d.column_names, (std::vector<std::string>{"g=b", "g=c", "s"}));
    EXPECT_EQ(d.category_names, (std::vector<std::string>{"9", "10"})); // numeric order
    EXPECT_EQ(d.rows[0].x.values, (Vector(3) << 1, 0, 3).finished());
    EXPECT_EQ(d.rows[1].x.values, (Vector(3) << 0, 0, 1).finished());
    EXPECT_EQ(d.rows[2].x.values, (Vector(3) << 0, 1, 2).finished());
    EXPECT_EQ(d.rows[2].weight, 0.5);
    EXPECT_EQ(d.variables[0].columns, (std::vector<int>{0, 1}));
}

TEST(LoadTable, AggregationKeepsLogLikelihood) {
    pcglm::Random rng(4);
    std::string text = "x,z,y\n";
    for (int i = 0; i < 600; ++i)
        text += std::to_string(rng.below(3)) + "," + std::to_string(rng.below(2)) + "," + std::to_string(1 + rng.below(3)) + "\n";
    auto opt = numeric_options({"x", "z"});
    const auto raw = io::load_table_text(text, opt);
    opt.aggregate = true;
    const auto agg = io::load_table_text(text, opt);
    EXPECT_LE(agg.size(), 18u);
    EXPECT_EQ(agg.total_weight(), raw.total_weight());
    GlmSpec g{RatioKind::Adjacent, CdfKind::normal(), DesignSpec::complete({0, 1}), 3};
    Vector beta(6);
    beta << 0.2, -0.1, 0.3, -0.2, 0.1, 0.25;
    double l_raw = 0.0, l_agg = 0.0;
    for (const auto& r : raw.rows) l_raw += r.weight * std::log(predict_probs(g, beta, r.x).probs[r.response]);
    for (const auto& r : agg.rows) l_agg += r.weight * std::log(predict_probs(g, beta, r.x).probs[r.response]);
    EXPECT_NEAR(l_raw, l_agg, 1e-12 * std::abs(l_raw));
    EXPECT_NEAR(fit(g, raw).log_likelihood, fit(g, agg).log_likelihood, 1e-9);
}

TEST(LoadTable, Standardize) {
    auto opt = numeric_options({"x"});
    opt.standardize = true;
    const auto d = io::load_table_text("x,y\n1,a\n2,b\n3,a\n6,b\n", opt);
    double m = 0.0, v = 0.0;
    for (const auto& r : d.rows) m += r.x.values[0];
    for (const auto& r : d.rows) v += r.x.values[0] * r.x.values[0];
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 4.0, 1.0, 1e-12);
    EXPECT_THROW(io::load_table_text("x,y\n1,a\n1,b\n", opt), ParseError);
}

TEST(LoadTable, CsvWriterRoundTrip) {
    auto d = CategoricalDataset::with_numeric_columns(3, 2);
    d.category_names = {"a", "b,c", "d"};
    pcglm::Random rng(5);
    for (int i = 0; i < 50; ++i) d.rows.push_back({CovariateRow{rng.normal(), rng.uniform() * 1e-7}, static_cast<int>(rng.below(3)), 1.0});
    const auto text = io::dataset_to_csv(d, "resp", "# header");
    auto opt = numeric_options(d.column_names, d.category_names);
    opt.response = "resp";
    const auto back = io::load_table_text(text, opt);
    ASSERT_EQ(back.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_TRUE(bit_equal(back.rows[i].x.values, d.rows[i].x.values));
        EXPECT_EQ(back.rows[i].response, d.rows[i].response);
    }
}

TEST(SpecJson, BitExactRoundTrip) {
    const auto spec = rich_spec();
    ASSERT_NO_THROW(validate_spec(spec));
    const auto text = io::spec_to_string(spec);
    const auto back = io::spec_from_string(text);
    EXPECT_EQ(io::spec_to_string(back), text);
    EXPECT_EQ(back.categories, spec.categories);
    EXPECT_EQ(back.columns, spec.columns);
    EXPECT_EQ(back.tree.to_string(), spec.tree.to_string());
    for (const auto& [id, m] : spec.models) {
        const auto& n = back.model(id);
        EXPECT_EQ(n.minimal, m.minimal);
        EXPECT_EQ(n.ratio, m.ratio);
        EXPECT_EQ(n.cdf, m.cdf);
        EXPECT_EQ(n.design, m.design);
        EXPECT_EQ(n.splits, m.splits);
        EXPECT_EQ(n.variables, m.variables);
        EXPECT_EQ(n.share_group, m.share_group);
        EXPECT_EQ(n.beta.has_value(), m.beta.has_value());
        if (m.beta) EXPECT_TRUE(bit_equal(*n.beta, *m.beta));
        if (m.probs) EXPECT_TRUE(bit_equal(*n.probs, *m.probs));
    }
    for (std::size_t v = 0; v < spec.variables.size(); ++v) {
        EXPECT_EQ(back.variables[v].name, spec.variables[v].name);
        EXPECT_EQ(back.variables[v].columns, spec.variables[v].columns);
    }
}

TEST(SpecJson, RejectsInvalidTrees) {
    const std::string overlap = R"({"categories":["a","b","c"],"tree":[["a","b"],["b","c"]],"nodes":[]})";
    try {
        io::spec_from_string(overlap);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("partition"), std::string::npos);
    }
    const std::string missing = R"({"categories":["a","b","c"],"tree":["a","b"],"nodes":[]})";
    EXPECT_THROW(io::spec_from_string(missing), ParseError);
    EXPECT_THROW(io::spec_from_string(R"({"categories":["a","b"],"tree":["a","q"]})"), ParseError);
    EXPECT_THROW(io::spec_from_string("{"), ParseError);
    const std::string bad_ratio =
        R"({"categories":["a","b"],"tree":["a","b"],"nodes":[{"vertex":["a","b"],"ratio":"odd","cdf":"logistic","design":"complete"}]})";
    EXPECT_THROW(io::spec_from_string(bad_ratio), ParseError);
}

TEST(HasseJson, RoundTripAndErrors) {
    HasseDiagram h{{"a", "b", "c"}, {{0, 1}, {0, 2}}};
    const auto back = io::hasse_from_json(io::hasse_to_json(h));
    EXPECT_EQ(back.elements, h.elements);
    EXPECT_EQ(back.covers, h.covers);
    EXPECT_THROW(io::hasse_from_json(io::parse_json(R"({"elements":["a"],"covers":[["a","z"]]})", "h")), ParseError);
    EXPECT_THROW(io::hasse_from_json(io::parse_json(R"({"elements":["a","b","c"],"covers":[["a","b"],["b","c"],["a","c"]]})", "h")),
                 ParseError);
}

TEST(PosetSkeleton, ChainIsOneLevelSequential) {
    HasseDiagram chain{{"lo", "mid", "hi"}, {{0, 1}, {1, 2}}};
    const auto spec = io::poset_skeleton(poset_to_tree(chain), RatioKind::Sequential, {"x"});
    EXPECT_EQ(spec.tree.to_string(), "[1,2,3]");
    EXPECT_EQ(spec.model(0).ratio, RatioKind::Sequential);
    EXPECT_EQ(spec.model(0).design, DesignKind::Proportional);
    HasseDiagram diamond{{"min", "m1", "m2", "max"}, {{0, 1}, {0, 2}, {1, 3}, {2, 3}}};
    const auto d = io::poset_skeleton(poset_to_tree(diamond), RatioKind::Cumulative, {});
    EXPECT_EQ(d.model(d.tree.find({1, 2})).ratio, RatioKind::Reference);
    EXPECT_EQ(d.model(d.tree.find({1, 2})).design, DesignKind::Complete);
    EXPECT_NO_THROW(validate_spec(d));
}

TEST(Report, Formatting) {
    EXPECT_EQ(io::fixed6(-159.0455), "-159.045500");
    EXPECT_EQ(io::sig6(1.23456789), "1.23457");
    EXPECT_EQ(io::sig6(-0.000123456789), "-0.000123457");
    GlmSpec g{RatioKind::Reference, CdfKind::logistic(), DesignSpec::complete({0, 1}), 3};
    EXPECT_EQ(io::parameter_names(g, {"u", "v"}),
              (std::vector<std::string>{"alpha_1", "alpha_2", "u:1", "v:1", "u:2", "v:2"}));
    g.design = DesignSpec::block_split({1}, {1});
    EXPECT_EQ(io::parameter_names(g, {"u", "v"}), (std::vector<std::string>{"alpha_1", "alpha_2", "v:block1"}));
}

TEST(Report, StoredLogLikelihoodMatchesFit) {
    auto d = io::load_table_text("x,y\n0,a\n1,b\n2,c\n0,b\n1,a\n2,c\n1,c\n0,a\n", numeric_options({"x"}));
    auto spec = PCGLMSpec::for_data(d, PartitionTree::parse("[1,[2,3]]"));
    spec.models[0] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x"});
    spec.models[spec.tree.find({1, 2})] = NodeModel::minimal_response();
    const auto f = pcglm_fit(spec, d);
    const auto fitted = with_parameters(spec, f);
    EXPECT_NEAR(io::stored_log_likelihood(fitted, d), f.log_likelihood, 1e-9);
    const auto text = io::fit_report(spec, f);
    EXPECT_NE(text.find("log-likelihood: " + io::fixed6(f.log_likelihood)), std::string::npos);
    EXPECT_EQ(text, io::fit_report(spec, pcglm_fit(spec, d)));
}
