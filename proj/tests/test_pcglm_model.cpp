#include <gtest/gtest.h>

#include <cmath>

#include "pcglm/pcglm_model.hpp"
#include "test_support.hpp"

using namespace pcglm;

namespace {

CategoricalDataset simulate_spec(const PCGLMSpec& spec, int p, int n, std::uint64_t seed) {
    Random rng(seed);
    auto data = CategoricalDataset::with_numeric_columns(spec.J(), p);
    for (int i = 0; i < n; ++i) {
        CovariateRow x;
        x.values.resize(p);
        for (int k = 0; k < p; ++k) x.values[k] = rng.normal();
        const Vector pi = pcglm_predict(spec, x).probs;
        data.rows.push_back({x, static_cast<int>(rng.categorical({pi.data(), static_cast<std::size_t>(pi.size())})), 1.0});
    }
    return data;
}

PCGLMSpec chain_spec(int J, const CdfKind& cdf, int p) {
    auto spec = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(J, p), PartitionTree::binary_chain(J));
    std::vector<std::string> vars;
    for (int k = 0; k < p; ++k) vars.push_back("x" + std::to_string(k + 1));
    for (int id : spec.tree.non_terminal())
        spec.models[id] = NodeModel::glm(RatioKind::Reference, cdf, DesignKind::Complete, vars);
    return spec;
}

} // namespace

TEST(PcglmPredict, ProductAlongPath) {
    auto spec = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(5, 0), PartitionTree::parse("[1,[2,3,4,5]]"));
    spec.models[0] = NodeModel::minimal_response();
    spec.models[0].probs = Vector(2);
    *spec.models[0].probs << 0.6, 0.4;
    const int v = spec.tree.find({1, 2, 3, 4});
    spec.models[v] = NodeModel::minimal_response();
    spec.models[v].probs = Vector::Constant(4, 0.25);
    const auto pi = pcglm_predict(spec, CovariateRow(Vector()));
    EXPECT_NEAR(pi[1], 0.1, 1e-15);
    EXPECT_NEAR(pi[0], 0.6, 1e-15);
    EXPECT_NEAR(pi.probs.sum(), 1.0, 1e-15);
}

TEST(PcglmPredict, InterceptOnlyUniform) {
    auto spec = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(4, 1), PartitionTree::parse("[[1,2],[3,4]]"));
    for (int id : spec.tree.non_terminal()) {
        spec.models[id] = NodeModel::glm(RatioKind::Adjacent, CdfKind::normal(), DesignKind::Complete);
        spec.models[id].beta = Vector::Zero(1);
    }
    const auto pi = pcglm_predict(spec, CovariateRow{2.0});
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(pi[j], 0.25, 1e-15);
}

TEST(PcglmPredict, BinaryChainEqualsSequentialGlm) {
    Random rng(4);
    for (const auto& cdf : {CdfKind::logistic(), CdfKind::gumbel_min(), CdfKind::normal()}) {
        auto spec = chain_spec(4, cdf, 2);
        const GlmSpec seq{RatioKind::Sequential, cdf, DesignSpec::complete({0, 1}), 4};
        Vector beta(9);
        for (int k = 0; k < 9; ++k) beta[k] = rng.normal() * 0.7;
        const auto ids = spec.tree.non_terminal();
        for (int j = 0; j < 3; ++j) {
            Vector b(3);
            b << beta[j], beta[3 + 2 * j], beta[4 + 2 * j];
            spec.models[ids[static_cast<std::size_t>(j)]].beta = b;
        }
        for (int t = 0; t < 50; ++t) {
            const CovariateRow x{rng.normal(), rng.normal()};
            const Vector a = pcglm_predict(spec, x).probs;
            const Vector b = predict_probs(seq, beta, x).probs;
            EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14) << cdf.name();
        }
    }
}

TEST(PcglmPredict, SumsToOneForRandomSpecs) {
    Random rng(6);
    for (int t = 0; t < 200; ++t) {
        const int J = 2 + static_cast<int>(rng.below(7));
        auto spec = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(J, 2), random_tree(rng, J));
        for (int id : spec.tree.non_terminal()) {
            const auto r = kAllRatios[rng.below(3)]; // cumulative needs ordered predictors
            auto m = NodeModel::glm(r, CdfKind(kAllCdfFamilies[rng.below(6)], 0), DesignKind::Proportional, {"x1", "x2"});
            if (m.cdf.family() == CdfFamily::Student) m.cdf = CdfKind::student(3);
            const int cols = spec.tree.child_count(id) - 1 + 2;
            m.beta = Vector(cols);
            for (int k = 0; k < cols; ++k) (*m.beta)[k] = rng.normal();
            spec.models[id] = m;
        }
        const auto pi = pcglm_predict(spec, CovariateRow{rng.normal(), rng.normal()});
        ASSERT_NEAR(pi.probs.sum(), 1.0, 1e-12);
    }
}

TEST(PcglmFit, FlatTreeEqualsPlainGlm) {
    const GlmSpec g{RatioKind::Cumulative, CdfKind::logistic(), DesignSpec::proportional({0}), 4};
    Vector beta(4);
    beta << -1.0, 0.0, 1.0, 0.8;
    const auto data = testing_support::simulate_glm(g, beta, 1, 1500, 3);
    auto spec = PCGLMSpec::for_data(data, PartitionTree::flat(4));
    spec.models[0] = NodeModel::glm(RatioKind::Cumulative, CdfKind::logistic(), DesignKind::Proportional, {"x1"});
    const auto pf = pcglm_fit(spec, data);
    const auto gf = fit(g, data);
    EXPECT_NEAR(pf.log_likelihood, gf.log_likelihood, 1e-10);
    EXPECT_EQ(pf.parameters, 4);
    EXPECT_EQ(pf.equations, 3);
    EXPECT_TRUE(pf.converged);
}

TEST(PcglmFit, LogLikelihoodDecomposes) {
    auto truth = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(5, 1), PartitionTree::parse("[1,[2,3,4],5]"));
    truth.models[0] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x1"});
    truth.models[0].beta = Vector(4);
    *truth.models[0].beta << 0.2, 0.5, 0.4, -0.6;
    const int v = truth.tree.find({1, 2, 3});
    truth.models[v] = NodeModel::glm(RatioKind::Adjacent, CdfKind::normal(), DesignKind::Proportional, {"x1"});
    truth.models[v].beta = Vector(3);
    *truth.models[v].beta << 0.1, -0.2, 0.7;
    const auto data = simulate_spec(truth, 1, 3000, 8);
    const auto res = pcglm_fit(truth, data);
    ASSERT_EQ(res.nodes.size(), 2u);
    EXPECT_NEAR(res.log_likelihood, res.nodes[0].log_likelihood + res.nodes[1].log_likelihood, 1e-10);
    EXPECT_EQ(res.parameters, 7);
    // Per-vertex terms match stand-alone fits on the sub-datasets.
    const auto sub = partition_data(truth.tree, data, v);
    EXPECT_NEAR(res.nodes[1].log_likelihood, fit(truth.node_glm(v), sub).log_likelihood, 1e-10);
    // Predictions sum to the overall log-likelihood.
    const auto fitted = with_parameters(truth, res);
    double ll = 0.0;
    for (const auto& r : data.rows) ll += r.weight * std::log(pcglm_predict(fitted, r.x)[r.response]);
    EXPECT_NEAR(ll, res.log_likelihood, 1e-8);
}

TEST(PcglmFit, ChainFitMatchesSequentialGlm) {
    for (const auto& cdf : {CdfKind::logistic(), CdfKind::gumbel_min()}) {
        const GlmSpec seq{RatioKind::Sequential, cdf, DesignSpec::complete({0, 1}), 4};
        Vector beta(9);
        beta << -0.5, 0.0, 0.4, 0.6, -0.3, 0.2, 0.5, -0.4, 0.3;
        const auto data = testing_support::simulate_glm(seq, beta, 2, 2000, 21);
        const auto pf = pcglm_fit(chain_spec(4, cdf, 2), data);
        FitOptions tight;
        tight.grad_tol = 1e-9;
        const auto gf = fit(seq, data, tight);
        ASSERT_TRUE(gf.converged);
        EXPECT_NEAR(pf.log_likelihood, gf.log_likelihood, 1e-6) << cdf.name();
    }
}

TEST(PcglmFit, SharedSlopeMatchesGridOracle) {
    // Two binary vertices forced to share (alpha, delta).
    auto truth = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(4, 1), PartitionTree::parse("[[1,2],[3,4]]"));
    truth.models[0] = NodeModel::minimal_response();
    truth.models[0].probs = Vector::Constant(2, 0.5);
    for (int id : {1, 4}) {
        truth.models[id] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x1"});
        truth.models[id].beta = Vector(2);
        *truth.models[id].beta << 0.3, -0.9;
        truth.models[id].share_group = 0;
    }
    const auto data = simulate_spec(truth, 1, 120, 17);
    const auto res = pcglm_fit(truth, data);
    ASSERT_TRUE(res.converged);
    EXPECT_EQ(res.parameters, 1 + 2);
    const double delta = res.at(1).result.beta[1];
    EXPECT_EQ(res.at(4).result.beta, res.at(1).result.beta);

    // Oracle: profile likelihood over delta, inner Newton on alpha.
    std::vector<std::pair<double, double>> xy; // (x, first-child indicator)
    for (const auto& r : data.rows)
        if (r.response != 0 && r.response != 2) xy.emplace_back(r.x.values[0], 0.0);
        else xy.emplace_back(r.x.values[0], 1.0);
    const auto profile = [&](double d) {
        double a = 0.0;
        for (int it = 0; it < 50; ++it) {
            double g = 0.0, h = 0.0;
            for (auto [x, y] : xy) {
                const double p = 1.0 / (1.0 + std::exp(-(a + d * x)));
                g += y - p;
                h += p * (1 - p);
            }
            a += g / h;
        }
        double ll = 0.0;
        for (auto [x, y] : xy) {
            const double e = a + d * x;
            ll += y * e - std::log1p(std::exp(e));
        }
        return ll;
    };
    double best = -5.0, best_ll = profile(best);
    for (double d = -5.0; d <= 5.0; d += 0.01) {
        const double ll = profile(d);
        if (ll > best_ll) {
            best = d;
            best_ll = ll;
        }
    }
    double lo = best - 0.01, hi = best + 0.01;
    const double phi = (std::sqrt(5.0) - 1) / 2;
    for (int it = 0; it < 60; ++it) {
        const double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
        if (profile(c) > profile(d)) hi = d;
        else lo = c;
    }
    EXPECT_NEAR(delta, (lo + hi) / 2, 1e-4);
}

TEST(PcglmFit, ParallelAndSerialFitsAreBitIdentical) {
    Random rng(31);
    auto truth = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(6, 2), PartitionTree::parse("[[1,2],[3,[4,5,6]]]"));
    for (int id : truth.tree.non_terminal()) {
        const int m = truth.tree.child_count(id) - 1;
        truth.models[id] = NodeModel::glm(RatioKind::Sequential, CdfKind::normal(), DesignKind::Complete, {"x1", "x2"});
        Vector b(3 * m);
        for (int k = 0; k < 3 * m; ++k) b[k] = 0.4 * rng.normal();
        truth.models[id].beta = b;
    }
    const auto data = simulate_spec(truth, 2, 2500, 5);
    PCGLMFitOptions serial, parallel;
    parallel.threads = 4;
    const auto a = pcglm_fit(truth, data, serial);
    const auto b = pcglm_fit(truth, data, parallel);
    ASSERT_EQ(a.nodes.size(), b.nodes.size());
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
        EXPECT_EQ(a.nodes[i].node, b.nodes[i].node);
        EXPECT_EQ(a.nodes[i].result.beta, b.nodes[i].result.beta);
        EXPECT_EQ(a.nodes[i].log_likelihood, b.nodes[i].log_likelihood);
        // Reverse-order stand-alone fits agree bit for bit as well.
        const int id = a.nodes[a.nodes.size() - 1 - i].node;
        const auto solo = fit(truth.node_glm(id), partition_data(truth.tree, data, id));
        EXPECT_EQ(solo.beta, a.at(id).result.beta);
    }
}

TEST(PcglmFit, DegenerateVertexIsReportedNotFatal) {
    auto data = CategoricalDataset::with_numeric_columns(4, 1);
    Random rng(2);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.normal();
        const int y = rng.uniform() < 0.5 ? 0 : (rng.uniform() < 0.5 ? 1 : 2); // category 4 never observed
        data.rows.push_back({CovariateRow{x}, y, 1.0});
    }
    auto spec = PCGLMSpec::for_data(data, PartitionTree::parse("[1,2,[3,4]]"));
    spec.models[0] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x1"});
    spec.models[3] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x1"});
    const auto res = pcglm_fit(spec, data);
    EXPECT_TRUE(res.at(3).degenerate);
    EXPECT_EQ(res.at(3).log_likelihood, 0.0);
    EXPECT_FALSE(res.diagnostics.empty());
    EXPECT_TRUE(std::isfinite(res.log_likelihood));
}

TEST(PcglmFit, MinimalNodeUsesChildFrequencies) {
    auto data = CategoricalDataset::with_numeric_columns(3, 0);
    data.rows = {{CovariateRow(Vector()), 0, 2}, {CovariateRow(Vector()), 1, 3}, {CovariateRow(Vector()), 2, 5}};
    auto spec = PCGLMSpec::for_data(data, PartitionTree::flat(3));
    spec.models[0] = NodeModel::minimal_response();
    const auto res = pcglm_fit(spec, data);
    EXPECT_NEAR(res.nodes[0].probs[2], 0.5, 1e-15);
    EXPECT_NEAR(res.log_likelihood, 2 * std::log(0.2) + 3 * std::log(0.3) + 5 * std::log(0.5), 1e-12);
    EXPECT_EQ(res.parameters, 2);
}

TEST(ValidateSpec, RejectsInconsistentSpecs) {
    auto data = CategoricalDataset::with_numeric_columns(4, 1);
    auto spec = PCGLMSpec::for_data(data, PartitionTree::parse("[[1,2],3,4]"));
    EXPECT_THROW(validate_spec(spec), SpecError); // missing models
    spec.models[0] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x1"});
    spec.models[1] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x9"});
    EXPECT_THROW(validate_spec(spec), SpecError);
    spec.models[1].variables = {"x1"};
    EXPECT_NO_THROW(validate_spec(spec));
    spec.models[0].share_group = 1;
    spec.models[1].share_group = 1;
    EXPECT_THROW(validate_spec(spec), SpecError); // 3 vs 2 children
    spec.models[0].share_group = spec.models[1].share_group = -1;
    spec.models[0].design = DesignKind::BlockSplit;
    spec.models[0].splits = {3};
    EXPECT_THROW(validate_spec(spec), SpecError);
}

TEST(NestedLogit, LambdaZeroEqualsPcglm) {
    auto truth = PCGLMSpec::for_data(CategoricalDataset::with_numeric_columns(5, 2), PartitionTree::parse("[[1,2],[3,4,5]]"));
    truth.models[0] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x1"});
    truth.models[0].beta = Vector(2);
    *truth.models[0].beta << 0.2, 0.8;
    truth.models[1] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x2"});
    truth.models[1].beta = Vector(2);
    *truth.models[1].beta << -0.3, 0.5;
    truth.models[4] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, {"x2"});
    truth.models[4].beta = Vector(4);
    *truth.models[4].beta << 0.1, 0.3, -0.6, 0.4;
    const auto data = simulate_spec(truth, 2, 3000, 99);

    NestedLogitOptions opt;
    opt.root_columns = {0};
    opt.nest_columns = {{1}, {1}};
    opt.fix_lambda_zero = true;
    const auto nl = nested_logit_fit(truth.tree, data, opt);
    const auto pf = pcglm_fit(truth, data);
    EXPECT_NEAR(nl.fit.log_likelihood, pf.log_likelihood, 1e-8);
    EXPECT_TRUE(std::isnan(nl.lambda[0]));

    opt.fix_lambda_zero = false;
    const auto free = nested_logit_fit(truth.tree, data, opt);
    EXPECT_TRUE(free.fit.nodes.front().converged);
    EXPECT_TRUE(std::isfinite(free.lambda[0]));
    EXPECT_GE(free.fit.log_likelihood, nl.fit.log_likelihood - 1e-8);
    EXPECT_EQ(free.fit.parameters, nl.fit.parameters + 1);
}

TEST(NestedLogit, SingletonNestsDegenerateToMultinomialLogit) {
    const GlmSpec g{RatioKind::Reference, CdfKind::logistic(), DesignSpec::complete({0}), 3};
    Vector beta(4);
    beta << 0.3, -0.2, 0.9, -0.4;
    const auto data = testing_support::simulate_glm(g, beta, 1, 1000, 8);
    NestedLogitOptions opt;
    opt.root_columns = {0};
    const auto nl = nested_logit_fit(PartitionTree::flat(3), data, opt);
    EXPECT_TRUE(nl.lambda_dropped[0]);
    EXPECT_TRUE(nl.lambda_dropped[1]);
    EXPECT_NEAR(nl.fit.log_likelihood, fit(g, data).log_likelihood, 1e-10);
}

TEST(NestedLogit, RequiresDepthTwo) {
    const auto data = CategoricalDataset::with_numeric_columns(4, 0);
    EXPECT_THROW(nested_logit_fit(PartitionTree::binary_chain(4), data, {}), SpecError);
}
