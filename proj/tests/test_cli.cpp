#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <regex>

#include "pcglm/io/json_io.hpp"
#include "pcglm/io/table.hpp"

using namespace pcglm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("pcglm_cli_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    [[nodiscard]] std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write(const std::string& name, const std::string& text) const { io::write_file(path(name), text); }

    [[nodiscard]] RunResult run(const std::string& args) const {
        const std::string out = path("stdout.txt"), err = path("stderr.txt");
        const std::string cmd = std::string(PCGLM_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = io::read_file(out);
        r.err = io::read_file(err);
        return r;
    }

    /// (reference, logistic, complete) over three categories with one covariate.
    void write_truth(const std::string& name) const {
        write(name, R"({
  "categories": ["a", "b", "c"],
  "covariates": [{"name": "x"}],
  "tree": ["a", "b", "c"],
  "nodes": [{"vertex": ["a", "b", "c"], "ratio": "reference", "cdf": "logistic", "design": "complete",
             "variables": ["x"], "beta": [0.4, -0.3, 1.0, -0.8]}]
})");
    }

    fs::path dir_;
};

/// term -> (estimate, standard error) from a fit report.
std::map<std::string, std::pair<double, double>> estimates(const std::string& report) {
    std::map<std::string, std::pair<double, double>> out;
    static const std::regex row(R"(^  (\S+)\s+(\S+)\s+(\S+)$)");
    std::istringstream in(report);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_match(line, m, row) && m[1] != "term") out[m[1]] = {std::stod(m[2]), std::stod(m[3])};
    }
    return out;
}

double report_loglik(const std::string& report) {
    static const std::regex re(R"(\nlog-likelihood: (\S+)\n)");
    std::smatch m;
    if (!std::regex_search(report, m, re)) return std::nan("");
    return std::stod(m[1]);
}

} // namespace

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run("").exit_code, 1);
    EXPECT_EQ(run("frobnicate").exit_code, 1);
    EXPECT_EQ(run("fit --data x.csv").exit_code, 1);
    EXPECT_EQ(run("select --data x.csv --criterion aic").exit_code, 1);
    EXPECT_EQ(run("--help").exit_code, 0);
}

TEST_F(Cli, MissingFileIsInputError) {
    write_truth("truth.json");
    const auto r = run("fit --spec " + path("truth.json") + " --data " + path("nope.csv") + " --numeric x");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("cannot open"), std::string::npos);
}

TEST_F(Cli, Poset2TreeChainGivesSequentialSkeleton) {
    write("chain.json", R"({"elements":["lo","mid","hi"],"covers":[["lo","mid"],["mid","hi"]]})");
    const auto r = run("poset2tree --hasse " + path("chain.json") + " --ordered-ratio sequential --variables x");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto spec = io::spec_from_string(r.out);
    EXPECT_EQ(spec.tree.to_string(), "[1,2,3]");
    EXPECT_EQ(spec.model(0).ratio, RatioKind::Sequential);
    EXPECT_EQ(spec.model(0).variables, std::vector<std::string>{"x"});
    EXPECT_EQ(spec.categories, (std::vector<std::string>{"lo", "mid", "hi"}));
}

TEST_F(Cli, FitRejectsInvalidTree) {
    write("bad.json", R"({"categories":["a","b","c"],"tree":[["a","b"],["b","c"]],"nodes":[]})");
    write("d.csv", "x,y\n1,a\n2,b\n3,c\n");
    const auto r = run("fit --spec " + path("bad.json") + " --data " + path("d.csv") + " --numeric x");
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("invalid tree"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("partition"), std::string::npos) << r.err;
}

TEST_F(Cli, SimulateIsDeterministic) {
    write_truth("truth.json");
    const std::string args = "simulate --spec " + path("truth.json") + " --n 500 --seed 42";
    const auto a = run(args), b = run(args), c = run("simulate --spec " + path("truth.json") + " --n 500 --seed 43");
    ASSERT_EQ(a.exit_code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_NE(a.out, c.out);
    EXPECT_EQ(a.out.substr(0, a.out.find('\n')), "# pcglm-simulate rng=mt19937_64/u53/box-muller seed=42 n=500");
}

TEST_F(Cli, SimulateThenFitRecoversTruth) {
    write_truth("truth.json");
    ASSERT_EQ(run("simulate --spec " + path("truth.json") + " --n 20000 --seed 11 --out " + path("sim.csv")).exit_code, 0);
    const auto fit = run("fit --spec " + path("truth.json") + " --data " + path("sim.csv") + " --numeric x --out " + path("fitted.json"));
    ASSERT_EQ(fit.exit_code, 0) << fit.err;
    const auto est = estimates(fit.out);
    const std::map<std::string, double> truth = {{"alpha_1", 0.4}, {"alpha_2", -0.3}, {"x:1", 1.0}, {"x:2", -0.8}};
    for (const auto& [term, value] : truth) {
        ASSERT_TRUE(est.count(term)) << term;
        EXPECT_LT(std::abs(est.at(term).first - value), 3.0 * est.at(term).second) << term;
    }
    // Maximum likelihood is at least the likelihood of the generating parameters.
    const auto at_truth = run("report --spec " + path("truth.json") + " --data " + path("sim.csv") + " --numeric x");
    ASSERT_EQ(at_truth.exit_code, 0) << at_truth.err;
    EXPECT_GE(report_loglik(fit.out), report_loglik(at_truth.out) - 1e-6);
    // The fitted specification reproduces the fitted log-likelihood.
    const auto refit = run("report --spec " + path("fitted.json") + " --data " + path("sim.csv") + " --numeric x");
    EXPECT_NEAR(report_loglik(refit.out), report_loglik(fit.out), 2e-6);
}

TEST_F(Cli, SimulationFrequenciesMatchModel) {
    write_truth("truth.json");
    const int n = 1000000;
    ASSERT_EQ(run("simulate --spec " + path("truth.json") + " --n " + std::to_string(n) +
                  " --seed 5 --covariate 'x=values(0.7)' --out " + path("sim.csv"))
                  .exit_code,
              0);
    io::TableOptions o;
    o.response = "y";
    o.response_levels = {"a", "b", "c"};
    o.covariates = {{"x", io::ColumnKind::Numeric, {}}};
    const auto d = io::load_table(path("sim.csv"), o);
    const auto counts = d.response_counts();
    const auto spec = io::load_spec(path("truth.json"));
    const Vector pi = pcglm_predict(spec, CovariateRow{0.7}).probs;
    for (int j = 0; j < 3; ++j) {
        const double freq = counts[static_cast<std::size_t>(j)] / n;
        EXPECT_LT(std::abs(freq - pi[j]), 3.0 * std::sqrt(pi[j] * (1 - pi[j]) / n)) << j;
    }
}

TEST_F(Cli, SelectTraceIsByteIdentical) {
    write_truth("truth.json");
    ASSERT_EQ(run("simulate --spec " + path("truth.json") + " --n 2000 --seed 3 --out " + path("sim.csv")).exit_code, 0);
    const std::string base = "select --data " + path("sim.csv") + " --numeric x --levels a,b,c --seed 9 --threads 3";
    const auto a = run(base + " --trace " + path("t1.jsonl") + " --out " + path("s1.json"));
    const auto b = run(base + " --trace " + path("t2.jsonl") + " --out " + path("s2.json"));
    ASSERT_EQ(a.exit_code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(io::read_file(path("t1.jsonl")), io::read_file(path("t2.jsonl")));
    EXPECT_EQ(io::read_file(path("s1.json")), io::read_file(path("s2.json")));
    EXPECT_FALSE(io::read_file(path("t1.jsonl")).empty());
}

TEST_F(Cli, SeparatedDataIsNumericalFailure) {
    write_truth("truth.json");
    std::string csv = "x,y\n";
    for (int i = 0; i < 30; ++i) csv += std::to_string(i) + "," + (i < 10 ? "a" : i < 20 ? "b" : "c") + "\n";
    write("sep.csv", csv);
    const auto r = run("fit --spec " + path("truth.json") + " --data " + path("sep.csv") + " --numeric x --max-iter 50");
    EXPECT_EQ(r.exit_code, 3) << r.out << r.err;
}
