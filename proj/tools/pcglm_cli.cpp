// pcglm: fit, select, simulate, poset2tree and report.
// Exit codes: 0 success, 1 usage, 2 input or specification error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include "pcglm/io/json_io.hpp"
#include "pcglm/io/report.hpp"
#include "pcglm/io/table.hpp"
#include "pcglm/poset.hpp"
#include "pcglm/random.hpp"
#include "pcglm/selection.hpp"

using namespace pcglm;

namespace {

struct DataFlags {
    std::string path;
    std::string response = "y";
    std::vector<std::string> levels;
    std::vector<std::string> numeric;
    std::vector<std::string> categorical;
    std::vector<std::string> ordinal;
    std::string weight;
    std::string delimiter = ",";
    bool aggregate = false;
    bool standardize = false;

    void add(CLI::App* app, bool required) {
        auto* d = app->add_option("--data", path, "input table (CSV)");
        if (required) d->required();
        app->add_option("--response", response, "response column")->capture_default_str();
        app->add_option("--levels", levels, "response levels in category order")->delimiter(',');
        app->add_option("--numeric", numeric, "numeric covariate columns")->delimiter(',');
        app->add_option("--categorical", categorical, "categorical covariates, NAME or NAME=l1|l2|...")->delimiter(',');
        app->add_option("--ordinal", ordinal, "ordinal covariates, NAME=l1|l2|...")->delimiter(',');
        app->add_option("--weight", weight, "weight column");
        app->add_option("--delimiter", delimiter, "field delimiter")->capture_default_str();
        app->add_flag("--aggregate-duplicates", aggregate, "merge identical covariate/response rows into weights");
        app->add_flag("--standardize", standardize, "center and scale numeric covariates");
    }

    [[nodiscard]] io::TableOptions options(const std::vector<std::string>& default_levels = {}) const {
        io::TableOptions o;
        o.response = response;
        o.response_levels = levels.empty() ? default_levels : levels;
        o.weight = weight;
        if (delimiter == "\\t" || delimiter == "tab") o.delimiter = '\t';
        else if (delimiter.size() == 1) o.delimiter = delimiter[0];
        else throw ParseError("delimiter must be a single character, got '" + delimiter + "'");
        o.aggregate = aggregate;
        o.standardize = standardize;
        const auto decl = [](const std::string& s, io::ColumnKind kind) {
            io::CovariateDecl c;
            c.kind = kind;
            const auto eq = s.find('=');
            c.name = s.substr(0, eq);
            if (eq != std::string::npos) {
                std::stringstream ss(s.substr(eq + 1));
                std::string l;
                while (std::getline(ss, l, '|')) c.levels.push_back(l);
            }
            if (c.name.empty()) throw ParseError("empty covariate name in '" + s + "'");
            if (kind == io::ColumnKind::Ordinal && c.levels.empty())
                throw ParseError("ordinal covariate '" + c.name + "' needs declared levels (NAME=l1|l2|...)");
            return c;
        };
        for (const auto& s : numeric) o.covariates.push_back(decl(s, io::ColumnKind::Numeric));
        for (const auto& s : categorical) o.covariates.push_back(decl(s, io::ColumnKind::Categorical));
        for (const auto& s : ordinal) o.covariates.push_back(decl(s, io::ColumnKind::Ordinal));
        return o;
    }
};

struct FitFlags {
    int max_iter = 100;
    double grad_tol = 1e-6;
    int threads = 1;

    void add(CLI::App* app) {
        app->add_option("--max-iter", max_iter, "Fisher scoring iteration limit")->capture_default_str()->check(CLI::PositiveNumber);
        app->add_option("--grad-tol", grad_tol, "score infinity-norm tolerance")->capture_default_str()->check(CLI::PositiveNumber);
        app->add_option("--threads", threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    }
    [[nodiscard]] FitOptions options() const {
        FitOptions o;
        o.max_iter = max_iter;
        o.grad_tol = grad_tol;
        return o;
    }
};

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") std::cout << text;
    else io::write_file(out, text);
}

/// Draws one covariate column: normal(m,s), uniform(a,b) or values(v1|v2|...).
struct ColumnDraw {
    enum Kind { Normal, Uniform, Values } kind = Normal;
    double a = 0.0, b = 1.0;
    std::vector<double> values;

    static ColumnDraw parse(const std::string& s) {
        static const std::regex two(R"(^(normal|uniform)\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$)");
        static const std::regex list(R"(^values\(([^)]*)\)$)");
        std::smatch m;
        ColumnDraw d;
        const auto num = [&](const std::string& t) {
            const auto v = io::detail::to_number(t);
            if (!v) throw ParseError("bad number '" + t + "' in covariate distribution '" + s + "'");
            return *v;
        };
        if (std::regex_match(s, m, two)) {
            d.kind = m[1] == "normal" ? Normal : Uniform;
            d.a = num(m[2]);
            d.b = num(m[3]);
            if (d.kind == Normal && d.b < 0.0) throw ParseError("normal sd must be nonnegative");
        } else if (std::regex_match(s, m, list)) {
            d.kind = Values;
            std::stringstream ss(m[1].str());
            std::string t;
            while (std::getline(ss, t, '|')) d.values.push_back(num(t));
            if (d.values.empty()) throw ParseError("values() needs at least one value");
        } else {
            throw ParseError("unknown covariate distribution '" + s + "' (normal(m,s), uniform(a,b), values(v1|v2|...))");
        }
        return d;
    }

    double draw(Random& rng) const {
        switch (kind) {
        case Normal: return a + b * rng.normal();
        case Uniform: return a + (b - a) * rng.uniform();
        case Values: return values[rng.below(values.size())];
        }
        return 0.0;
    }
};

int run_fit(const std::string& spec_path, const DataFlags& df, const FitFlags& ff, const std::string& out,
            const std::string& report_out) {
    auto spec = io::load_spec(spec_path);
    const auto data = io::load_table(df.path, df.options(spec.categories));
    if (data.categories != spec.J())
        throw SpecError("data has " + std::to_string(data.categories) + " response levels, specification has " +
                        std::to_string(spec.J()));
    spec.categories = data.category_names;
    spec = io::bind_to_data(std::move(spec), data);
    const auto fit = pcglm_fit(spec, data, PCGLMFitOptions{ff.options(), ff.threads});
    emit(report_out, io::fit_report(spec, fit));
    if (!out.empty()) io::write_file(out, io::spec_to_string(with_parameters(spec, fit)));
    if (!std::isfinite(fit.log_likelihood)) throw NumericalError("fit failed at one or more vertices");
    return fit.converged ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pcglm: partitioned conditional generalized linear models"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit a specification to data");
    std::string fit_spec, fit_out, fit_report_out;
    DataFlags fit_data;
    FitFlags fit_flags;
    fit_cmd->add_option("--spec", fit_spec, "specification JSON")->required();
    fit_data.add(fit_cmd, true);
    fit_flags.add(fit_cmd);
    fit_cmd->add_option("--out", fit_out, "write the fitted specification here");
    fit_cmd->add_option("--report", fit_report_out, "write the report here instead of stdout");

    // select
    auto* sel_cmd = app.add_subcommand("select", "grow a partition tree over ordered categories");
    DataFlags sel_data;
    FitFlags sel_flags;
    double alpha = 0.05;
    std::string criterion = "bic", bic_n = "node", sel_ratio = "cumulative", sel_cdf = "logistic", sel_design = "proportional";
    int sel_df = 1;
    std::uint64_t sel_seed = 0;
    bool no_refine = false;
    std::vector<std::string> sel_vars;
    std::string sel_out, sel_trace, sel_report_out;
    sel_data.add(sel_cmd, true);
    sel_flags.add(sel_cmd);
    sel_cmd->add_option("--alpha", alpha, "deviance test level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    sel_cmd->add_option("--criterion", criterion, "covariate selection criterion")->capture_default_str()->check(CLI::IsMember({"bic", "loglik"}));
    sel_cmd->add_option("--bic-n", bic_n, "BIC sample size")->capture_default_str()->check(CLI::IsMember({"node", "global"}));
    sel_cmd->add_option("--ratio", sel_ratio, "vertex ratio")->capture_default_str()->check(CLI::IsMember({"reference", "adjacent", "sequential", "cumulative"}));
    sel_cmd->add_option("--cdf", sel_cdf, "vertex cdf")->capture_default_str()->check(CLI::IsMember({"logistic", "normal", "laplace", "student", "gumbel_min", "gumbel_max"}));
    sel_cmd->add_option("--df", sel_df, "student degrees of freedom")->capture_default_str()->check(CLI::PositiveNumber);
    sel_cmd->add_option("--design", sel_design, "vertex design")->capture_default_str()->check(CLI::IsMember({"complete", "proportional"}));
    sel_cmd->add_option("--variables", sel_vars, "candidate covariates (default: all)")->delimiter(',');
    sel_cmd->add_option("--seed", sel_seed, "accepted for uniformity; selection draws no random numbers");
    sel_cmd->add_flag("--no-refine", no_refine, "skip the cdf refinement pass");
    sel_cmd->add_option("--out", sel_out, "write the selected fitted specification here");
    sel_cmd->add_option("--trace", sel_trace, "write the selection trace (JSON lines) here");
    sel_cmd->add_option("--report", sel_report_out, "write the report here instead of stdout");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "draw responses from a specification with parameters");
    std::string sim_spec, sim_out, sim_response = "y";
    long long sim_n = 0;
    std::uint64_t sim_seed = 1;
    std::vector<std::string> sim_covs;
    sim_cmd->add_option("--spec", sim_spec, "specification JSON with parameters")->required();
    sim_cmd->add_option("--n", sim_n, "number of rows")->required()->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim_seed, "generator seed")->capture_default_str();
    sim_cmd->add_option("--covariate", sim_covs, "COLUMN=normal(m,s)|uniform(a,b)|values(v1|v2|...); default normal(0,1)");
    sim_cmd->add_option("--response-name", sim_response, "response column name")->capture_default_str();
    sim_cmd->add_option("--out", sim_out, "output CSV (default stdout)");

    // poset2tree
    auto* pt_cmd = app.add_subcommand("poset2tree", "build a specification skeleton from a Hasse diagram");
    std::string pt_hasse, pt_out, pt_ratio = "cumulative", pt_dot;
    std::vector<std::string> pt_vars;
    pt_cmd->add_option("--hasse", pt_hasse, "Hasse diagram JSON {elements, covers}")->required();
    pt_cmd->add_option("--ordered-ratio", pt_ratio, "ratio for vertices with ordered children")->capture_default_str()->check(CLI::IsMember({"cumulative", "sequential", "adjacent"}));
    pt_cmd->add_option("--variables", pt_vars, "numeric covariates attached to every vertex")->delimiter(',');
    pt_cmd->add_option("--out", pt_out, "output specification (default stdout)");
    pt_cmd->add_option("--dot", pt_dot, "also write the Hasse diagram in DOT format");

    // report
    auto* rep_cmd = app.add_subcommand("report", "summarize a specification with stored parameters");
    std::string rep_spec, rep_out;
    DataFlags rep_data;
    rep_cmd->add_option("--spec", rep_spec, "specification JSON with parameters")->required();
    rep_data.add(rep_cmd, false);
    rep_cmd->add_option("--out", rep_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*fit_cmd) return run_fit(fit_spec, fit_data, fit_flags, fit_out, fit_report_out);

        if (*sel_cmd) {
            const auto data = io::load_table(sel_data.path, sel_data.options());
            ExtendedOptions opt;
            const auto cdf_fam = parse_cdf_family(sel_cdf);
            opt.base = NodeModel::glm(parse_ratio(sel_ratio),
                                      cdf_fam == CdfFamily::Student ? CdfKind::student(sel_df) : CdfKind(cdf_fam),
                                      parse_design_kind(sel_design));
            opt.selection.alpha = alpha;
            opt.selection.criterion = criterion == "bic" ? Criterion::Bic : Criterion::Loglik;
            opt.selection.bic_n = bic_n == "node" ? BicSampleSize::Node : BicSampleSize::Global;
            opt.selection.threads = sel_flags.threads;
            opt.selection.fit = sel_flags.options();
            opt.candidates = sel_vars;
            opt.refine = !no_refine;
            const auto res = extended_procedure(data, opt);
            std::string text = io::fit_report(res.spec, res.fit, "select");
            text += "\npre-refinement log-likelihood: " + io::fixed6(res.pre_refinement_log_likelihood) + "\n";
            emit(sel_report_out, text);
            if (!sel_trace.empty()) io::write_file(sel_trace, res.trace.to_json_lines());
            if (!sel_out.empty()) io::write_file(sel_out, io::spec_to_string(with_parameters(res.spec, res.fit)));
            if (!std::isfinite(res.fit.log_likelihood)) throw NumericalError("final fit failed");
            return 0;
        }

        if (*sim_cmd) {
            const auto spec = io::load_spec(sim_spec);
            validate_spec(spec);
            std::vector<ColumnDraw> draws(spec.columns.size(), ColumnDraw{});
            std::vector<bool> explicit_draw(spec.columns.size(), false);
            for (const auto& c : sim_covs) {
                const auto eq = c.find('=');
                if (eq == std::string::npos) throw ParseError("--covariate expects COLUMN=distribution, got '" + c + "'");
                const auto it = std::find(spec.columns.begin(), spec.columns.end(), c.substr(0, eq));
                if (it == spec.columns.end()) throw ParseError("--covariate names unknown column '" + c.substr(0, eq) + "'");
                const auto k = static_cast<std::size_t>(it - spec.columns.begin());
                draws[k] = ColumnDraw::parse(c.substr(eq + 1));
                explicit_draw[k] = true;
            }
            Random rng(sim_seed);
            CategoricalDataset d;
            d.categories = spec.J();
            d.category_names = spec.categories;
            d.column_names = spec.columns;
            d.variables = spec.variables;
            for (long long i = 0; i < sim_n; ++i) {
                CovariateRow x;
                x.values = Vector::Zero(static_cast<Eigen::Index>(spec.columns.size()));
                for (const auto& v : spec.variables) {
                    if (v.columns.size() > 1 && std::none_of(v.columns.begin(), v.columns.end(),
                                                             [&](int c) { return explicit_draw[static_cast<std::size_t>(c)]; })) {
                        // Dummy-coded factor: uniform level, baseline included.
                        const auto l = rng.below(v.columns.size() + 1);
                        if (l > 0) x.values[v.columns[l - 1]] = 1.0;
                        continue;
                    }
                    for (int c : v.columns) x.values[c] = draws[static_cast<std::size_t>(c)].draw(rng);
                }
                d.rows.push_back({x, pcglm_draw(spec, x, rng), 1.0});
            }
            const std::string header = std::string("# pcglm-simulate rng=") + Random::kAlgorithm +
                                       " seed=" + std::to_string(sim_seed) + " n=" + std::to_string(sim_n);
            emit(sim_out, io::dataset_to_csv(d, sim_response, header));
            return 0;
        }

        if (*pt_cmd) {
            const auto h = io::hasse_from_json(io::parse_json(io::read_file(pt_hasse), "Hasse diagram"));
            const auto pt = poset_to_tree(h);
            const auto spec = io::poset_skeleton(pt, parse_ratio(pt_ratio), pt_vars);
            emit(pt_out, io::spec_to_string(spec));
            if (!pt_dot.empty()) io::write_file(pt_dot, h.to_dot());
            return 0;
        }

        if (*rep_cmd) {
            auto spec = io::load_spec(rep_spec);
            if (rep_data.path.empty()) {
                validate_spec(spec);
                emit(rep_out, io::parameter_report(spec));
            } else {
                const auto data = io::load_table(rep_data.path, rep_data.options(spec.categories));
                spec = io::bind_to_data(std::move(spec), data);
                validate_spec(spec);
                emit(rep_out, io::parameter_report(spec, &data));
            }
            return 0;
        }
    } catch (const ParseError& e) {
        std::cerr << "pcglm: input error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "pcglm: numerical error: " << e.what() << "\n";
        return 3;
    } catch (const DomainError& e) {
        std::cerr << "pcglm: numerical error: " << e.what() << "\n";
        return 3;
    } catch (const SpecError& e) {
        std::cerr << "pcglm: specification error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "pcglm: error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
