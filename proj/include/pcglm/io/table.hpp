#pragma once

// Delimited text tables (RFC 4180 quoting): loading into a weighted
// categorical dataset and writing simulated data.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcglm/dataset.hpp"
#include "pcglm/errors.hpp"
#include "pcglm/io/json_io.hpp"

namespace pcglm::io {

struct CsvRecord {
    std::vector<std::string> fields;
    int line = 0; ///< 1-based line where the record starts
};

/// Splits `text` into records. Quoted fields may contain delimiters,
/// doubled quotes and line breaks; CRLF and LF endings are accepted. Lines
/// starting with '#' before the header are skipped.
inline std::vector<CsvRecord> parse_csv(const std::string& text, char delimiter = ',') {
    if (delimiter == '"' || delimiter == '\n' || delimiter == '\r')
        throw ParseError(std::string("invalid delimiter '") + delimiter + "'");
    std::vector<CsvRecord> out;
    std::size_t i = 0;
    int line = 1;
    const std::size_t n = text.size();
    if (n >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
    while (i < n) {
        if (out.empty() && text[i] == '#') {
            while (i < n && text[i] != '\n') ++i;
            ++i;
            ++line;
            continue;
        }
        CsvRecord rec;
        rec.line = line;
        std::string field;
        bool done = false;
        while (!done) {
            field.clear();
            if (i < n && text[i] == '"') {
                const int start_line = line;
                ++i;
                for (;;) {
                    if (i >= n) throw ParseError("line " + std::to_string(start_line) + ": unterminated quoted field");
                    if (text[i] == '"') {
                        if (i + 1 < n && text[i + 1] == '"') {
                            field += '"';
                            i += 2;
                            continue;
                        }
                        ++i;
                        break;
                    }
                    if (text[i] == '\n') ++line;
                    field += text[i++];
                }
                if (i < n && text[i] != delimiter && text[i] != '\n' && text[i] != '\r')
                    throw ParseError("line " + std::to_string(line) + ": characters after closing quote");
            } else {
                while (i < n && text[i] != delimiter && text[i] != '\n' && text[i] != '\r') {
                    if (text[i] == '"') throw ParseError("line " + std::to_string(line) + ": stray quote in unquoted field");
                    field += text[i++];
                }
            }
            rec.fields.push_back(field);
            if (i < n && text[i] == delimiter) {
                ++i;
                continue;
            }
            if (i < n && text[i] == '\r') ++i;
            if (i < n && text[i] == '\n') ++i;
            ++line;
            done = true;
        }
        if (rec.fields.size() == 1 && rec.fields[0].empty()) continue; // blank line
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::string csv_quote(const std::string& s, char delimiter = ',') {
    if (s.find_first_of(std::string("\"\r\n") + delimiter) == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

enum class ColumnKind { Numeric, Categorical, Ordinal };

struct CovariateDecl {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::vector<std::string> levels; ///< empty: levels found in the data
};

struct TableOptions {
    std::string response;
    std::vector<std::string> response_levels; ///< empty: levels found in the data
    std::vector<CovariateDecl> covariates;
    std::string weight;
    char delimiter = ',';
    bool aggregate = false;
    bool standardize = false;
};

namespace detail {

inline std::optional<double> to_number(const std::string& s) {
    std::string t = s;
    while (!t.empty() && (t.back() == ' ' || t.back() == '\t')) t.pop_back();
    std::size_t b = 0;
    while (b < t.size() && (t[b] == ' ' || t[b] == '\t')) ++b;
    t = t.substr(b);
    if (!t.empty() && t[0] == '+') t = t.substr(1);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "."; }

/// Distinct values, numerically ordered when all parse as numbers.
inline std::vector<std::string> sorted_levels(const std::set<std::string>& values) {
    std::vector<std::string> out(values.begin(), values.end());
    const bool numeric = std::all_of(out.begin(), out.end(), [](const std::string& s) { return to_number(s).has_value(); });
    if (numeric)
        std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) { return *to_number(a) < *to_number(b); });
    return out;
}

} // namespace detail

/// Loads a table. The response maps onto categories in level order;
/// categorical covariates are dummy coded against their first level
/// ("x=b" columns), ordinal covariates become level codes 1..L, numeric
/// covariates are copied (optionally standardized).
inline CategoricalDataset load_table_text(const std::string& text, const TableOptions& opt) {
    const auto records = parse_csv(text, opt.delimiter);
    if (records.empty()) throw ParseError("table is empty");
    const auto& header = records.front().fields;
    const auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw ParseError("column '" + name + "' not found in the header (delimiter '" + std::string(1, opt.delimiter) + "')");
        return static_cast<std::size_t>(it - header.begin());
    };
    if (opt.response.empty()) throw ParseError("no response column given");
    const std::size_t ycol = column(opt.response);
    std::vector<std::size_t> xcols;
    for (const auto& c : opt.covariates) xcols.push_back(column(c.name));
    const std::optional<std::size_t> wcol = opt.weight.empty() ? std::nullopt : std::optional(column(opt.weight));

    const auto cell = [&](const CsvRecord& r, std::size_t c, const std::string& name) -> const std::string& {
        if (r.fields.size() != header.size())
            throw ParseError("line " + std::to_string(r.line) + ": expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(r.fields.size()));
        const auto& v = r.fields[c];
        if (detail::is_missing(v))
            throw ParseError("line " + std::to_string(r.line) + ", column '" + name + "': missing value");
        return v;
    };

    // Levels.
    std::vector<std::string> ylevels = opt.response_levels;
    std::vector<std::vector<std::string>> xlevels(opt.covariates.size());
    {
        std::set<std::string> yseen;
        std::vector<std::set<std::string>> xseen(opt.covariates.size());
        for (std::size_t r = 1; r < records.size(); ++r) {
            yseen.insert(cell(records[r], ycol, opt.response));
            for (std::size_t k = 0; k < xcols.size(); ++k)
                if (opt.covariates[k].kind != ColumnKind::Numeric)
                    xseen[k].insert(cell(records[r], xcols[k], opt.covariates[k].name));
        }
        if (ylevels.empty()) ylevels = detail::sorted_levels(yseen);
        for (std::size_t k = 0; k < xcols.size(); ++k) {
            xlevels[k] = opt.covariates[k].levels.empty() ? detail::sorted_levels(xseen[k]) : opt.covariates[k].levels;
            if (opt.covariates[k].kind != ColumnKind::Numeric && xlevels[k].size() < 2 &&
                opt.covariates[k].kind == ColumnKind::Categorical)
                throw ParseError("categorical column '" + opt.covariates[k].name + "' needs at least two levels");
        }
    }
    if (std::set<std::string>(ylevels.begin(), ylevels.end()).size() != ylevels.size())
        throw ParseError("response levels contain duplicates");
    if (ylevels.size() < 2) throw ParseError("response needs at least two levels");

    CategoricalDataset d;
    d.categories = static_cast<int>(ylevels.size());
    d.category_names = ylevels;
    for (std::size_t k = 0; k < opt.covariates.size(); ++k) {
        const auto& c = opt.covariates[k];
        Variable v{c.name, {}};
        if (c.kind == ColumnKind::Categorical) {
            for (std::size_t l = 1; l < xlevels[k].size(); ++l) {
                v.columns.push_back(d.columns());
                d.column_names.push_back(c.name + "=" + xlevels[k][l]);
            }
        } else {
            v.columns.push_back(d.columns());
            d.column_names.push_back(c.name);
        }
        d.variables.push_back(std::move(v));
    }
    const auto level_index = [](const std::vector<std::string>& levels, const std::string& s) {
        auto it = std::find(levels.begin(), levels.end(), s);
        return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
    };
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        Observation o;
        const auto& y = cell(rec, ycol, opt.response);
        o.response = level_index(ylevels, y);
        if (o.response < 0)
            throw ParseError("line " + std::to_string(rec.line) + ": undeclared response level '" + y + "'");
        o.x.values = Vector::Zero(d.columns());
        for (std::size_t k = 0; k < xcols.size(); ++k) {
            const auto& c = opt.covariates[k];
            const auto& s = cell(rec, xcols[k], c.name);
            const int first = d.variables[k].columns.front();
            if (c.kind == ColumnKind::Numeric) {
                const auto v = detail::to_number(s);
                if (!v) throw ParseError("line " + std::to_string(rec.line) + ", column '" + c.name + "': not a number: '" + s + "'");
                o.x.values[first] = *v;
            } else {
                const int l = level_index(xlevels[k], s);
                if (l < 0)
                    throw ParseError("line " + std::to_string(rec.line) + ", column '" + c.name + "': unknown level '" + s + "'");
                if (c.kind == ColumnKind::Ordinal) o.x.values[first] = l + 1;
                else if (l > 0) o.x.values[first + l - 1] = 1.0;
            }
        }
        if (wcol) {
            const auto& s = cell(rec, *wcol, opt.weight);
            const auto w = detail::to_number(s);
            if (!w || *w < 0.0)
                throw ParseError("line " + std::to_string(rec.line) + ": weight must be a nonnegative number, got '" + s + "'");
            o.weight = *w;
        }
        d.rows.push_back(std::move(o));
    }
    if (d.rows.empty()) throw ParseError("table has no data rows");

    if (opt.standardize) {
        for (std::size_t k = 0; k < opt.covariates.size(); ++k) {
            if (opt.covariates[k].kind != ColumnKind::Numeric) continue;
            const int c = d.variables[k].columns.front();
            double sw = 0.0, mean = 0.0;
            for (const auto& r : d.rows) {
                sw += r.weight;
                mean += r.weight * r.x.values[c];
            }
            mean /= sw;
            double var = 0.0;
            for (const auto& r : d.rows) var += r.weight * (r.x.values[c] - mean) * (r.x.values[c] - mean);
            const double sd = std::sqrt(var / sw);
            if (!(sd > 0.0)) throw ParseError("column '" + opt.covariates[k].name + "' is constant and cannot be standardized");
            for (auto& r : d.rows) r.x.values[c] = (r.x.values[c] - mean) / sd;
        }
    }
    if (opt.aggregate) d = d.aggregated();
    return d;
}

inline CategoricalDataset load_table(const std::string& path, const TableOptions& opt) {
    return load_table_text(read_file(path), opt);
}

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

/// Table with one column per dataset column, the response as category
/// name, and a weight column when any weight differs from 1.
inline std::string dataset_to_csv(const CategoricalDataset& d, const std::string& response = "y",
                                  const std::string& preamble = "") {
    std::ostringstream os;
    if (!preamble.empty()) os << preamble << "\n";
    const bool weighted = std::any_of(d.rows.begin(), d.rows.end(), [](const Observation& o) { return o.weight != 1.0; });
    for (const auto& c : d.column_names) os << csv_quote(c) << ",";
    os << csv_quote(response);
    if (weighted) os << ",weight";
    os << "\n";
    for (const auto& r : d.rows) {
        for (Eigen::Index k = 0; k < r.x.values.size(); ++k) os << format_double(r.x.values[k]) << ",";
        os << csv_quote(d.category_names.empty() ? std::to_string(r.response + 1)
                                                 : d.category_names[static_cast<std::size_t>(r.response)]);
        if (weighted) os << "," << format_double(r.weight);
        os << "\n";
    }
    return os.str();
}

} // namespace pcglm::io
