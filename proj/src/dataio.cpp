#include "ovb/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace ovb {

Matrix Dataset::short_rows() const {
    Matrix rows(n(), p() + 1);
    rows.col(0) = treatment;
    if (p() > 0) rows.rightCols(p()) = covariates;
    return rows;
}

std::vector<std::string> Dataset::short_names() const {
    std::vector<std::string> names;
    names.reserve(column_names.size() + 1);
    names.push_back(treatment_name);
    names.insert(names.end(), column_names.begin(), column_names.end());
    return names;
}

bool Dataset::treatment_is_binary() const {
    for (Eigen::Index i = 0; i < treatment.size(); ++i)
        if (treatment[i] != 0.0 && treatment[i] != 1.0) return false;
    return true;
}

void Dataset::validate() const {
    const auto rows = outcome.size();
    if (rows < 2) throw Error("invalid_data", "dataset needs at least 2 rows");
    if (treatment.size() != rows || covariates.rows() != rows)
        throw Error("invalid_data", "dataset columns have different lengths");
    if (static_cast<Eigen::Index>(column_names.size()) != covariates.cols())
        throw Error("invalid_data", "covariate name count does not match columns");
    if (group_label && static_cast<Eigen::Index>(group_label->size()) != rows)
        throw Error("invalid_data", "group label length mismatch");
    if (strata && static_cast<Eigen::Index>(strata->size()) != rows)
        throw Error("invalid_data", "strata length mismatch");
    if (!outcome.allFinite() || !treatment.allFinite() || !covariates.allFinite())
        throw Error("invalid_data", "dataset contains non-finite values");
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
    Dataset out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.outcome.resize(m);
    out.treatment.resize(m);
    out.covariates.resize(m, p());
    for (Eigen::Index k = 0; k < m; ++k) {
        out.outcome[k] = outcome[rows[k]];
        out.treatment[k] = treatment[rows[k]];
        out.covariates.row(k) = covariates.row(rows[k]);
    }
    if (group_label) {
        out.group_label.emplace();
        for (auto r : rows) out.group_label->push_back((*group_label)[r]);
    }
    if (strata) {
        out.strata.emplace();
        for (auto r : rows) out.strata->push_back((*strata)[r]);
    }
    out.column_names = column_names;
    out.outcome_name = outcome_name;
    out.treatment_name = treatment_name;
    return out;
}

Dataset Dataset::without_covariate(Eigen::Index column) const {
    if (column < 0 || column >= p()) throw Error("invalid_input", "covariate index out of range");
    Dataset out = *this;
    out.covariates.resize(n(), p() - 1);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < p(); ++j) {
        if (j == column) continue;
        out.covariates.col(k++) = covariates.col(j);
    }
    out.column_names.erase(out.column_names.begin() + column);
    return out;
}

CsvTable parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(record.size() == 1 && record[0].empty())) records.push_back(record);
        record.clear();
    };
    // Skip UTF-8 BOM.
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_record();
        } else if (c == '\n') {
            end_record();
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) throw Error("csv_parse", "unterminated quoted field");
    if (!field.empty() || !record.empty()) end_record();

    CsvTable table;
    if (records.empty()) throw Error("csv_parse", "CSV has no header row");
    table.header = std::move(records.front());
    table.rows.assign(std::make_move_iterator(records.begin() + 1),
                      std::make_move_iterator(records.end()));
    return table;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& cell) {
    static const char* kMissing[] = {"", "NA", "N/A", "NaN", "nan", "null", "NULL", "."};
    for (const char* m : kMissing)
        if (cell == m) return true;
    return false;
}

std::size_t find_column(const CsvTable& table, const std::string& name) {
    for (std::size_t j = 0; j < table.header.size(); ++j)
        if (trim(table.header[j]) == name) return j;
    throw Error("missing_column", "column '" + name + "' not found in CSV header");
}

double parse_number(const std::string& raw, const std::string& column, std::size_t row) {
    const std::string cell = trim(raw);
    if (is_missing(cell))
        throw Error("missing_value", "missing value in column '" + column + "' at data row " +
                                         std::to_string(row + 1));
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || !std::isfinite(value))
        throw Error("non_numeric", "non-numeric value '" + cell + "' in column '" + column +
                                       "' at data row " + std::to_string(row + 1));
    return value;
}

std::vector<std::int64_t> code_labels(const CsvTable& table, std::size_t col,
                                      const std::string& column) {
    std::unordered_map<std::string, std::int64_t> codes;
    std::vector<std::int64_t> out;
    out.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const std::string cell = trim(table.rows[r][col]);
        if (is_missing(cell))
            throw Error("missing_value", "missing value in column '" + column +
                                             "' at data row " + std::to_string(r + 1));
        auto [it, inserted] = codes.emplace(cell, static_cast<std::int64_t>(codes.size()));
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing_file", "cannot open CSV file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const CsvTable table = parse_csv(buffer.str());
    if (table.rows.empty()) throw Error("empty_data", "CSV file '" + path + "' has no data rows");

    for (std::size_t r = 0; r < table.rows.size(); ++r)
        if (table.rows[r].size() != table.header.size())
            throw Error("csv_parse", "data row " + std::to_string(r + 1) + " has " +
                                         std::to_string(table.rows[r].size()) +
                                         " fields, header has " +
                                         std::to_string(table.header.size()));

    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto p = static_cast<Eigen::Index>(schema.covariates.size());
    const std::size_t y_col = find_column(table, schema.outcome);
    const std::size_t d_col = find_column(table, schema.treatment);
    std::vector<std::size_t> x_cols;
    for (const auto& name : schema.covariates) x_cols.push_back(find_column(table, name));

    Dataset data;
    data.outcome.resize(n);
    data.treatment.resize(n);
    data.covariates.resize(n, p);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = table.rows[static_cast<std::size_t>(r)];
        const auto rr = static_cast<std::size_t>(r);
        data.outcome[r] = parse_number(row[y_col], schema.outcome, rr);
        data.treatment[r] = parse_number(row[d_col], schema.treatment, rr);
        for (Eigen::Index j = 0; j < p; ++j)
            data.covariates(r, j) =
                parse_number(row[x_cols[static_cast<std::size_t>(j)]],
                             schema.covariates[static_cast<std::size_t>(j)], rr);
    }
    if (schema.group)
        data.group_label = code_labels(table, find_column(table, *schema.group), *schema.group);
    if (schema.strata)
        data.strata = code_labels(table, find_column(table, *schema.strata), *schema.strata);
    data.column_names = schema.covariates;
    data.outcome_name = schema.outcome;
    data.treatment_name = schema.treatment;
    data.validate();
    return data;
}

std::vector<Eigen::Index> FoldPlan::test_rows(int fold) const {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i)
        if (assignment[static_cast<std::size_t>(i)] == fold) rows.push_back(i);
    return rows;
}

std::vector<Eigen::Index> FoldPlan::train_rows(int fold) const {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i)
        if (assignment[static_cast<std::size_t>(i)] != fold) rows.push_back(i);
    return rows;
}

std::vector<Eigen::Index> FoldPlan::fold_sizes() const {
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(num_folds), 0);
    for (int a : assignment) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
}

namespace {

// Fisher-Yates with an explicitly specified index draw, so the permutation
// is identical across standard library implementations.
template <typename T>
void shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace

FoldPlan make_fold_plan(Eigen::Index n, int num_folds, std::uint64_t seed,
                        const std::optional<std::vector<std::int64_t>>& groups,
                        const std::optional<std::vector<std::int64_t>>& strata) {
    if (num_folds < 2) throw Error("invalid_folds", "number of folds must be at least 2");
    if (num_folds > n) throw Error("invalid_folds", "number of folds exceeds number of rows");
    if (groups && static_cast<Eigen::Index>(groups->size()) != n)
        throw Error("invalid_folds", "group vector length does not match n");
    if (strata && static_cast<Eigen::Index>(strata->size()) != n)
        throw Error("invalid_folds", "strata vector length does not match n");

    FoldPlan plan;
    plan.n = n;
    plan.num_folds = num_folds;
    plan.seed = seed;
    plan.assignment.assign(static_cast<std::size_t>(n), 0);
    std::mt19937_64 rng(seed);

    // Units are either rows or groups of rows.
    std::vector<std::vector<Eigen::Index>> units;
    if (groups) {
        std::map<std::int64_t, std::size_t> index;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto [it, inserted] = index.emplace((*groups)[static_cast<std::size_t>(i)], units.size());
            if (inserted) units.emplace_back();
            units[it->second].push_back(i);
        }
        if (static_cast<int>(units.size()) < num_folds)
            throw Error("invalid_folds", "fewer distinct groups than folds");
    } else {
        units.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) units[static_cast<std::size_t>(i)] = {i};
    }

    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);

    auto assign = [&](std::size_t unit, int fold) {
        for (auto row : units[unit]) plan.assignment[static_cast<std::size_t>(row)] = fold;
    };

    if (strata) {
        // A unit's stratum is that of its first row.
        std::vector<std::int64_t> unit_stratum(units.size());
        for (std::size_t u = 0; u < units.size(); ++u)
            unit_stratum[u] = (*strata)[static_cast<std::size_t>(units[u].front())];
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return unit_stratum[a] < unit_stratum[b];
        });
        for (std::size_t k = 0; k < order.size(); ++k)
            assign(order[k], static_cast<int>(k % static_cast<std::size_t>(num_folds)));
    } else if (groups) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return units[a].size() > units[b].size();
        });
        std::vector<std::size_t> load(static_cast<std::size_t>(num_folds), 0);
        for (std::size_t u : order) {
            const auto fold = static_cast<int>(
                std::min_element(load.begin(), load.end()) - load.begin());
            load[static_cast<std::size_t>(fold)] += units[u].size();
            assign(u, fold);
        }
    } else {
        for (std::size_t k = 0; k < order.size(); ++k)
            assign(order[k], static_cast<int>(k % static_cast<std::size_t>(num_folds)));
    }
    return plan;
}

}  // namespace ovb
